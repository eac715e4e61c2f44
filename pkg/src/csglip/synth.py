"""Trajectory synthesis from trained checkpoints, FAP export and plotting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import EMOTIONS, EmotionLabel
from .nets.checkpoint import Checkpoint
from .numcore import gaussian, make_rng
from .sequences import FRAME_RATE, MOTION_CHANNELS, FeatureSequence, MotionSequence, write_sequence_csv

WINDOW = 71
WINDOW_HOP = 35


class SynthesisError(ValueError):
    pass


@dataclass
class SynthesisRequest:
    model: Checkpoint
    features: FeatureSequence
    noise_seed: int = 0
    emotion: object = None  # 6-vector, or an emotion name for a one-hot target
    mode: str = "full"  # "full" or "windowed"


def _emotion_vector(model: Checkpoint, emotion):
    if not model.emotion_aware:
        if emotion is not None:
            raise SynthesisError(f"model {model.kind!r} is not emotion-aware; do not pass an emotion")
        return None
    if emotion is None:
        raise SynthesisError("emotion-aware model needs an emotion vector")
    if isinstance(emotion, str):
        return EmotionLabel.one_hot(emotion).soft
    e = np.asarray(emotion, dtype=float).reshape(-1)
    if e.size != len(EMOTIONS) or np.any(e < 0) or abs(e.sum() - 1) > 1e-6:
        raise SynthesisError("emotion must be a 6-vector on the probability simplex")
    return e


def crossfade_weights(L: int, overlap: int) -> np.ndarray:
    """Linear ramps of ``overlap`` frames at both ends of an ``L``-frame window."""
    t = np.arange(L)
    ramp = overlap + 1.0
    return np.minimum(1.0, np.minimum((t + 1) / ramp, (L - t) / ramp))


def window_starts(T: int, L: int = WINDOW, hop: int = WINDOW_HOP) -> list[int]:
    starts = list(range(0, max(T - L, 0) + 1, hop))
    if starts[-1] + L < T:
        starts.append(T - L)
    return starts


def synthesize(req: SynthesisRequest) -> MotionSequence:
    """Generate a trajectory with the same number of frames as the input features.

    ``full`` runs the recurrent generator over the whole utterance at once;
    ``windowed`` runs it on 71-frame windows every 35 frames and blends the
    36-frame overlaps with linear crossfades. One noise vector is drawn from
    ``noise_seed`` and shared by every frame and window.
    """
    ck = req.model
    if abs(req.features.frame_rate - FRAME_RATE) > 1e-9:
        raise SynthesisError(f"features must be at {FRAME_RATE:g} fps")
    if ck.kind == "swdnn":
        return swdnn_infer(ck, req.features)
    G = ck.generator
    e = _emotion_vector(ck, req.emotion)
    x = ck.normalizer.x(req.features.frames) if ck.normalizer is not None else req.features.frames
    T = x.shape[0]
    z = gaussian(make_rng(req.noise_seed, "synthesis-noise"), (1, G.noise_dim)) if G.noise_dim else None
    E = e[None] if e is not None else None
    if req.mode == "full" or T <= WINDOW:
        out, _ = G.forward(x[None], z, E)
        y = out[0]
    elif req.mode == "windowed":
        starts = window_starts(T)
        wins = np.stack([x[s:s + WINDOW] for s in starts])
        n = len(starts)
        out, _ = G.forward(wins, None if z is None else np.repeat(z, n, 0),
                           None if E is None else np.repeat(E, n, 0))
        w = crossfade_weights(WINDOW, WINDOW - WINDOW_HOP)
        acc = np.zeros((T, out.shape[-1]))
        wsum = np.zeros(T)
        for s, o in zip(starts, out):
            acc[s:s + WINDOW] += w[:, None] * o
            wsum[s:s + WINDOW] += w
        y = acc / wsum[:, None]
    else:
        raise SynthesisError(f"unknown synthesis mode {req.mode!r}")
    if ck.normalizer is not None:
        y = ck.normalizer.y_inverse(y)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("synthesis produced non-finite values")
    return MotionSequence(y, FRAME_RATE, MOTION_CHANNELS)


def swdnn_infer(model, features: FeatureSequence, batch: int = 512) -> MotionSequence:
    """Slide the 41-frame input window one frame at a time and average overlapping outputs.

    ``model`` is an SWDNN checkpoint (features and outputs are normalized
    through it) or a bare ``SwdnnNet``. Feature edges are padded by
    replicating the first and last frames; each output frame is the mean of
    every 13-frame prediction that covers it.
    """
    if isinstance(model, Checkpoint):
        net, norm = model.generator, model.normalizer
    else:
        net, norm = model, None
    x = features.frames if hasattr(features, "frames") else np.asarray(features, dtype=float)
    T = x.shape[0]
    n_in, n_out = net.in_frames, net.out_frames
    if T < n_in:
        raise SynthesisError(f"SWDNN inference needs at least {n_in} frames, got {T}")
    if norm is not None:
        x = norm.x(x)
    half_in, half_out = n_in // 2, n_out // 2
    xp = np.concatenate([np.repeat(x[:1], half_in, 0), x, np.repeat(x[-1:], half_in, 0)])
    acc = np.zeros((T, net.out_dim))
    count = np.zeros(T)
    for a in range(0, T, batch):
        centers = np.arange(a, min(T, a + batch))
        wins = np.stack([xp[c:c + n_in] for c in centers])
        out = net.forward(wins, train=False)[0]
        for c, o in zip(centers, out):
            lo, hi = c - half_out, c + half_out + 1
            s, e = max(lo, 0), min(hi, T)
            acc[s:e] += o[s - lo:e - lo]
            count[s:e] += 1
    y = acc / count[:, None]
    if norm is not None:
        y = norm.y_inverse(y)
    return MotionSequence(y, FRAME_RATE, MOTION_CHANNELS)


# ---------------------------------------------------------------- FAP export


@dataclass
class FapMapping:
    """Linear marker-to-FAP map.

    ``ranges[j] = (min, max)`` is the span of channel ``j`` as displacement
    from ``neutral_pose``; ``table`` lists ``(channel, fap_name, fap_min,
    fap_max)`` for every mapped channel.
    """

    neutral_pose: np.ndarray
    ranges: np.ndarray
    table: list = field(default_factory=list)

    def __post_init__(self):
        self.neutral_pose = np.asarray(self.neutral_pose, dtype=float).reshape(-1)
        self.ranges = np.asarray(self.ranges, dtype=float).reshape(-1, 2)
        if self.neutral_pose.size != len(MOTION_CHANNELS) or self.ranges.shape[0] != len(MOTION_CHANNELS):
            raise ValueError("mapping needs a 45-D neutral pose and 45 ranges")
        self.table = [(int(c), str(n), float(a), float(b)) for c, n, a, b in self.table]
        for c, name, _, _ in self.table:
            lo, hi = self.ranges[c]
            if not hi > lo:
                raise ValueError(f"degenerate range for mapped channel {c} ({name})")

    @classmethod
    def from_motion(cls, frames, channels=None, fap_range=(-1000.0, 1000.0), pct: float = 1.0):
        """Neutral pose = channel median; symmetric ranges from the extreme percentiles."""
        X = np.asarray(frames, dtype=float)
        neutral = np.median(X, axis=0)
        dev = np.abs(X - neutral)
        half = np.maximum(np.percentile(dev, 100 - pct, axis=0), 1e-9)
        channels = range(X.shape[1]) if channels is None else channels
        table = [(c, f"fap_{MOTION_CHANNELS[c]}", fap_range[0], fap_range[1]) for c in channels]
        return cls(neutral, np.stack([-half, half], axis=1), table)

    def to_dict(self) -> dict:
        return {"neutral_pose": self.neutral_pose.tolist(), "ranges": self.ranges.tolist(),
                "table": [list(t) for t in self.table]}

    @classmethod
    def from_dict(cls, d: dict) -> "FapMapping":
        return cls(d["neutral_pose"], d["ranges"], [tuple(t) for t in d["table"]])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def _select(self, channels):
        if channels is None:
            return self.table
        by_channel = {t[0]: t for t in self.table}
        missing = [c for c in channels if c not in by_channel]
        if missing:
            raise ValueError(f"channels {missing} have no FAP assignment")
        return [by_channel[c] for c in channels]

    def to_fap(self, frames, channels=None) -> np.ndarray:
        rows = self._select(channels)
        X = np.asarray(frames, dtype=float)
        out = np.empty((X.shape[0], len(rows)))
        for k, (c, _, fmin, fmax) in enumerate(rows):
            lo, hi = self.ranges[c]
            d = X[:, c] - self.neutral_pose[c]
            out[:, k] = fmin + (d - lo) / (hi - lo) * (fmax - fmin)
        return out

    def from_fap(self, faps, channels=None, fill=None) -> np.ndarray:
        """Invert ``to_fap``; unmapped channels take the neutral pose (or ``fill``)."""
        rows = self._select(channels)
        F = np.asarray(faps, dtype=float)
        X = np.tile(self.neutral_pose if fill is None else fill, (F.shape[0], 1)).astype(float)
        for k, (c, _, fmin, fmax) in enumerate(rows):
            lo, hi = self.ranges[c]
            X[:, c] = self.neutral_pose[c] + lo + (F[:, k] - fmin) / (fmax - fmin) * (hi - lo)
        return X


def export_motion(seq: MotionSequence, path, format: str = "csv", mapping: FapMapping | None = None,
                  channels=None) -> Path:
    """Write a trajectory as motion CSV or as a FAP text stream.

    The FAP stream has a ``#fps=<rate>,faps=<names>`` header and one line of
    mapped values per frame.
    """
    path = Path(path)
    if format == "csv":
        return write_sequence_csv(seq, path)
    if format != "fap":
        raise ValueError(f"unknown export format {format!r}")
    if mapping is None:
        raise ValueError("FAP export needs a FapMapping")
    rows = mapping._select(channels)
    vals = mapping.to_fap(seq.frames, channels)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"#fps={seq.frame_rate:g},faps=" + ",".join(r[1] for r in rows) + "\n")
        for v in vals:
            fh.write(",".join(repr(float(a)) for a in v) + "\n")
    return path


def read_fap(path):
    """Return ``(fap_names, values, frame_rate)`` from a FAP text stream."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#fps="):
        raise ValueError("FAP file lacks its header")
    head = lines[0][1:]
    fps_part, faps = head.split(",faps=", 1)
    values = np.array([[float(a) for a in ln.split(",")] for ln in lines[1:] if ln.strip()])
    return faps.split(","), values.reshape(-1, len(faps.split(","))), float(fps_part[4:])


# ---------------------------------------------------------------- plotting


def plot_trajectories(seqs, channels, path, labels=None, title=None) -> Path:
    """One panel per channel, one polyline per sequence, written as SVG.

    The SVG is reproducible byte for byte (fixed hash salt, no date stamp).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    channels = list(channels)
    if not channels:
        raise ValueError("no channels requested")
    seqs = list(seqs)
    names = MOTION_CHANNELS
    idx = [names.index(c) if isinstance(c, str) else int(c) for c in channels]
    for i in idx:
        if not 0 <= i < len(names):
            raise ValueError(f"invalid channel {i}")
    labels = labels or [f"seq{k}" for k in range(len(seqs))]
    with matplotlib.rc_context({"svg.hashsalt": "csglip", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(len(idx), 1, figsize=(8, 1.8 * len(idx)), sharex=True, squeeze=False)
        for ax, ch in zip(axes[:, 0], idx):
            for s, lab in zip(seqs, labels):
                fr = getattr(s, "frames", s)
                t = np.arange(len(fr)) / FRAME_RATE
                ax.plot(t, fr[:, ch], lw=1.0, label=lab, gid=f"{lab}-{names[ch]}")
            ax.set_ylabel(names[ch])
        axes[0, 0].legend(loc="upper right", fontsize="small")
        axes[-1, 0].set_xlabel("time (s)")
        if title:
            fig.suptitle(title)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
