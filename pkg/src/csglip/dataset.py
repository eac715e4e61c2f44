"""Corpus model, emotion labels, windowing, batching and the synthetic corpus."""

from __future__ import annotations

import json
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .numcore import DTYPE, gaussian, make_rng
from .sequences import (FRAME_RATE, MOTION_CHANNELS, FeatureSequence, FormatError, MotionSequence,
                        read_sequence_csv, write_sequence_csv)

EMOTIONS = ("neutral", "anger", "happiness", "sadness", "frustration", "other")
TARGET_EMOTIONS = ("anger", "happiness", "sadness", "frustration")
MANIFEST_VERSION = 1

_ALIASES = {
    "neu": "neutral", "neutral state": "neutral",
    "ang": "anger", "hap": "happiness", "happy": "happiness",
    "exc": "happiness", "excitement": "happiness",  # merged with happiness
    "sad": "sadness", "fru": "frustration",
    "oth": "other", "xxx": "other",
    "dis": "other", "disgust": "other", "fea": "other", "fear": "other",
    "sur": "other", "surprise": "other",
}


def canonical_emotion(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in EMOTIONS:
        raise ValueError(f"unknown emotion category {name!r}")
    return key


def soft_label(annotations: Sequence[str]) -> np.ndarray:
    """Empirical distribution of the annotations over the six classes."""
    if len(annotations) == 0:
        raise ValueError("no annotations")
    counts = Counter(canonical_emotion(a) for a in annotations)
    return np.array([counts[e] for e in EMOTIONS], dtype=DTYPE) / len(annotations)


def consensus_label(annotations: Sequence[str]) -> str | None:
    """Strict-majority class, or None when no class has more than half the votes."""
    if len(annotations) == 0:
        raise ValueError("no annotations")
    (top, n), = Counter(canonical_emotion(a) for a in annotations).most_common(1)
    return top if 2 * n > len(annotations) else None


@dataclass
class EmotionLabel:
    hard: str | None
    soft: np.ndarray

    @classmethod
    def from_annotations(cls, annotations):
        return cls(consensus_label(annotations), soft_label(annotations))

    @classmethod
    def one_hot(cls, name: str):
        name = canonical_emotion(name)
        soft = np.zeros(len(EMOTIONS))
        soft[EMOTIONS.index(name)] = 1.0
        return cls(name, soft)


@dataclass
class Utterance:
    id: str
    speaker: str
    features: FeatureSequence
    motion: MotionSequence
    emotion: EmotionLabel
    annotations: tuple = ()

    @property
    def T(self) -> int:
        return self.features.T


def subset_by_emotion(corpus, emotion: str):
    emotion = canonical_emotion(emotion)
    return [u for u in corpus if u.emotion.hard == emotion]


# ---------------------------------------------------------------- windows

@dataclass
class WindowSet:
    """Stacked fixed-length windows: ``X (N, L, F)``, ``Y (N, L, 45)``,
    ``E (N, 6)``, ``mask (N, L)``, plus source ids and start frames."""

    X: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    mask: np.ndarray
    source_ids: np.ndarray
    starts: np.ndarray
    motion_source_ids: np.ndarray | None = None  # set on mismatched batches

    def __len__(self):
        return self.X.shape[0]

    def take(self, idx) -> "WindowSet":
        msi = None if self.motion_source_ids is None else self.motion_source_ids[idx]
        return WindowSet(self.X[idx], self.Y[idx], self.E[idx], self.mask[idx],
                         self.source_ids[idx], self.starts[idx], msi)


WindowBatch = WindowSet


def window_utterance(u: Utterance, L: int = 71, hop: int = 10) -> WindowSet:
    """Contiguous L-frame slices starting at 0, hop, 2*hop, ...

    An utterance shorter than L becomes one zero-padded window whose mask
    marks the padding invalid.
    """
    if L < 1 or hop < 1:
        raise ValueError("window length and hop must be positive")
    T = min(u.features.T, u.motion.T)
    x, y = u.features.frames[:T], u.motion.frames[:T]
    if T >= L:
        starts = np.arange(0, T - L + 1, hop)
        idx = starts[:, None] + np.arange(L)[None, :]
        X, Y = x[idx], y[idx]
        mask = np.ones((len(starts), L), dtype=bool)
    else:
        starts = np.array([0])
        X = np.zeros((1, L, x.shape[1]))
        Y = np.zeros((1, L, y.shape[1]))
        X[0, :T], Y[0, :T] = x, y
        mask = np.zeros((1, L), dtype=bool)
        mask[0, :T] = True
    n = len(starts)
    E = np.repeat(u.emotion.soft[None, :], n, axis=0)
    return WindowSet(X, Y, E, mask, np.array([u.id] * n, dtype=object), starts)


def build_windows(corpus, L: int = 71, hop: int = 10) -> WindowSet:
    parts = [window_utterance(u, L, hop) for u in corpus]
    if not parts:
        raise ValueError("empty corpus")
    return WindowSet(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                       ("X", "Y", "E", "mask", "source_ids", "starts")))


def make_batches(windows: WindowSet, B: int = 128, rng: np.random.Generator | None = None
                 ) -> Iterator[WindowSet]:
    """Shuffled batches of B windows; the last partial batch is kept."""
    n = len(windows)
    if n == 0:
        raise ValueError("no windows to batch")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, B):
        yield windows.take(order[s:s + B])


def _group_derangement(groups: np.ndarray, rng: np.random.Generator):
    """Permutation pi with groups[pi[i]] != groups[i] for all i, or None."""
    n = len(groups)
    labels, inv = np.unique(groups, return_inverse=True)
    counts = np.bincount(inv)
    if counts.max() * 2 > n:
        return None
    label_order = rng.permutation(len(labels))
    rank = np.empty(len(labels), dtype=int)
    rank[label_order] = np.arange(len(labels))
    # sort by (shuffled group rank, random tiebreak): groups become contiguous blocks
    key = rank[inv] + rng.random(n) * 0.5
    order = np.argsort(key, kind="stable")
    shift = counts.max()
    pi = np.empty(n, dtype=int)
    pi[order] = order[(np.arange(n) + shift) % n]
    return pi


def sample_mismatched(batch: WindowSet, rng: np.random.Generator, mode: str = "permutation"
                      ) -> WindowSet:
    """Pair every window's features (and emotion) with motion from another utterance.

    ``permutation`` mode applies a derangement over source ids, so the batch's
    motion windows are reused exactly once. When one utterance holds more
    than half the batch that is impossible and windows from other utterances
    are drawn with replacement instead (``resample`` mode does this always).
    """
    ids = batch.source_ids
    if len(set(ids.tolist())) < 2:
        raise ValueError("mismatched sampling needs windows from at least two utterances")
    pi = _group_derangement(ids, rng) if mode == "permutation" else None
    if pi is None:
        pi = np.empty(len(ids), dtype=int)
        for i, sid in enumerate(ids):
            pool = np.flatnonzero(ids != sid)
            pi[i] = pool[rng.integers(len(pool))]
    Y = batch.Y[pi]
    # frames valid for both the features and the borrowed motion
    mask = batch.mask & batch.mask[pi]
    return WindowSet(batch.X, Y, batch.E, mask, batch.source_ids, batch.starts, ids[pi])


# ---------------------------------------------------------------- splits

def split_corpus(corpus, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Disjoint utterance-level split stratified by (speaker, hard emotion)."""
    corpus = list(corpus)
    if len(corpus) < 5:
        raise ValueError("need at least 5 utterances to split")
    fr = np.asarray(fractions, dtype=DTYPE)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negative values summing to 1")
    rng = make_rng(seed, "split")
    strata = defaultdict(list)
    for k, u in enumerate(corpus):
        strata[(u.speaker, u.emotion.hard or "")].append(k)
    keyed = []
    for s_idx, key in enumerate(sorted(strata)):
        members = strata[key]
        perm = rng.permutation(len(members))
        for r, p in enumerate(perm):
            keyed.append(((r + 0.5) / len(members), rng.random(), members[p]))
    keyed.sort()
    order = [k for _, _, k in keyed]
    N = len(corpus)
    n_train = int(round(fr[0] * N))
    n_val = int(round(fr[1] * N))
    train = [corpus[k] for k in sorted(order[:n_train])]
    val = [corpus[k] for k in sorted(order[n_train:n_train + n_val])]
    test = [corpus[k] for k in sorted(order[n_train + n_val:])]
    return train, val, test


# ---------------------------------------------------------------- synthetic corpus

@dataclass
class SynthSpec:
    """Everything needed to regenerate a synthetic paired corpus.

    Motion channel j at frame t is
    ``sum_f A[j, f] * boxsmooth(x[:, f], radius)[t] + offset_e[j] + style[j] + noise``
    where ``A`` has rank ``motion_rank``, ``offset_e`` mixes the emotion gain
    rows with the utterance's soft label, ``style`` is a per-utterance offset
    that the features do not reveal, and the noise is i.i.d. N(0, noise_sd^2).
    """

    n_utterances: int = 60
    T_range: tuple = (300, 600)
    F: int = 27
    seed: int = 0
    emotion_gains: np.ndarray | None = None  # 6 x 45; drawn from the seed when None
    emotion_scale: float = 1.0
    smoothing_radius: int = 4
    noise_sd: float = 0.05
    style_sd: float = 0.0
    motion_rank: int = 15
    feature_smoothing: float = 3.0
    n_speakers: int = 4
    class_counts: dict | None = None  # hard class -> number of utterances
    unanimous_prob: float = 0.5
    n_annotators: int = 3

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["T_range"] = list(self.T_range)
        if self.emotion_gains is not None:
            d["emotion_gains"] = np.asarray(self.emotion_gains).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        d = dict(d)
        if "T_range" in d:
            d["T_range"] = tuple(d["T_range"])
        if d.get("emotion_gains") is not None:
            d["emotion_gains"] = np.asarray(d["emotion_gains"], dtype=DTYPE)
        return cls(**d)


def boxsmooth(x: np.ndarray, radius: int) -> np.ndarray:
    """Centred moving average of width 2r+1 along axis 0, edges replicated."""
    if radius <= 0:
        return np.array(x, dtype=DTYPE, copy=True)
    xp = np.concatenate([np.repeat(x[:1], radius, axis=0), x, np.repeat(x[-1:], radius, axis=0)])
    c = np.cumsum(np.concatenate([np.zeros((1,) + x.shape[1:]), xp]), axis=0)
    w = 2 * radius + 1
    return (c[w:] - c[:-w]) / w


@dataclass
class SynthOracle:
    """Deterministic part of the synthetic mapping."""

    mixing: np.ndarray          # 45 x F
    gains: np.ndarray           # 6 x 45
    basis: np.ndarray           # 45 x rank
    smoothing_radius: int
    styles: dict = field(default_factory=dict)

    def predict(self, features, soft=None, style=None) -> np.ndarray:
        x = features.frames if isinstance(features, FeatureSequence) else np.asarray(features)
        out = boxsmooth(x, self.smoothing_radius) @ self.mixing.T
        if soft is not None:
            out = out + np.asarray(soft) @ self.gains
        if style is not None:
            out = out + style
        return out

    def predict_utterance(self, u: Utterance) -> np.ndarray:
        return self.predict(u.features, u.emotion.soft, self.styles.get(u.id))


@dataclass
class SyntheticCorpus:
    spec: SynthSpec
    utterances: list
    oracle: SynthOracle

    def __iter__(self):
        return iter(self.utterances)

    def __len__(self):
        return len(self.utterances)


def _smooth_noise(rng, T, F, sd):
    """Unit-variance Gaussian process: white noise convolved with a Gaussian kernel."""
    half = int(np.ceil(3 * sd)) if sd > 0 else 0
    raw = gaussian(rng, (T + 2 * half, F))
    if half == 0:
        return raw
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sd) ** 2)
    k /= np.sqrt((k ** 2).sum())
    out = np.stack([np.convolve(raw[:, f], k, mode="valid") for f in range(F)], axis=1)
    return out


def _synth_labels(spec: SynthSpec, rng):
    if spec.class_counts:
        classes = []
        for name, n in spec.class_counts.items():
            classes += [canonical_emotion(name)] * int(n)
        if len(classes) != spec.n_utterances:
            raise ValueError("class_counts must add up to n_utterances")
        classes = [classes[k] for k in rng.permutation(len(classes))]
    else:
        pool = TARGET_EMOTIONS
        classes = [pool[k % len(pool)] for k in rng.permutation(spec.n_utterances)]
    out = []
    for c in classes:
        if rng.random() < spec.unanimous_prob:
            ann = [c] * spec.n_annotators
        else:
            others = [e for e in EMOTIONS if e != c]
            odd = others[rng.integers(len(others))]
            n_major = spec.n_annotators // 2 + 1
            ann = [c] * n_major + [odd] * (spec.n_annotators - n_major)
        out.append(ann)
    return out


def generate_synthetic(spec: SynthSpec) -> SyntheticCorpus:
    """Build a reproducible paired corpus together with its oracle."""
    rng = make_rng(spec.seed, "synthetic")
    n_motion = len(MOTION_CHANNELS)
    r = spec.motion_rank
    basis = gaussian(rng, (n_motion, r)) / np.sqrt(r)
    coupling = gaussian(rng, (r, spec.F))
    mixing = basis @ coupling
    # scale so the smoothed-feature part has roughly unit variance per channel
    probe = boxsmooth(_smooth_noise(make_rng(spec.seed, "probe"), 4000, spec.F,
                                    spec.feature_smoothing), spec.smoothing_radius)
    mixing /= np.sqrt(np.mean((probe @ mixing.T).var(axis=0)))
    if spec.emotion_gains is not None:
        gains = np.asarray(spec.emotion_gains, dtype=DTYPE)
        if gains.shape != (len(EMOTIONS), n_motion):
            raise ValueError("emotion_gains must be 6 x 45")
    else:
        gains = spec.emotion_scale * (gaussian(rng, (len(EMOTIONS), r)) @ basis.T)
    labels = _synth_labels(spec, rng)
    lo, hi = spec.T_range
    oracle = SynthOracle(mixing, gains, basis, spec.smoothing_radius)
    utts = []
    for k in range(spec.n_utterances):
        urng = make_rng(spec.seed, "utterance", k)
        T = int(urng.integers(lo, hi + 1))
        x = _smooth_noise(urng, T, spec.F, spec.feature_smoothing)
        uid = f"utt{k:04d}"
        label = EmotionLabel.from_annotations(labels[k])
        style = None
        if spec.style_sd > 0:
            style = basis @ (spec.style_sd * gaussian(urng, r))
            oracle.styles[uid] = style
        y = oracle.predict(x, label.soft, style)
        if spec.noise_sd > 0:
            y = y + spec.noise_sd * gaussian(urng, y.shape)
        feats = FeatureSequence(x, FRAME_RATE, tuple(f"x{f:02d}" for f in range(spec.F)))
        speaker = f"spk{k % spec.n_speakers}"
        utts.append(Utterance(uid, speaker, feats, MotionSequence(y), label, tuple(labels[k])))
    return SyntheticCorpus(spec, utts, oracle)


# ---------------------------------------------------------------- manifest

def write_corpus(corpus, directory) -> Path:
    """Write feature/motion CSVs and a line-delimited JSON manifest."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    (directory / "motion").mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for u in corpus:
            fpath = Path("features") / f"{u.id}.feat.csv"
            mpath = Path("motion") / f"{u.id}.motion.csv"
            write_sequence_csv(u.features, directory / fpath)
            write_sequence_csv(u.motion, directory / mpath)
            rec = {"version": MANIFEST_VERSION, "id": u.id, "speaker": u.speaker,
                   "features": fpath.as_posix(), "motion": mpath.as_posix(),
                   "annotations": list(u.annotations)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list:
    """Load every utterance of a manifest; lengths are aligned to the shorter stream."""
    path = Path(path)
    root = path.parent
    corpus, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            missing = {"version", "id", "speaker", "features", "motion", "annotations"} - set(rec)
            if missing:
                raise FormatError(f"{path}:{lineno}: missing keys {sorted(missing)}")
            if rec["version"] != MANIFEST_VERSION:
                raise FormatError(f"{path}:{lineno}: unsupported manifest version {rec['version']}")
            if rec["id"] in seen:
                raise FormatError(f"{path}:{lineno}: duplicate id {rec['id']}")
            seen.add(rec["id"])
            feats = read_sequence_csv(root / rec["features"])
            motion = read_sequence_csv(root / rec["motion"], expected_channels=len(MOTION_CHANNELS),
                                       cls=MotionSequence)
            if feats.T != motion.T:
                warnings.warn(f"{rec['id']}: features have {feats.T} frames, motion {motion.T}; "
                              "truncating to the shorter", RuntimeWarning, stacklevel=2)
                T = min(feats.T, motion.T)
                feats, motion = feats.truncate(T), motion.truncate(T)
            ann = rec["annotations"]
            label = EmotionLabel.from_annotations(ann) if ann else EmotionLabel(None, np.full(6, 1 / 6))
            corpus.append(Utterance(rec["id"], rec["speaker"], feats, motion, label, tuple(ann)))
    if not corpus:
        raise FormatError(f"{path}: empty manifest")
    return corpus
