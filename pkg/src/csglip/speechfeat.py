"""Per-frame speech features at 120 frames per second.

MFCC chain: pre-emphasis (0.97) -> Hann window (25 ms) -> power spectrum ->
26 triangular mel filters (HTK mel scale, 0 Hz to Nyquist) -> log (floored
at 1e-10) -> orthonormal DCT-II, first 25 coefficients kept.

Frame ``t`` starts at sample ``floor(t * sr / 120)``; fractional hops are
absorbed by that floor, so one second always gives exactly 120 frames. The
tail of the signal is zero-padded for the last windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft

from .numcore import DTYPE
from .sequences import FRAME_RATE, FeatureSequence, MotionSequence, read_sequence_csv

N_LLD = 17


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=DTYPE).reshape(-1)
        if self.sample_rate <= 0:
            raise AudioError("sample rate must be positive")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    n_mfcc: int = 25
    window_ms: float = 25.0
    hop_ms: float = 1000.0 / FRAME_RATE
    n_mel: int = 26
    preemphasis: float = 0.97
    f0_range: tuple = (75.0, 500.0)
    voicing_threshold: float = 0.3
    log_floor: float = 1e-10
    intensity_floor_db: float = -100.0

    @property
    def frame_rate(self) -> float:
        return round(1000.0 / self.hop_ms, 9)


def read_wav(path) -> Waveform:
    from scipy.io import wavfile

    try:
        sr, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise AudioError(f"cannot read audio {path}: {exc}") from None
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(DTYPE) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(DTYPE)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return Waveform(data, float(sr))


def write_wav(w: Waveform, path) -> None:
    from scipy.io import wavfile

    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), int(w.sample_rate), pcm)


def frame_layout(w: Waveform, cfg: FeatureConfig):
    """Start sample of each frame and the window length in samples."""
    win = int(round(cfg.window_ms * 1e-3 * w.sample_rate))
    if w.samples.size < win or win < 2:
        raise AudioError(f"audio of {w.samples.size} samples is shorter than one "
                         f"{cfg.window_ms} ms window")
    T = int(np.floor(w.samples.size * cfg.frame_rate / w.sample_rate + 1e-9))
    starts = np.floor(np.arange(T) * w.sample_rate / cfg.frame_rate + 1e-9).astype(np.int64)
    return starts, win


def _frames(x, starts, win):
    pad = max(0, int(starts[-1]) + win - x.size)
    xp = np.concatenate([x, np.zeros(pad)]) if pad else x
    idx = starts[:, None] + np.arange(win)[None, :]
    return xp[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=DTYPE) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=DTYPE) / 2595.0) - 1.0)


def mel_filterbank(n_mel: int, n_fft: int, sample_rate: float, fmin=0.0, fmax=None) -> np.ndarray:
    """``n_mel x (n_fft//2 + 1)`` triangular filters with unit peaks."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mel + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def extract_mfcc(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    starts, win = frame_layout(w, cfg)
    x = w.samples
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - cfg.preemphasis * x[:-1]
    frames = _frames(y, starts, win) * np.hanning(win + 1)[:-1]  # periodic Hann
    n_fft = 1 << int(np.ceil(np.log2(win)))
    power = np.abs(rfft(frames, n=n_fft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mel, n_fft, w.sample_rate)
    logmel = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, :cfg.n_mfcc]
    names = tuple(f"mfcc{k:02d}" for k in range(cfg.n_mfcc))
    return FeatureSequence(coeffs, cfg.frame_rate, names)


def _autocorr_pitch(frame, sr, lag_lo, lag_hi, threshold):
    n = frame.size
    x = frame - frame.mean()
    e = x * x
    if e.sum() <= 0:
        return 0.0
    lag_hi = min(lag_hi, n - 2)
    if lag_hi <= lag_lo:
        return 0.0
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    X = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(X * np.conj(X), nfft)[:n]
    csum = np.concatenate([[0.0], np.cumsum(e)])
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    head = csum[n - lags]                 # sum x[0 : n-lag]^2
    tail = csum[n] - csum[lags]           # sum x[lag : n]^2
    denom = np.sqrt(head * tail)
    r = np.where(denom > 0, ac[lags] / np.where(denom > 0, denom, 1.0), 0.0)
    inner = r[1:-1]
    peaks = np.flatnonzero((inner >= r[:-2]) & (inner > r[2:]))
    if peaks.size == 0:
        return 0.0
    best = inner[peaks].max()
    if best < threshold:
        return 0.0
    k = peaks[np.argmax(inner[peaks] >= 0.9 * best)] + 1  # first strong peak
    a, b, c = r[k - 1], r[k], r[k + 1]
    curv = a - 2 * b + c
    offset = 0.5 * (a - c) / curv if curv < 0 else 0.0
    return sr / (lags[k] + offset)


def extract_f0_intensity(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    """F0 from the normalized autocorrelation peak (0 when unvoiced) and
    RMS intensity in dB, floored at ``cfg.intensity_floor_db``."""
    starts, win = frame_layout(w, cfg)
    frames = _frames(w.samples, starts, win)
    sr = w.sample_rate
    fmin, fmax = cfg.f0_range
    lag_lo = max(2, int(np.floor(sr / fmax)))
    lag_hi = int(np.ceil(sr / fmin))
    f0 = np.array([_autocorr_pitch(f, sr, lag_lo, lag_hi, cfg.voicing_threshold) for f in frames])
    rms = np.sqrt((frames ** 2).mean(axis=1))
    floor = 10.0 ** (cfg.intensity_floor_db / 20.0)
    intensity = 20.0 * np.log10(np.maximum(rms, floor))
    return FeatureSequence(np.stack([f0, intensity], axis=1), cfg.frame_rate, ("f0", "intensity"))


def extract_speech_features(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureSequence:
    """MFCCs followed by F0 and intensity (27 channels with the defaults)."""
    a, b = extract_mfcc(w, cfg), extract_f0_intensity(w, cfg)
    return FeatureSequence(np.concatenate([a.frames, b.frames], axis=1), a.frame_rate,
                           a.channel_names + b.channel_names)


def load_external_lld(path, expected_channels: int = N_LLD) -> FeatureSequence:
    """Read externally computed low-level descriptors, resampled to 120 fps."""
    return read_sequence_csv(Path(path), expected_channels=expected_channels, target_rate=FRAME_RATE)


def concat_align(streams, motion: MotionSequence | None = None):
    """Concatenate feature streams channel-wise and cut everything to the shortest length.

    Streams keep their given order (the documented order is MFCC, F0,
    intensity, LLD). Returns ``(features, motion)``.
    """
    streams = list(streams)
    if not streams:
        raise ValueError("no feature streams")
    rates = {s.frame_rate for s in streams}
    if motion is not None:
        rates.add(motion.frame_rate)
    if len(rates) != 1 or FRAME_RATE not in rates:
        raise ValueError(f"frame rates differ or are not {FRAME_RATE:g} fps: {sorted(rates)}")
    T = min(s.T for s in streams)
    if motion is not None:
        T = min(T, motion.T)
    frames = np.concatenate([s.frames[:T] for s in streams], axis=1)
    names = sum((tuple(s.channel_names) for s in streams), ())
    feats = FeatureSequence(frames, FRAME_RATE, names)
    return feats, (motion.truncate(T) if motion is not None else None)
