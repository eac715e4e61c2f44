"""Frame-sequence containers and the shared CSV file format.

A sequence file starts with ``#fps=<rate>,channels=<name>,<name>,...`` and
then holds one comma-separated row per frame. An optional leading channel
named ``time`` carries timestamps in seconds; it is validated and used for
resampling on load but never stored in the sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import DTYPE

FRAME_RATE = 120.0
N_MARKERS = 15
MOTION_CHANNELS = tuple(f"m{k:02d}_{ax}" for k in range(1, N_MARKERS + 1) for ax in "xyz")


class FormatError(ValueError):
    """Malformed or inconsistent sequence/manifest file."""


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float = FRAME_RATE
    channel_names: tuple = field(default=())

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=DTYPE)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {self.frames.shape}")
        if not self.channel_names:
            self.channel_names = tuple(f"c{k}" for k in range(self.frames.shape[1]))
        self.channel_names = tuple(self.channel_names)
        if len(self.channel_names) != self.frames.shape[1]:
            raise ValueError(f"{len(self.channel_names)} channel names for "
                             f"{self.frames.shape[1]} channels")
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]

    def truncate(self, T: int):
        return type(self)(self.frames[:T], self.frame_rate, self.channel_names)


@dataclass
class MotionSequence(FeatureSequence):
    """``T x 45`` marker coordinates (15 markers, XYZ)."""

    def __post_init__(self):
        if not self.channel_names:
            self.channel_names = MOTION_CHANNELS
        super().__post_init__()
        if self.frames.shape[1] != len(MOTION_CHANNELS):
            raise ValueError(f"motion needs {len(MOTION_CHANNELS)} channels, got {self.frames.shape[1]}")


def write_sequence_csv(seq: FeatureSequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rate = format(float(seq.frame_rate), ".17g")
    with open(path, "w", newline="\n") as fh:
        fh.write(f"#fps={rate},channels={','.join(seq.channel_names)}\n")
        for row in seq.frames:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")
    return path


def _parse_header(line: str):
    if not line.startswith("#fps="):
        raise FormatError("missing '#fps=<rate>,channels=...' header")
    body = line[1:].strip()
    head, sep, names = body.partition(",channels=")
    if not sep:
        raise FormatError("header lacks a channels= field")
    try:
        rate = float(head.split("=", 1)[1])
    except ValueError:
        raise FormatError(f"bad frame rate in header: {head!r}") from None
    if rate <= 0:
        raise FormatError("frame rate must be positive")
    channels = tuple(n.strip() for n in names.split(",")) if names.strip() else ()
    if not channels or any(not n for n in channels):
        raise FormatError("empty channel name in header")
    return rate, channels


def read_sequence_csv(path, expected_channels: int | None = None, target_rate: float | None = FRAME_RATE,
                      cls=FeatureSequence):
    """Load a sequence file, resampling to ``target_rate`` by linear interpolation.

    Endpoints are kept: the first output frame is the first source frame and
    the last output frame lands on the last source timestamp when it falls on
    the target grid.
    """
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        rate, channels = _parse_header(header)
        try:
            data = np.loadtxt(fh, delimiter=",", dtype=DTYPE, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if data.size == 0:
        raise FormatError(f"{path}: no frames")
    if data.shape[1] != len(channels):
        raise FormatError(f"{path}: rows have {data.shape[1]} values, header names {len(channels)}")
    times = None
    if channels[0] == "time":
        times = data[:, 0]
        data = data[:, 1:]
        channels = channels[1:]
        if np.any(np.diff(times) <= 0):
            raise FormatError(f"{path}: timestamps are not strictly increasing")
    if expected_channels is not None and len(channels) != expected_channels:
        raise FormatError(f"{path}: {len(channels)} channels, expected {expected_channels}")
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values")
    if times is None:
        times = np.arange(data.shape[0]) / rate
    if target_rate is not None and (rate != target_rate or channels_have_gaps(times, target_rate)):
        data = resample(data, times, target_rate)
        rate = target_rate
    return cls(data, rate, channels)


def channels_have_gaps(times, rate) -> bool:
    grid = np.arange(len(times)) / rate
    return not np.allclose(times - times[0], grid, rtol=0, atol=1e-9)


def resample(data, times, rate):
    t0, t1 = times[0], times[-1]
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    grid = t0 + np.arange(n) / rate
    return np.stack([np.interp(grid, times, data[:, c]) for c in range(data.shape[1])], axis=1)
