"""Checkpoint container and its binary file format.

Layout (all integers little-endian)::

    b"CSGLIPCK"                    8-byte magic
    uint32 version
    uint64 header length, then UTF-8 JSON header (architecture, meta, optimizer
           hyper-parameters, RNG state, tensor count)
    per tensor: uint32 name length, name, uint32 ndim, uint64 * ndim shape,
                float64 little-endian data
"""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import build_network

MAGIC = b"CSGLIPCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Normalizer:
    """Per-channel z-scoring for features and motion (fit on training data)."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, corpus, floor: float = 1e-8):
        X = np.concatenate([u.features.frames for u in corpus])
        Y = np.concatenate([u.motion.frames for u in corpus])
        return cls(X.mean(0), np.maximum(X.std(0), floor), Y.mean(0), np.maximum(Y.std(0), floor))

    @classmethod
    def identity(cls, F: int, C: int = 45):
        return cls(np.zeros(F), np.ones(F), np.zeros(C), np.ones(C))

    def x(self, a):
        return (a - self.x_mean) / self.x_std

    def y(self, a):
        return (a - self.y_mean) / self.y_std

    def y_inverse(self, a):
        return a * self.y_std + self.y_mean

    def tensors(self) -> dict:
        return {"x_mean": self.x_mean, "x_std": self.x_std, "y_mean": self.y_mean, "y_std": self.y_std}


@dataclass
class Checkpoint:
    """A trained (or in-training) model with everything needed to resume.

    ``kind`` is one of ``swdnn``, ``blstm-mse``, ``blstm-ccc``, ``csg``,
    ``csg-emo-aware`` or ``csg-emo-adapted``.
    """

    kind: str
    generator: object
    discriminator: object = None
    normalizer: Normalizer | None = None
    optimizers: dict = field(default_factory=dict)
    rng_state: dict | None = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)
    log: list = field(default_factory=list)  # not persisted; training records

    @property
    def emotion_aware(self) -> bool:
        return getattr(self.generator, "emotion_dim", 0) > 0

    def copy(self) -> "Checkpoint":
        return copy.deepcopy(self)

    # -------------------------------------------------------------- tensors

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self.generator.parameters().items():
            out[f"generator.{k}"] = v
        for k, v in getattr(self.generator, "buffers", dict)().items():
            out[f"generator.buffer.{k}"] = v
        if self.discriminator is not None:
            for k, v in self.discriminator.parameters().items():
                out[f"discriminator.{k}"] = v
        if self.normalizer is not None:
            for k, v in self.normalizer.tensors().items():
                out[f"normalizer.{k}"] = v
        for name, opt in sorted(self.optimizers.items()):
            for k in sorted(opt.m):
                out[f"opt.{name}.m.{k}"] = opt.m[k]
                out[f"opt.{name}.v.{k}"] = opt.v[k]
        return out

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "generator": self.generator.config(),
            "discriminator": self.discriminator.config() if self.discriminator is not None else None,
            "normalizer": self.normalizer is not None,
            "optimizers": {k: v.hyper() for k, v in sorted(self.optimizers.items())},
            "rng_state": self.rng_state,
            "epoch": self.epoch,
            "meta": self.meta,
        }

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, v in sorted(self.tensors().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    # -------------------------------------------------------------- io

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        tensors = self.tensors()
        head = self.header()
        head["n_tensors"] = len(tensors)
        blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(MAGIC)
        buf.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        buf.write(blob)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode("utf-8")
            buf.write(struct.pack("<I", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        mv = memoryview(data)
        if bytes(mv[:8]) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack_from("<IQ", mv, 8)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 8 + 12
        head = json.loads(bytes(mv[pos:pos + hlen]).decode("utf-8"))
        pos += hlen
        tensors = {}
        for _ in range(head["n_tensors"]):
            (n,) = struct.unpack_from("<I", mv, pos)
            pos += 4
            name = bytes(mv[pos:pos + n]).decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", mv, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", mv, pos)
            pos += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(mv, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            tensors[name] = arr.astype(np.float64)
        if pos != len(data):
            raise CheckpointError("trailing bytes after last tensor")

        gen = build_network(head["generator"])
        _assign(gen.parameters(), tensors, "generator.")
        if hasattr(gen, "buffers"):
            _assign(gen.buffers(), tensors, "generator.buffer.")
        disc = None
        if head["discriminator"] is not None:
            disc = build_network(head["discriminator"])
            _assign(disc.parameters(), tensors, "discriminator.")
        norm = None
        if head["normalizer"]:
            norm = Normalizer(**{k: tensors[f"normalizer.{k}"] for k in
                                 ("x_mean", "x_std", "y_mean", "y_std")})
        from ..train.adam import AdamState

        opts = {}
        for name, hyper in head["optimizers"].items():
            st = AdamState(lr=hyper["lr"], beta1=hyper["beta1"], beta2=hyper["beta2"],
                           epsilon=hyper["epsilon"], t=hyper["t"])
            pre = f"opt.{name}.m."
            for key in tensors:
                if key.startswith(pre):
                    pname = key[len(pre):]
                    st.m[pname] = tensors[key]
                    st.v[pname] = tensors[f"opt.{name}.v.{pname}"]
            opts[name] = st
        return cls(head["kind"], gen, disc, norm, opts, head["rng_state"], head["epoch"], head["meta"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _assign(target: dict, tensors: dict, prefix: str):
    for k, arr in target.items():
        key = prefix + k
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks tensor {key}")
        src = tensors[key]
        if src.shape != arr.shape:
            raise CheckpointError(f"{key}: shape {src.shape} does not match architecture {arr.shape}")
        arr[...] = src
