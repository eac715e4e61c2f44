"""Numerical primitives shared by every network in the package.

Everything runs in float64. Random streams come from numpy's PCG64 bit
generator; Gaussian draws use a Box-Muller transform over its uniform doubles
so the normal stream only depends on the uniform stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` refined by an optional key path.

    String keys are folded through CRC32, so ``make_rng(7, "train", 3)`` is
    stable across runs and platforms.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        else:
            entropy.append(int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def gaussian(rng: np.random.Generator, n, dtype=DTYPE) -> np.ndarray:
    """Standard normal draws by Box-Muller. ``n`` may be an int or a shape."""
    shape = (n,) if np.isscalar(n) else tuple(n)
    size = int(np.prod(shape))
    if size < 1:
        raise ValueError("need at least one draw")
    half = (size + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1], keeps log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * half, dtype=dtype)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:size].reshape(shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(kind: str, x):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def glorot_init(n_in: int, n_out: int, rng: np.random.Generator, shape=None) -> np.ndarray:
    """Uniform Glorot init in +-sqrt(6 / (n_in + n_out))."""
    if n_in < 1 or n_out < 1:
        raise ValueError("fan-in and fan-out must be positive")
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (n_in, n_out))


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)  # name -> max relative error
    worst_index: dict = field(default_factory=dict)
    epsilon: float = 1e-5
    tolerance: float = 1e-4
    failure: str | None = None

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_error <= self.tolerance

    def __str__(self):
        lines = [f"gradcheck eps={self.epsilon:g} tol={self.tolerance:g} "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for k, v in self.errors.items():
            lines.append(f"  {k}: {v:.3e} at {self.worst_index.get(k)}")
        if self.failure:
            lines.append(f"  {self.failure}")
        return "\n".join(lines)


def relative_error(a, n):
    a = np.asarray(a, dtype=DTYPE)
    n = np.asarray(n, dtype=DTYPE)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def check_gradients(
    f: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f()`` evaluates the loss at the current contents of ``params`` and
    returns ``(loss, grads)`` with ``grads`` keyed like ``params``. Entries
    are perturbed in place and restored afterwards. ``max_entries`` limits
    the number of checked entries per array (chosen with ``rng``).
    """
    report = GradCheckReport(epsilon=eps, tolerance=tol)
    _, grads = f()
    grads = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in grads.items()}
    rng = rng if rng is not None else np.random.default_rng(0)
    for name, p in params.items():
        if not p.flags.c_contiguous:
            raise ValueError(f"parameter {name} is not contiguous")
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        g = grads[name].reshape(-1)
        worst, worst_i = 0.0, None
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp, _ = f()
            flat[i] = old - eps
            lm, _ = f()
            flat[i] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                report.failure = f"non-finite loss perturbing {name}[{i}]"
                return report
            num = (lp - lm) / (2.0 * eps)
            err = float(relative_error(g[i], num))
            if err > worst:
                worst, worst_i = err, int(i)
        report.errors[name] = worst
        report.worst_index[name] = worst_i
    return report
