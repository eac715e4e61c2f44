"""Layers with explicit forward/backward passes.

All sequence tensors are batch-major: ``(B, T, F)``. A layer keeps its
weights in ``self.params`` and exposes them (with dotted prefixes for
composites) through :meth:`Module.parameters`; optimizers update those arrays
in place.
"""

from __future__ import annotations

import numpy as np

from ..numcore import DTYPE, glorot_init


def _sig(x):
    # tanh form is overflow-free and fast
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Module:
    params: dict
    children: dict

    def __init__(self):
        self.params = {}
        self.children = {}

    def parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, child in self.children.items():
            out.update(child.parameters(f"{prefix}{name}."))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


class Linear(Module):
    """Affine map applied over the last axis (tied across frames).

    ``bias=False`` drops the offset, e.g. in front of batch normalization
    where it would be cancelled anyway.
    """

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, bias: bool = True):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        W = glorot_init(n_in, n_out, rng) if rng is not None else np.zeros((n_in, n_out))
        self.params = {"W": np.ascontiguousarray(W, dtype=DTYPE)}
        if bias:
            self.params["b"] = np.zeros(n_out)

    def forward(self, x):
        y = x @ self.params["W"]
        if "b" in self.params:
            y = y + self.params["b"]
        return y, x

    def backward(self, dy, x, need_dx: bool = True):
        lead = int(np.prod(dy.shape[:-1]))
        grads = {"W": x.reshape(lead, -1).T @ dy.reshape(lead, -1)}
        if "b" in self.params:
            grads["b"] = dy.reshape(lead, -1).sum(axis=0)
        dx = dy @ self.params["W"].T if need_dx else None
        return grads, dx


class LstmCell(Module):
    """Standard LSTM (no peepholes) scanning a batch of sequences.

    Gate blocks in the packed weights are ordered input, forget, output,
    candidate. ``W`` is ``F x 4H``, ``U`` is ``H x 4H``; the forget bias
    starts at 1.0.
    """

    GATES = ("i", "f", "o", "c")

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        F, H = input_size, hidden_size
        self.input_size, self.hidden_size = F, H
        W = np.concatenate([glorot_init(F, H, rng) for _ in range(4)], axis=1)
        U = np.concatenate([glorot_init(H, H, rng) for _ in range(4)], axis=1)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        self.params = {"W": W, "U": U, "b": b}

    def gate(self, name: str, which: str = "W") -> np.ndarray:
        """View of one gate's block, e.g. ``gate("f", "U")`` is U_f."""
        H = self.hidden_size
        k = self.GATES.index(name)
        arr = self.params[which]
        return arr[..., k * H:(k + 1) * H]

    def forward(self, x, reverse: bool = False):
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        H = self.hidden_size
        if reverse:
            x = x[:, ::-1]
        B, T, _ = x.shape
        xw = x @ W + b
        acts = np.empty((B, T, 4 * H))
        cs = np.empty((B, T, H))
        tcs = np.empty((B, T, H))
        hs = np.empty((B, T, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            a = xw[:, t] + h @ U
            g = acts[:, t]
            g[:, :3 * H] = _sig(a[:, :3 * H])
            g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
            c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
            tc = np.tanh(c)
            h = g[:, 2 * H:3 * H] * tc
            cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
        out = hs[:, ::-1] if reverse else hs
        return out, (x, acts, cs, tcs, hs, reverse)

    def backward(self, dout, cache, need_dx: bool = True):
        x, acts, cs, tcs, hs, reverse = cache
        W, U = self.params["W"], self.params["U"]
        H = self.hidden_size
        if reverse:
            dout = dout[:, ::-1]
        B, T, _ = x.shape
        dA = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        zero = np.zeros((B, H))
        UT = U.T
        for t in range(T - 1, -1, -1):
            g = acts[:, t]
            i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            tc = tcs[:, t]
            c_prev = cs[:, t - 1] if t > 0 else zero
            dh = dout[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = dA[:, t]
            da[:, :H] = dc * cand * i * (1.0 - i)
            da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            da[:, 3 * H:] = dc * i * (1.0 - cand * cand)
            dc_next = dc * f
            dh_next = da @ UT
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        flat = dA.reshape(B * T, 4 * H)
        grads = {
            "W": x.reshape(B * T, -1).T @ flat,
            "U": h_prev.reshape(B * T, H).T @ flat,
            "b": flat.sum(axis=0),
        }
        dx = None
        if need_dx:
            dx = dA @ W.T
            if reverse:
                dx = dx[:, ::-1]
        return grads, dx


class BlstmLayer(Module):
    """Forward and backward LSTM cells; per-frame output ``[h_fwd; h_bwd]``."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size, self.hidden_size = input_size, hidden_size
        self.fwd = LstmCell(input_size, hidden_size, rng)
        self.bwd = LstmCell(input_size, hidden_size, rng)
        self.children = {"fwd": self.fwd, "bwd": self.bwd}

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def forward(self, x):
        hf, cf = self.fwd.forward(x)
        hb, cb = self.bwd.forward(x, reverse=True)
        return np.concatenate([hf, hb], axis=-1), (cf, cb)

    def backward(self, dout, cache, need_dx: bool = True):
        H = self.hidden_size
        gf, dxf = self.fwd.backward(dout[..., :H], cache[0], need_dx)
        gb, dxb = self.bwd.backward(dout[..., H:], cache[1], need_dx)
        grads = {f"fwd.{k}": v for k, v in gf.items()}
        grads.update({f"bwd.{k}": v for k, v in gb.items()})
        return grads, (dxf + dxb) if need_dx else None


class BatchNorm(Module):
    """Batch normalization over axis 0 with running statistics for eval."""

    def __init__(self, dim: int, momentum: float = 0.99, eps: float = 1e-5):
        super().__init__()
        self.dim, self.momentum, self.eps = dim, momentum, eps
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}
        # buffers: saved with checkpoints but not optimized
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def forward(self, x, train: bool, update_stats: bool = True):
        g, b = self.params["gamma"], self.params["beta"]
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if update_stats:
                m = self.momentum
                self.running_mean *= m
                self.running_mean += (1.0 - m) * mu
                self.running_var *= m
                self.running_var += (1.0 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        return g * xhat + b, (xhat, inv, train)

    def backward(self, dy, cache):
        xhat, inv, train = cache
        g = self.params["gamma"]
        grads = {"gamma": (dy * xhat).sum(axis=0), "beta": dy.sum(axis=0)}
        dxhat = dy * g
        if train:
            n = dy.shape[0]
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return grads, dx


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1/(1-p)."""
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)
