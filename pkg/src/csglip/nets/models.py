"""Generator, discriminator and sliding-window baseline networks."""

from __future__ import annotations

import numpy as np

from ..numcore import DTYPE, ShapeError, sigmoid
from .layers import BatchNorm, BlstmLayer, Linear, Module, dropout_mask

N_MOTION = 45
N_EMOTION = 6


def _tile_conditions(x, *vectors):
    """Concatenate per-sequence vectors onto every frame of ``x``."""
    B, T, _ = x.shape
    parts = [x]
    for v in vectors:
        if v is None:
            continue
        v = np.asarray(v, dtype=DTYPE)
        if v.ndim != 2 or v.shape[0] != B:
            raise ShapeError(f"conditioning vector of shape {v.shape} does not match batch {B}")
        parts.append(np.broadcast_to(v[:, None, :], (B, T, v.shape[1])))
    return np.concatenate(parts, axis=-1)


def _check_seq(x, n_features, what):
    if x.ndim != 3 or x.shape[-1] != n_features:
        raise ShapeError(f"{what}: expected (B, T, {n_features}), got {x.shape}")
    if x.shape[1] < 1:
        raise ShapeError(f"{what}: empty sequence")


class GeneratorNet(Module):
    """Two BLSTM layers and a frame-tied linear head producing 45-D poses.

    Per-frame input is ``[x_t; z; e]``; ``z`` (one draw per sequence) and
    ``e`` are repeated on every frame. With ``noise_dim=0`` and
    ``emotion_dim=0`` this is the BLSTM regression baseline.
    """

    kind = "blstm_generator"

    def __init__(self, in_features: int, noise_dim: int = 10, emotion_dim: int = 0,
                 hidden: int = 256, out_dim: int = N_MOTION, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_features, self.noise_dim, self.emotion_dim = in_features, noise_dim, emotion_dim
        self.hidden, self.out_dim = hidden, out_dim
        n_in = in_features + noise_dim + emotion_dim
        self.layer1 = BlstmLayer(n_in, hidden, rng)
        self.layer2 = BlstmLayer(2 * hidden, hidden, rng)
        self.head = Linear(2 * hidden, out_dim, rng)
        self.children = {"layer1": self.layer1, "layer2": self.layer2, "head": self.head}

    def config(self) -> dict:
        return {"type": self.kind, "in_features": self.in_features, "noise_dim": self.noise_dim,
                "emotion_dim": self.emotion_dim, "hidden": self.hidden, "out_dim": self.out_dim}

    def forward(self, x, z=None, e=None):
        x = np.asarray(x, dtype=DTYPE)
        _check_seq(x, self.in_features, "generator features")
        if (z is None) != (self.noise_dim == 0):
            raise ShapeError(f"generator expects noise of dim {self.noise_dim}")
        if (e is None) != (self.emotion_dim == 0):
            raise ShapeError(f"generator expects emotion of dim {self.emotion_dim}")
        if z is not None and np.shape(z)[-1] != self.noise_dim:
            raise ShapeError(f"noise has dim {np.shape(z)[-1]}, expected {self.noise_dim}")
        if e is not None and np.shape(e)[-1] != self.emotion_dim:
            raise ShapeError(f"emotion has dim {np.shape(e)[-1]}, expected {self.emotion_dim}")
        inp = _tile_conditions(x, z, e)
        h1, c1 = self.layer1.forward(inp)
        h2, c2 = self.layer2.forward(h1)
        out, c3 = self.head.forward(h2)
        return out, (c1, c2, c3)

    def backward(self, dout, cache, need_dx: bool = False):
        c1, c2, c3 = cache
        grads = {}
        g, dh2 = self.head.backward(dout, c3)
        grads.update({f"head.{k}": v for k, v in g.items()})
        g, dh1 = self.layer2.backward(dh2, c2)
        grads.update({f"layer2.{k}": v for k, v in g.items()})
        g, dinp = self.layer1.backward(dh1, c1, need_dx=need_dx)
        grads.update({f"layer1.{k}": v for k, v in g.items()})
        return grads, dinp


class DiscriminatorNet(Module):
    """Two BLSTM layers and a frame-tied sigmoid head: per-frame P(real)."""

    kind = "blstm_discriminator"

    def __init__(self, in_features: int, emotion_dim: int = 0, hidden: int = 128,
                 pose_dim: int = N_MOTION, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_features, self.emotion_dim = in_features, emotion_dim
        self.hidden, self.pose_dim = hidden, pose_dim
        n_in = in_features + pose_dim + emotion_dim
        self.layer1 = BlstmLayer(n_in, hidden, rng)
        self.layer2 = BlstmLayer(2 * hidden, hidden, rng)
        self.head = Linear(2 * hidden, 1, rng)
        self.children = {"layer1": self.layer1, "layer2": self.layer2, "head": self.head}

    def config(self) -> dict:
        return {"type": self.kind, "in_features": self.in_features,
                "emotion_dim": self.emotion_dim, "hidden": self.hidden, "pose_dim": self.pose_dim}

    def forward(self, x, pose, e=None):
        x = np.asarray(x, dtype=DTYPE)
        pose = np.asarray(pose, dtype=DTYPE)
        _check_seq(x, self.in_features, "discriminator features")
        _check_seq(pose, self.pose_dim, "discriminator pose")
        if x.shape[:2] != pose.shape[:2]:
            raise ShapeError(f"features {x.shape} and pose {pose.shape} disagree on (B, T)")
        if (e is None) != (self.emotion_dim == 0):
            raise ShapeError(f"discriminator expects emotion of dim {self.emotion_dim}")
        inp = _tile_conditions(np.concatenate([x, pose], axis=-1), e)
        h1, c1 = self.layer1.forward(inp)
        h2, c2 = self.layer2.forward(h1)
        logit, c3 = self.head.forward(h2)
        y = sigmoid(logit[..., 0])
        return y, (c1, c2, c3, y)

    def backward(self, dy, cache, need_dpose: bool = False):
        """Gradients from ``dL/dy``; optionally also ``dL/dpose``."""
        c1, c2, c3, y = cache
        dlogit = (dy * y * (1.0 - y))[..., None]
        grads = {}
        g, dh2 = self.head.backward(dlogit, c3)
        grads.update({f"head.{k}": v for k, v in g.items()})
        g, dh1 = self.layer2.backward(dh2, c2)
        grads.update({f"layer2.{k}": v for k, v in g.items()})
        g, dinp = self.layer1.backward(dh1, c1, need_dx=need_dpose)
        grads.update({f"layer1.{k}": v for k, v in g.items()})
        dpose = None
        if need_dpose:
            F = self.in_features
            dpose = dinp[..., F:F + self.pose_dim]
        return grads, dpose


class SwdnnNet(Module):
    """Sliding-window feed-forward baseline: 41 input frames -> 13 output frames.

    Three blocks of linear -> batch-norm -> ReLU -> dropout, then a linear
    head. Dropout is inverted, so eval mode needs no rescaling.
    """

    kind = "swdnn"

    def __init__(self, in_features: int, hidden: int = 2000, n_layers: int = 3,
                 in_frames: int = 41, out_frames: int = 13, out_dim: int = N_MOTION,
                 dropout: float = 0.5, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_features, self.hidden, self.n_layers = in_features, hidden, n_layers
        self.in_frames, self.out_frames, self.out_dim = in_frames, out_frames, out_dim
        self.dropout = dropout
        self.fcs, self.bns = [], []
        n_in = in_frames * in_features
        for k in range(n_layers):
            fc = Linear(n_in, hidden, rng, bias=False)  # batch norm supplies the offset
            bn = BatchNorm(hidden)
            self.fcs.append(fc)
            self.bns.append(bn)
            self.children[f"fc{k + 1}"] = fc
            self.children[f"bn{k + 1}"] = bn
            n_in = hidden
        self.head = Linear(n_in, out_frames * out_dim, rng)
        self.children["head"] = self.head

    def config(self) -> dict:
        return {"type": self.kind, "in_features": self.in_features, "hidden": self.hidden,
                "n_layers": self.n_layers, "in_frames": self.in_frames,
                "out_frames": self.out_frames, "out_dim": self.out_dim, "dropout": self.dropout}

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, bn in enumerate(self.bns):
            out[f"bn{k + 1}.running_mean"] = bn.running_mean
            out[f"bn{k + 1}.running_var"] = bn.running_var
        return out

    def forward(self, window, train: bool = False, rng=None, masks=None, update_stats: bool = True):
        """``window`` is ``(B, 41, F)``. In train mode pass ``rng`` or frozen ``masks``."""
        window = np.asarray(window, dtype=DTYPE)
        if window.ndim == 2:
            window = window[None]
        if window.shape[1] != self.in_frames or window.shape[2] != self.in_features:
            raise ShapeError(f"SWDNN expects windows of ({self.in_frames}, {self.in_features}), "
                             f"got {window.shape[1:]}")
        B = window.shape[0]
        h = window.reshape(B, -1)
        caches = []
        used_masks = []
        for k in range(self.n_layers):
            a, cfc = self.fcs[k].forward(h)
            a, cbn = self.bns[k].forward(a, train, update_stats)
            r = np.maximum(a, 0.0)
            mask = None
            if train and self.dropout > 0:
                mask = masks[k] if masks is not None else dropout_mask(r.shape, self.dropout, rng)
                r = r * mask
            used_masks.append(mask)
            caches.append((cfc, cbn, a, mask))
            h = r
        out, chead = self.head.forward(h)
        out = out.reshape(B, self.out_frames, self.out_dim)
        return out, (caches, chead, used_masks)

    def backward(self, dout, cache):
        caches, chead, _ = cache
        B = dout.shape[0]
        grads = {}
        g, dh = self.head.backward(dout.reshape(B, -1), chead)
        grads.update({f"head.{k}": v for k, v in g.items()})
        for k in range(self.n_layers - 1, -1, -1):
            cfc, cbn, a, mask = caches[k]
            if mask is not None:
                dh = dh * mask
            da = dh * (a > 0)
            g, da = self.bns[k].backward(da, cbn)
            grads.update({f"bn{k + 1}.{n}": v for n, v in g.items()})
            g, dh = self.fcs[k].backward(da, cfc, need_dx=k > 0)
            grads.update({f"fc{k + 1}.{n}": v for n, v in g.items()})
        return grads, None


def build_network(cfg: dict, rng=None) -> Module:
    cfg = dict(cfg)
    kind = cfg.pop("type")
    cls = {GeneratorNet.kind: GeneratorNet, DiscriminatorNet.kind: DiscriminatorNet,
           SwdnnNet.kind: SwdnnNet}[kind]
    return cls(rng=rng, **cfg)
