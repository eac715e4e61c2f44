"""Regression and adversarial losses with analytic gradients.

Predictions and targets are ``(B, T, C)`` (a single ``(T, C)`` window is
accepted and treated as B=1). ``mask`` is ``(B, T)`` with True for valid
frames. Every function returns ``(loss, dloss/dprediction)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..numcore import DTYPE, ShapeError

BCE_CLAMP = 1e-7
MIN_TARGET_VAR = 1e-12


def _prep(p, t, mask):
    p = np.asarray(p, dtype=DTYPE)
    t = np.asarray(t, dtype=DTYPE)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ")
    squeeze = p.ndim == 2
    if squeeze:
        p, t = p[None], t[None]
    if mask is None:
        m = np.ones(p.shape[:2], dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if squeeze and m.ndim == 1:
            m = m[None]
        if m.shape != p.shape[:2]:
            raise ShapeError(f"mask {m.shape} does not match {p.shape[:2]}")
    return p, t, m, squeeze


def mse_loss(p, t, mask=None):
    """Mean squared error over unmasked frames and all channels."""
    p, t, m, squeeze = _prep(p, t, mask)
    n = m.sum() * p.shape[-1]
    if n == 0:
        raise ValueError("all frames are masked")
    diff = (p - t) * m[..., None]
    loss = float((diff ** 2).sum() / n)
    grad = 2.0 * diff / n
    return loss, (grad[0] if squeeze else grad)


@dataclass
class ChannelStats:
    mu_y: float
    mu_t: float
    var_y: float
    var_t: float
    rho: float
    ccc: float


def channel_stats(y, t) -> ChannelStats:
    """Concordance statistics for one channel (population moments)."""
    y = np.asarray(y, dtype=DTYPE)
    t = np.asarray(t, dtype=DTYPE)
    my, mt = y.mean(), t.mean()
    vy, vt = y.var(), t.var()
    cov = ((y - my) * (t - mt)).mean()
    denom = vy + vt + (my - mt) ** 2
    rho = cov / np.sqrt(vy * vt) if vy > 0 and vt > 0 else 0.0
    ccc = 2.0 * cov / denom if denom > 0 else 1.0
    return ChannelStats(my, mt, vy, vt, float(rho), float(ccc))


def ccc_per_channel(p, t, mask=None) -> np.ndarray:
    """CCC of each channel in each window, ``(B, C)``; NaN where target is flat."""
    p, t, m, _ = _prep(p, t, mask)
    w = m[..., None].astype(DTYPE)
    n = w.sum(axis=1)
    mp = (p * w).sum(axis=1) / n
    mt = (t * w).sum(axis=1) / n
    dp = (p - mp[:, None]) * w
    dt = (t - mt[:, None]) * w
    vp = (dp ** 2).sum(axis=1) / n
    vt = (dt ** 2).sum(axis=1) / n
    cov = (dp * dt).sum(axis=1) / n
    denom = vp + vt + (mp - mt) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        ccc = 2.0 * cov / denom
    ccc[vt <= MIN_TARGET_VAR] = np.nan
    return ccc


def ccc_loss(p, t, mask=None):
    """``1 - CCC`` per channel and window, averaged over channels then windows.

    Channels whose target is flat inside a window are skipped (with a
    warning); a window with every channel flat contributes nothing.
    """
    p, t, m, squeeze = _prep(p, t, mask)
    B, T, C = p.shape
    w = m[..., None].astype(DTYPE)
    n = w.sum(axis=1)  # (B, 1)
    if np.any(n < 2):
        raise ValueError("CCC needs at least two unmasked frames per window")
    mp = (p * w).sum(axis=1) / n
    mt = (t * w).sum(axis=1) / n
    dp = (p - mp[:, None]) * w
    dt = (t - mt[:, None]) * w
    vp = (dp ** 2).sum(axis=1) / n
    vt = (dt ** 2).sum(axis=1) / n
    cov = (dp * dt).sum(axis=1) / n
    shift = mp - mt
    denom = vp + vt + shift ** 2
    valid = vt > MIN_TARGET_VAR
    if not valid.all():
        warnings.warn(f"skipping {int((~valid).sum())} flat target channel(s) in CCC loss",
                      RuntimeWarning, stacklevel=2)
    safe = np.where(valid, denom, 1.0)
    ccc = np.where(valid, 2.0 * cov / safe, 0.0)
    n_valid = valid.sum(axis=1)  # per window
    windows = n_valid > 0
    if not windows.any():
        raise ValueError("every target channel is flat")
    chan_w = np.where(valid, 1.0 / np.maximum(n_valid, 1)[:, None], 0.0) / windows.sum()
    # sum then divide, so identical inputs give exactly zero loss
    per_window = ccc.sum(axis=1)[windows] / n_valid[windows]
    loss = float(1.0 - per_window.sum() / windows.sum())
    # d ccc / d p_i = 2/n * [ (t_i - mt) * denom - cov * ((p_i - mp) + shift) * 2 ] / denom^2
    # (centering terms vanish because the centred deviations sum to zero)
    num = 2.0 * cov
    coef_t = (2.0 / n) / safe
    coef_p = (num / safe ** 2) * (2.0 / n)
    dccc = coef_t[:, None] * dt - coef_p[:, None] * (dp + shift[:, None] * w)
    grad = -dccc * chan_w[:, None]
    return loss, (grad[0] if squeeze else grad)


def bce(y, label: float):
    """Frame-averaged binary cross-entropy and its gradient w.r.t. ``y``."""
    y = np.asarray(y, dtype=DTYPE)
    yc = np.clip(y, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = y.size
    if label == 1.0:
        loss = -np.log(yc).mean()
        grad = -1.0 / (yc * n)
    elif label == 0.0:
        loss = -np.log1p(-yc).mean()
        grad = 1.0 / ((1.0 - yc) * n)
    else:
        loss = -(label * np.log(yc) + (1 - label) * np.log1p(-yc)).mean()
        grad = (-(label / yc) + (1 - label) / (1.0 - yc)) / n
    # clamped entries have zero gradient
    grad = np.where((y < BCE_CLAMP) | (y > 1.0 - BCE_CLAMP), 0.0, grad)
    return float(loss), grad


def adversarial_losses(y_real, y_fake_gen, y_fake_mis=None, weights=(1.0, 1.0, 1.0)):
    """Discriminator and generator objectives from per-frame outputs.

    ``d_loss`` is the weighted mean of the BCE terms for real frames (label 1)
    and each fake kind (label 0); equal weights give equal thirds.
    ``g_loss`` scores generated frames against label 1.
    Returns ``(d_loss, g_loss, grads)`` where ``grads`` holds ``d_real``,
    ``d_gen``, ``d_mis`` (gradients of d_loss) and ``g_gen`` (of g_loss).
    """
    w = [float(weights[0]), float(weights[1]), float(weights[2]) if y_fake_mis is not None else 0.0]
    total = sum(w)
    if total <= 0:
        raise ValueError("fake_mix weights must not all be zero")
    terms = [bce(y_real, 1.0), bce(y_fake_gen, 0.0),
             bce(y_fake_mis, 0.0) if y_fake_mis is not None else (0.0, None)]
    d_loss = sum(wk * t[0] for wk, t in zip(w, terms)) / total
    g_loss, g_grad = bce(y_fake_gen, 1.0)
    grads = {"d_real": terms[0][1] * (w[0] / total), "d_gen": terms[1][1] * (w[1] / total),
             "d_mis": terms[2][1] * (w[2] / total) if terms[2][1] is not None else None,
             "g_gen": g_grad}
    return d_loss, g_loss, grads
