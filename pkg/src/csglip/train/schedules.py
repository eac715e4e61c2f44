"""Training schedules: regression baselines, CSG, emotion adaptation.

Every source of randomness is derived from one integer seed through
``make_rng(seed, phase, epoch)``, so a run can be repeated (or resumed from
a checkpoint) and produce identical parameters and logs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..dataset import EMOTIONS, WindowSet, build_windows, make_batches, sample_mismatched
from ..nets.checkpoint import Checkpoint, Normalizer
from ..nets.models import N_EMOTION, DiscriminatorNet, GeneratorNet, SwdnnNet
from ..numcore import gaussian, make_rng
from .adam import AdamState, NonFiniteGradient
from .losses import adversarial_losses, bce, ccc_loss, mse_loss

BASELINE_KINDS = ("swdnn", "blstm-mse", "blstm-ccc")


@dataclass
class ScheduleSpec:
    """Epoch counts, batching and network sizes for every schedule.

    Defaults are the full-size settings (256/128 BLSTM units, lr 1e-4,
    200/100/50 epochs). ``fake_mix`` weights the real, generated and
    mismatched terms of each discriminator update. ``d_lr``, ``adv_lr`` and
    ``adapt_lr`` override ``lr`` for the discriminator, the adversarial
    phase and emotion adaptation; None means ``lr``. ``adapt_d_epochs``
    trains only the discriminator on the emotion subset before adaptive
    alternation starts, the same way ``pretrain_d_epochs`` does for the base
    model.
    """

    pretrain_g_epochs: int = 200
    pretrain_d_epochs: int = 100
    adversarial_epochs: int = 50
    adapt_epochs: int = 50
    adapt_d_epochs: int = 0
    baseline_epochs: int = 200
    swdnn_extra_epochs: int = 800
    batch: int = 128
    window: int = 71
    hop: int = 10
    fake_mix: tuple = (1.0, 1.0, 1.0)
    lr: float = 1e-4
    d_lr: float | None = None
    adv_lr: float | None = None
    adapt_lr: float | None = None
    noise_dim: int = 10
    g_hidden: int = 256
    d_hidden: int = 128
    swdnn_hidden: int = 2000
    swdnn_hop: int = 10
    keep_best: bool = True

    def __post_init__(self):
        self.fake_mix = tuple(float(v) for v in self.fake_mix)
        for f in ("pretrain_g_epochs", "pretrain_d_epochs", "adversarial_epochs", "adapt_epochs",
                  "adapt_d_epochs", "baseline_epochs", "batch", "window", "hop", "g_hidden", "d_hidden",
                  "swdnn_hidden", "swdnn_hop"):
            if getattr(self, f) < 0 or (f in ("batch", "window", "hop") and getattr(self, f) < 1):
                raise ValueError(f"{f} must be positive")
        if len(self.fake_mix) != 3 or min(self.fake_mix) < 0 or self.fake_mix[0] <= 0:
            raise ValueError("fake_mix needs three non-negative weights with a positive real weight")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["fake_mix"] = list(self.fake_mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, checkpoint=None, diagnostics=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.diagnostics = diagnostics or {}


class TrainLog:
    """Per-epoch records; optionally streamed to a JSON-lines file.

    Wall-clock times go to a separate list (and ``<log>.timing.jsonl``) so
    the main log is reproducible byte for byte.
    """

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.timings: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")
            self._timing_path = self.path.with_suffix(".timing.jsonl")
            self._timing_path.write_text("")
        self._t0 = time.perf_counter()

    def add(self, **rec):
        rec = {k: (float(v) if isinstance(v, (np.floating,)) else v) for k, v in rec.items()}
        self.records.append(rec)
        wall = {"phase": rec.get("phase"), "epoch": rec.get("epoch"),
                "wall_time": time.perf_counter() - self._t0}
        self.timings.append(wall)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            with open(self._timing_path, "a") as fh:
                fh.write(json.dumps(wall, sort_keys=True) + "\n")
        return rec


# ---------------------------------------------------------------- helpers

def normalized_windows(corpus, norm: Normalizer, L: int, hop: int) -> WindowSet:
    ws = build_windows(corpus, L, hop)
    m = ws.mask[..., None]
    return WindowSet(np.where(m, norm.x(ws.X), 0.0), np.where(m, norm.y(ws.Y), 0.0),
                     ws.E, ws.mask, ws.source_ids, ws.starts)


def _noise(rng, n, m):
    return gaussian(rng, (n, m)) if m > 0 else None


def _emotions(G, batch):
    return batch.E if G.emotion_dim > 0 else None


def _finite(value, what, ckpt, **diag):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite", ckpt, diag)


def _snapshot(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def _restore(params: dict, snap: dict):
    for k, v in params.items():
        v[...] = snap[k]


def regression_loss(G, ws: WindowSet, loss: str, seed: int, tag: str, batch: int = 256) -> float:
    """Average loss of a generator over windows (noise drawn per window)."""
    fn = ccc_loss if loss == "ccc" else mse_loss
    rng = make_rng(seed, "eval", tag)
    total, count = 0.0, 0
    for s in range(0, len(ws), batch):
        b = ws.take(np.arange(s, min(len(ws), s + batch)))
        out, _ = G.forward(b.X, _noise(rng, len(b), G.noise_dim), _emotions(G, b))
        value, _ = fn(out, b.Y, b.mask)
        total += value * len(b)
        count += len(b)
    return total / count


def _regression_epoch(G, opt, ws, loss, B, rng, frozen=()):
    fn = ccc_loss if loss == "ccc" else mse_loss
    params = G.parameters()
    total, count = 0.0, 0
    for b in make_batches(ws, B, rng):
        out, cache = G.forward(b.X, _noise(rng, len(b), G.noise_dim), _emotions(G, b))
        value, dout = fn(out, b.Y, b.mask)
        if not np.isfinite(value):
            return float("nan")
        grads, _ = G.backward(dout, cache)
        try:
            opt.step(params, grads, frozen)
        except NonFiniteGradient:
            return float("nan")
        total += value * len(b)
        count += len(b)
    return total / count


# ---------------------------------------------------------------- baselines

def _swdnn_samples(corpus, norm: Normalizer, net_in: int, net_out: int, hop: int):
    half_in, half_out = net_in // 2, net_out // 2
    X, Y = [], []
    for u in corpus:
        x = norm.x(u.features.frames)
        y = norm.y(u.motion.frames)
        T = min(len(x), len(y))
        xp = np.concatenate([np.repeat(x[:1], half_in, 0), x[:T], np.repeat(x[T - 1:T], half_in, 0)])
        for c in range(half_out, T - half_out, hop):
            X.append(xp[c:c + net_in])
            Y.append(y[c - half_out:c + half_out + 1])
    if not X:
        raise ValueError("no utterance is long enough for SWDNN training samples")
    return np.stack(X), np.stack(Y)


def _train_swdnn(train, val, schedule: ScheduleSpec, seed: int, log: TrainLog, resume=None):
    if resume is not None:
        ckpt = resume
        net, norm, opt = ckpt.generator, ckpt.normalizer, ckpt.optimizers["g"]
    else:
        norm = Normalizer.fit(train)
        F = train[0].features.F
        net = SwdnnNet(F, hidden=schedule.swdnn_hidden, rng=make_rng(seed, "init", "swdnn"))
        opt = AdamState(lr=schedule.lr)
        ckpt = Checkpoint("swdnn", net, None, norm, {"g": opt}, None, 0,
                          {"schedule": schedule.to_dict(), "seed": seed})
    Xtr, Ytr = _swdnn_samples(train, norm, net.in_frames, net.out_frames, schedule.swdnn_hop)
    Xva, Yva = _swdnn_samples(val, norm, net.in_frames, net.out_frames, schedule.swdnn_hop)
    params = net.parameters()
    epochs = schedule.baseline_epochs + schedule.swdnn_extra_epochs
    best = (ckpt.meta.get("best_val", np.inf), None)
    for epoch in range(ckpt.epoch, epochs):
        rng = make_rng(seed, "swdnn", epoch)
        order = rng.permutation(len(Xtr))
        total = 0.0
        for s in range(0, len(order), schedule.batch):
            idx = order[s:s + schedule.batch]
            if len(idx) < 2:  # batch norm needs two samples
                continue
            out, cache = net.forward(Xtr[idx], train=True, rng=rng)
            value, dout = mse_loss(out, Ytr[idx])
            _finite(value, "SWDNN loss", ckpt, epoch=epoch)
            grads, _ = net.backward(dout, cache)
            try:
                opt.step(params, grads)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(f"SWDNN: {exc}", ckpt, {"epoch": epoch}) from None
            total += value * len(idx)
        out, _ = net.forward(Xva, train=False)
        val_loss, _ = mse_loss(out, Yva)
        ckpt.epoch = epoch + 1
        log.add(phase="swdnn", epoch=epoch, train_loss=total / len(order), val_loss=val_loss)
        if val_loss < best[0]:
            best = (val_loss, _snapshot(params) | {f"buffer.{k}": v.copy() for k, v in net.buffers().items()})
    if schedule.keep_best and best[1] is not None:
        snap = best[1]
        _restore(params, snap)
        for k, v in net.buffers().items():
            v[...] = snap[f"buffer.{k}"]
        ckpt.meta["best_val"] = float(best[0])
    return ckpt


def train_baseline(kind: str, train, val, schedule: ScheduleSpec = ScheduleSpec(), seed: int = 0,
                   log_path=None, resume: Checkpoint | None = None) -> Checkpoint:
    """Train SWDNN, BLSTM-MSE or BLSTM-CCC; keeps the best-on-validation weights.

    ``resume`` continues a checkpoint saved mid-training (its ``epoch`` tells
    where to restart); pair it with ``keep_best=False`` for exact continuation.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINE_KINDS}")
    log = TrainLog(log_path)
    if kind == "swdnn":
        ckpt = _train_swdnn(train, val, schedule, seed, log, resume)
        ckpt.log = list(log.records)
        return ckpt
    loss = kind.split("-")[1]
    if resume is not None:
        ckpt = resume
        G, norm, opt = ckpt.generator, ckpt.normalizer, ckpt.optimizers["g"]
    else:
        norm = Normalizer.fit(train)
        G = GeneratorNet(train[0].features.F, noise_dim=0, emotion_dim=0, hidden=schedule.g_hidden,
                         rng=make_rng(seed, "init", kind))
        opt = AdamState(lr=schedule.lr)
        ckpt = Checkpoint(kind, G, None, norm, {"g": opt}, None, 0,
                          {"schedule": schedule.to_dict(), "seed": seed})
    tr = normalized_windows(train, norm, schedule.window, schedule.hop)
    va = normalized_windows(val, norm, schedule.window, schedule.hop)
    params = G.parameters()
    best_val, best = ckpt.meta.get("best_val", np.inf), None
    for epoch in range(ckpt.epoch, schedule.baseline_epochs):
        rng = make_rng(seed, kind, epoch)
        last_good = _snapshot(params)
        train_loss = _regression_epoch(G, opt, tr, loss, schedule.batch, rng)
        if not np.isfinite(train_loss):
            _restore(params, last_good)
            raise TrainingDiverged(f"{kind} loss became non-finite at epoch {epoch}", ckpt,
                                   {"epoch": epoch})
        val_loss = regression_loss(G, va, loss, seed, f"val{epoch}")
        ckpt.epoch = epoch + 1
        ckpt.rng_state = rng.bit_generator.state
        log.add(phase=kind, epoch=epoch, train_loss=train_loss, val_loss=val_loss)
        if val_loss < best_val:
            best_val, best = val_loss, _snapshot(params)
    if schedule.keep_best and best is not None:
        _restore(params, best)
    ckpt.meta["best_val"] = float(best_val)
    ckpt.log = list(ckpt.log) + log.records
    return ckpt


# ---------------------------------------------------------------- adversarial

def discriminator_step(G, D, batch, rng, opt_d, fake_mix, update: bool = True):
    """One discriminator update on real, generated and mismatched windows."""
    E = _emotions(G, batch)
    gen, _ = G.forward(batch.X, _noise(rng, len(batch), G.noise_dim), E)
    use_mis = fake_mix[2] > 0
    mis = sample_mismatched(batch, rng) if use_mis else None
    y_real, c_real = D.forward(batch.X, batch.Y, E)
    y_gen, c_gen = D.forward(batch.X, gen, E)
    y_mis, c_mis = D.forward(batch.X, mis.Y, E) if use_mis else (None, None)
    d_loss, _, g = adversarial_losses(y_real, y_gen, y_mis, fake_mix)
    grads, _ = D.backward(g["d_real"], c_real)
    for dy, c in ((g["d_gen"], c_gen), (g["d_mis"], c_mis)):
        if c is None:
            continue
        extra, _ = D.backward(dy, c)
        for k in grads:
            grads[k] += extra[k]
    correct = [(y_real > 0.5).mean(), (y_gen < 0.5).mean()]
    if use_mis:
        correct.append((y_mis < 0.5).mean())
    if update:
        opt_d.step(D.parameters(), grads)
    return d_loss, float(np.mean(correct))


def generator_step(G, D, batch, rng, opt_g, frozen=()):
    """One generator update: fool the frozen discriminator (labels flipped to real)."""
    E = _emotions(G, batch)
    out, cg = G.forward(batch.X, _noise(rng, len(batch), G.noise_dim), E)
    y, cd = D.forward(batch.X, out, E)
    g_loss, dy = bce(y, 1.0)
    _, dpose = D.backward(dy, cd, need_dpose=True)
    grads, _ = G.backward(dpose, cg)
    opt_g.step(G.parameters(), grads, frozen)
    return g_loss


def _batch_mix(batch, fake_mix):
    # mismatched pairs need windows from two utterances; drop that term otherwise
    if fake_mix[2] > 0 and len(set(batch.source_ids.tolist())) < 2:
        return (fake_mix[0], fake_mix[1], 0.0)
    return fake_mix


def _discriminator_phase(ckpt, ws, schedule, seed, tag, epochs, log, phase):
    """Discriminator-only epochs with the generator frozen."""
    G, D, opt_d = ckpt.generator, ckpt.discriminator, ckpt.optimizers["d"]
    for epoch in range(epochs):
        rng = make_rng(seed, tag, epoch)
        tot = acc = 0.0
        n = 0
        for b in make_batches(ws, schedule.batch, rng):
            try:
                d_loss, d_acc = discriminator_step(G, D, b, rng, opt_d, _batch_mix(b, schedule.fake_mix))
            except NonFiniteGradient as exc:
                raise TrainingDiverged(f"{phase}: {exc}", ckpt, {"epoch": epoch}) from None
            _finite(d_loss, f"{phase} loss", ckpt, epoch=epoch, d_accuracy=d_acc)
            tot += d_loss
            acc += d_acc
            n += 1
        log.add(phase=phase, epoch=epoch, d_loss=tot / max(n, 1), d_accuracy=acc / max(n, 1))


def _adversarial_phase(ckpt, ws, val_ws, schedule, seed, tag, epochs, log, frozen=(),
                       start_epoch: int = 0):
    G, D = ckpt.generator, ckpt.discriminator
    opt_g, opt_d = ckpt.optimizers["g"], ckpt.optimizers["d"]
    d_acc, g_loss = float("nan"), float("nan")
    for epoch in range(start_epoch, epochs):
        rng = make_rng(seed, tag, epoch)
        d_tot = g_tot = acc_tot = 0.0
        n = 0
        for b in make_batches(ws, schedule.batch, rng):
            try:
                d_loss, d_acc = discriminator_step(G, D, b, rng, opt_d, _batch_mix(b, schedule.fake_mix))
                g_loss = generator_step(G, D, b, rng, opt_g, frozen)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(f"{tag}: {exc}", ckpt,
                                       {"epoch": epoch, "d_accuracy": d_acc, "g_loss": g_loss}) from None
            if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
                raise TrainingDiverged(f"{tag}: adversarial losses became non-finite", ckpt,
                                       {"epoch": epoch, "d_accuracy": d_acc, "g_loss": g_loss})
            d_tot += d_loss
            g_tot += g_loss
            acc_tot += d_acc
            n += 1
        rec = {"phase": tag, "epoch": epoch, "d_loss": d_tot / max(n, 1), "g_loss": g_tot / max(n, 1),
               "d_accuracy": acc_tot / max(n, 1)}
        if val_ws is not None:
            rec["val_ccc_loss"] = regression_loss(G, val_ws, "ccc", seed, f"{tag}-val{epoch}")
        log.add(**rec)
    return ckpt


def pretrain_csg(train, val, schedule: ScheduleSpec = ScheduleSpec(), seed: int = 0,
                 emotion_aware: bool = False, log: TrainLog | None = None) -> Checkpoint:
    """Pretrain G with the CCC loss, then pretrain D with G frozen."""
    log = log if log is not None else TrainLog()
    kind = "csg-emo-aware" if emotion_aware else "csg"
    norm = Normalizer.fit(train)
    F = train[0].features.F
    emo = N_EMOTION if emotion_aware else 0
    G = GeneratorNet(F, schedule.noise_dim, emo, schedule.g_hidden, rng=make_rng(seed, "init", kind, "G"))
    D = DiscriminatorNet(F, emo, schedule.d_hidden, rng=make_rng(seed, "init", kind, "D"))
    opt_g = AdamState(lr=schedule.lr)
    opt_d = AdamState(lr=schedule.d_lr if schedule.d_lr is not None else schedule.lr)
    ckpt = Checkpoint(kind, G, D, norm, {"g": opt_g, "d": opt_d}, None, 0,
                      {"schedule": schedule.to_dict(), "seed": seed, "phase": "init"})
    tr = normalized_windows(train, norm, schedule.window, schedule.hop)
    va = normalized_windows(val, norm, schedule.window, schedule.hop)

    # the generator is pretrained exactly like the CCC regression baseline
    params = G.parameters()
    best_val, best = np.inf, None
    for epoch in range(schedule.pretrain_g_epochs):
        rng = make_rng(seed, f"{kind}-pretrain-g", epoch)
        train_loss = _regression_epoch(G, opt_g, tr, "ccc", schedule.batch, rng)
        _finite(train_loss, "generator pretraining loss", ckpt, epoch=epoch)
        val_loss = regression_loss(G, va, "ccc", seed, f"{kind}-pg{epoch}")
        log.add(phase="pretrain_g", epoch=epoch, train_loss=train_loss, val_loss=val_loss)
        if val_loss < best_val:
            best_val, best = val_loss, _snapshot(params)
    if schedule.keep_best and best is not None:
        _restore(params, best)

    _discriminator_phase(ckpt, tr, schedule, seed, f"{kind}-pretrain-d", schedule.pretrain_d_epochs, log,
                         "pretrain_d")
    ckpt.epoch = schedule.pretrain_g_epochs + schedule.pretrain_d_epochs
    ckpt.meta["phase"] = "pretrained"
    ckpt.log = list(log.records)
    return ckpt


def finish_csg(pretrained: Checkpoint, train, val, schedule: ScheduleSpec = ScheduleSpec(), seed: int = 0,
               log: TrainLog | None = None) -> Checkpoint:
    """Adversarial alternation starting from a pretrained CSG; the input is left untouched."""
    log = log if log is not None else TrainLog()
    n0 = len(log.records)
    ckpt = pretrained.copy()
    if schedule.adv_lr is not None:
        ckpt.optimizers["g"].lr = schedule.adv_lr
        ckpt.optimizers["d"].lr = schedule.d_lr if schedule.d_lr is not None else schedule.adv_lr
    tr = normalized_windows(train, ckpt.normalizer, schedule.window, schedule.hop)
    va = normalized_windows(val, ckpt.normalizer, schedule.window, schedule.hop)
    _adversarial_phase(ckpt, tr, va, schedule, seed, f"{ckpt.kind}-adversarial",
                       schedule.adversarial_epochs, log)
    ckpt.epoch = pretrained.epoch + schedule.adversarial_epochs
    ckpt.meta["phase"] = "adversarial"
    ckpt.log = list(ckpt.log) + log.records[n0:]
    return ckpt


def train_csg(train, val, schedule: ScheduleSpec = ScheduleSpec(), seed: int = 0,
              emotion_aware: bool = False, log_path=None) -> Checkpoint:
    """Pretrain G with CCC, pretrain D with G frozen, then alternate D/G per batch."""
    log = TrainLog(log_path)
    pre = pretrain_csg(train, val, schedule, seed, emotion_aware, log)
    return finish_csg(pre, train, val, schedule, seed, log)


def adapt_emotion(base: Checkpoint, subset, emotion: str, schedule: ScheduleSpec = ScheduleSpec(),
                  seed: int = 0, val_subset=None, log_path=None) -> Checkpoint:
    """Fine-tune a trained CSG on one emotion with generator layer 1 frozen."""
    from ..dataset import canonical_emotion

    emotion = canonical_emotion(emotion)
    subset = list(subset)
    if not subset:
        raise ValueError(f"no adaptation data for {emotion}")
    if base.kind not in ("csg", "csg-emo-adapted") or base.discriminator is None:
        raise ValueError("emotion adaptation needs a trained CSG checkpoint")
    log = TrainLog(log_path)
    ckpt = base.copy()
    ckpt.kind = "csg-emo-adapted"
    lr = schedule.adapt_lr if schedule.adapt_lr is not None else schedule.lr
    d_lr = schedule.d_lr if schedule.d_lr is not None else lr
    ckpt.optimizers = {"g": AdamState(lr=lr), "d": AdamState(lr=d_lr)}
    ckpt.meta = dict(ckpt.meta, emotion=emotion, base_digest=base.digest(),
                     adapt_schedule=schedule.to_dict(), adapt_seed=seed)
    ws = normalized_windows(subset, ckpt.normalizer, schedule.window, schedule.hop)
    va = normalized_windows(val_subset, ckpt.normalizer, schedule.window, schedule.hop) if val_subset else None
    _discriminator_phase(ckpt, ws, schedule, seed, f"adapt-{emotion}-d", schedule.adapt_d_epochs, log,
                         f"adapt-{emotion}-d")
    _adversarial_phase(ckpt, ws, va, schedule, seed, f"adapt-{emotion}", schedule.adapt_epochs, log,
                       frozen=("layer1.",))
    ckpt.epoch = base.epoch + schedule.adapt_d_epochs + schedule.adapt_epochs
    ckpt.log = list(log.records)
    return ckpt


def adapt_all_emotions(base, train, schedule=ScheduleSpec(), seed=0, val=None,
                       emotions=("anger", "happiness", "sadness", "frustration")) -> dict:
    from ..dataset import subset_by_emotion

    out = {}
    for e in emotions:
        vs = subset_by_emotion(val, e) if val else None
        out[e] = adapt_emotion(base, subset_by_emotion(train, e), e, schedule, seed, vs)
    return out
