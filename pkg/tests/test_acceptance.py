"""Desk-scale acceptance run.

Every criterion records one PASS/FAIL line, printed in the terminal summary
(see conftest.py). Trained models are shared through module fixtures, so the
whole file takes several minutes on one CPU.
"""

import json
import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from csglip import cli
from csglip.dataset import (EMOTIONS, TARGET_EMOTIONS, SynthSpec, boxsmooth, generate_synthetic,
                            sample_mismatched, split_corpus)
from csglip.evalstat import (binomial_p_value, classification_metrics, fit_pca, functionals, hard_proportion,
                             mean_ccc, parzen_evaluate, parzen_logpdf, proportion_test, roc_auc,
                             train_classifier, variance_ratio, z_test_mean50)
from csglip.numcore import make_rng
from csglip.synth import SynthesisRequest, synthesize
from csglip.train import (ScheduleSpec, adapt_all_emotions, finish_csg, normalized_windows, pretrain_csg,
                          train_baseline)
from csglip.train.losses import ccc_loss

TESTS = Path(__file__).parent

# desk-scale schedule shared by every trained model below
SCHED = ScheduleSpec(pretrain_g_epochs=40, pretrain_d_epochs=20, adversarial_epochs=5, baseline_epochs=60,
                     batch=64, hop=20, lr=3e-3, adv_lr=3e-5, g_hidden=16, d_hidden=12)
ADAPT = replace(SCHED, hop=10, adapt_epochs=15, adapt_d_epochs=10, adapt_lr=3e-4)
SPEC = SynthSpec()  # 60 utterances of 300-600 frames, F = 27, with emotion gains
NOISELESS = SynthSpec(noise_sd=0.0, emotion_scale=0.0)


def generate(ck, utts, emotion="none"):
    out = []
    for k, u in enumerate(utts):
        e = None
        if emotion == "soft":
            e = u.emotion.soft
        out.append(synthesize(SynthesisRequest(ck, u.features, noise_seed=k, emotion=e)).frames)
    return out


def frames(seqs):
    return np.concatenate([np.asarray(getattr(s, "frames", s)) for s in seqs])


@pytest.fixture(scope="module")
def corpus():
    c = generate_synthetic(SPEC)
    return c, split_corpus(list(c), seed=0)


@pytest.fixture(scope="module")
def end_to_end(corpus):
    t0 = time.perf_counter()
    c, (tr, va, te) = corpus
    real = [u.motion for u in te]
    train_frames = frames(u.motion for u in tr)
    res = {"ccc": train_baseline("blstm-ccc", tr, va, SCHED, seed=0),
           "mse": train_baseline("blstm-mse", tr, va, SCHED, seed=0)}
    res["pre"] = pretrain_csg(tr, va, SCHED, seed=0)
    res["csg"] = finish_csg(res["pre"], tr, va, SCHED, seed=0)
    for name in ("ccc", "mse", "csg"):
        gen = generate(res[name], te)
        res[f"gen_{name}"] = gen
        res[f"ll_{name}"] = parzen_evaluate(frames(gen), frames(real), train_frames)["loglik_mean"]
    res["ccc_test"] = mean_ccc(res["gen_ccc"], real)

    quiet = generate_synthetic(NOISELESS)
    qtr, qva, qte = split_corpus(list(quiet), seed=0)
    qck = train_baseline("blstm-ccc", qtr, qva, SCHED, seed=0)
    res["ccc_noiseless"] = mean_ccc(generate(qck, qte), [u.motion for u in qte])
    res["seconds"] = time.perf_counter() - t0
    return res


@pytest.fixture(scope="module")
def emotion_models(corpus, end_to_end):
    c, (tr, va, te) = corpus
    aware = finish_csg(pretrain_csg(tr, va, SCHED, seed=0, emotion_aware=True), tr, va, SCHED, seed=0)
    adapted = adapt_all_emotions(end_to_end["csg"], tr, ADAPT, seed=0)
    return aware, adapted


# ---------------------------------------------------------------- 1-4: analytic and oracle checks

def test_criterion_01_gradient_checks(record_criterion):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(TESTS / "test_nets.py"), str(TESTS / "test_losses_adam.py"), "-k", "gradient"],
                          capture_output=True, text=True)
    seconds = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and seconds < 60
    record_criterion(1, ok, f"layer and loss gradient checks (eps 1e-5, tol 1e-4): {summary}; {seconds:.1f} s")
    assert ok, proc.stdout + proc.stderr


def test_criterion_02_ccc_analytic_cases(record_criterion):
    rng = make_rng(0, "accept-ccc")
    t = rng.normal(size=(1, 400, 45))
    identity = ccc_loss(t, t)[0]
    c = 0.8
    var = t[0].var(axis=0)
    shift_err = abs(ccc_loss(t + c, t)[0] - (1 - np.mean(2 * var / (2 * var + c * c))))
    indep = ccc_loss(rng.normal(size=(10000, 45)), rng.normal(size=(10000, 45)))[0]
    ok = identity == 0.0 and shift_err < 1e-9 and abs(indep - 1) < 2e-2
    record_criterion(2, ok, f"identity {identity}, shift error {shift_err:.1e}, independent {indep:.4f}")
    assert ok


def test_criterion_03_preference_statistics(record_criterion):
    hp = hard_proportion([100, 75, 50, 25])
    n = 40
    worst_prop = max(abs(proportion_test(k / n, n)[1] - _exact_binomial(k, n)) for k in range(n + 1))
    worst_scipy = max(abs(binomial_p_value(k, n) - _exact_binomial(k, n)) for k in range(n + 1))
    rng = make_rng(0, "accept-z")
    worst_z = 0.0
    for _ in range(200):
        rec = rng.choice([0, 25, 50, 75, 100], size=n, p=rng.dirichlet(np.ones(5)))
        if np.std(rec) == 0:
            continue
        z, p = z_test_mean50(rec)
        z_ref = (rec.mean() - 50) / (rec.std(ddof=1) / math.sqrt(n))
        worst_z = max(worst_z, abs(p - math.erfc(abs(z_ref) / math.sqrt(2))))
    ok = hp == 0.6 and worst_prop <= 0.02 and worst_z <= 0.02 and worst_scipy < 1e-9
    record_criterion(3, ok, f"hard_proportion {hp}; n=40 max |p - oracle|: proportion {worst_prop:.4f}, "
                            f"z-test {worst_z:.1e}")
    assert ok


def _exact_binomial(k, n):
    probs = [math.comb(n, i) * 0.5 ** n for i in range(n + 1)]
    pk = probs[k]
    return min(1.0, sum(p for p in probs if p <= pk * (1 + 1e-7)))


def test_criterion_04_parzen_and_pca(record_criterion, corpus):
    mode_err = max(abs(parzen_logpdf(np.zeros((1, 15)), h, np.zeros((1, 15)))[0]
                       + 7.5 * math.log(2 * math.pi * h * h)) for h in (0.2, 1.0, 4.0))
    rng = make_rng(0, "accept-parzen")
    S, Y, h = rng.normal(size=(12, 15)), rng.normal(size=(6, 15)), 1.3
    brute = [math.log(sum(math.exp(-sum((a - b) ** 2 for a, b in zip(y, s)) / (2 * h * h))
                          / (2 * math.pi * h * h) ** 7.5 for s in S) / len(S)) for y in Y]
    brute_err = float(np.max(np.abs(parzen_logpdf(S, h, Y) - brute)))
    c, _ = corpus
    explained = fit_pca(frames(u.motion for u in c), 15).explained_variance_ratio.sum()
    ok = mode_err < 1e-9 and brute_err < 1e-9 and explained >= 0.95
    record_criterion(4, ok, f"mode error {mode_err:.1e}, brute-force error {brute_err:.1e}, "
                            f"PCA explained variance {explained:.4f}")
    assert ok


# ---------------------------------------------------------------- 5-7: trained models

def test_criterion_05_end_to_end(record_criterion, end_to_end):
    r = end_to_end
    ok = (r["ccc_test"] >= 0.8 and r["ccc_noiseless"] >= 0.95 and r["ll_ccc"] > r["ll_mse"]
          and r["ll_csg"] >= r["ll_ccc"] and r["seconds"] < 900)
    record_criterion(5, ok, f"BLSTM-CCC CCC {r['ccc_test']:.3f} (noiseless {r['ccc_noiseless']:.3f}); loglik "
                            f"CSG {r['ll_csg']:.2f}, BLSTM-CCC {r['ll_ccc']:.2f}, BLSTM-MSE {r['ll_mse']:.2f}; "
                            f"{r['seconds']:.0f} s")
    assert ok


def test_criterion_06_discriminator_auc(record_criterion, corpus, end_to_end):
    _, (tr, va, te) = corpus
    pre = end_to_end["pre"]
    ws = normalized_windows(va, pre.normalizer, SCHED.window, SCHED.hop)
    mis = sample_mismatched(ws, make_rng(0, "accept-auc"))
    y_real, _ = pre.discriminator.forward(ws.X, ws.Y)
    y_mis, _ = pre.discriminator.forward(ws.X, mis.Y)
    auc = roc_auc(y_real.reshape(len(ws), -1).mean(1), y_mis.reshape(len(ws), -1).mean(1))
    ok = auc > 0.9
    record_criterion(6, ok, f"validation AUC real vs mismatched {auc:.4f} over {len(ws)} windows")
    assert ok


def test_criterion_07_variance_retained(record_criterion, corpus, end_to_end):
    _, (tr, va, te) = corpus
    real = [u.motion for u in va]
    vr_csg = variance_ratio(generate(end_to_end["csg"], va), real)
    vr_mse = variance_ratio(generate(end_to_end["mse"], va), real)
    ok = bool(np.all(vr_csg >= 0.5))
    record_criterion(7, ok, f"CSG min channel variance ratio {vr_csg.min():.3f} "
                            f"(BLSTM-MSE {vr_mse.min():.3f}, not required)")
    assert ok


# ---------------------------------------------------------------- 8-9: emotion models

def test_criterion_08_emotion_ordering(record_criterion, corpus, end_to_end, emotion_models):
    _, (tr, va, te) = corpus
    aware, adapted = emotion_models
    keep = lambda us: [u for u in us if u.emotion.hard in TARGET_EMOTIONS]
    tr, va, te = keep(tr), keep(va), keep(te)
    clf = train_classifier(np.stack([functionals(u.motion) for u in tr]), [u.emotion.hard for u in tr],
                           np.stack([functionals(u.motion) for u in va]), [u.emotion.hard for u in va])
    truth = [u.emotion.hard for u in te]

    def f1(seqs):
        return 100 * classification_metrics(truth, clf.predict(np.stack([functionals(s) for s in seqs])),
                                            TARGET_EMOTIONS)["f1"]

    scores = {"real": f1([u.motion for u in te]), "csg": f1(generate(end_to_end["csg"], te)),
              "aware": f1(generate(aware, te, "soft")),
              "adapted": f1([generate(adapted[u.emotion.hard], [u])[0] for u in te])}
    ok = scores["adapted"] >= scores["csg"] + 15 and scores["aware"] >= scores["csg"] + 15
    record_criterion(8, ok, f"macro-F1 adapted {scores['adapted']:.1f}, aware {scores['aware']:.1f}, "
                            f"CSG {scores['csg']:.1f} (real motion {scores['real']:.1f}, n={len(te)})")
    assert ok


def test_criterion_09_adaptation_contract(record_criterion, corpus, end_to_end, emotion_models):
    c, (tr, va, te) = corpus
    _, adapted = emotion_models
    base = end_to_end["csg"]
    layer1_same = all(np.array_equal(v, base.generator.parameters()[k])
                      for ck in adapted.values() for k, v in ck.generator.parameters().items()
                      if k.startswith("layer1."))
    # mean pose offset: generated motion minus the feature-driven part of the oracle
    def offset(ck):
        return np.mean([np.mean(g - boxsmooth(u.features.frames, SPEC.smoothing_radius) @ c.oracle.mixing.T, 0)
                        for g, u in zip(generate(ck, te), te)], axis=0)

    base_off = offset(base)
    dist = {}
    for e, ck in adapted.items():
        gain = c.oracle.gains[EMOTIONS.index(e)]
        dist[e] = (float(np.linalg.norm(base_off - gain)), float(np.linalg.norm(offset(ck) - gain)))
    ok = layer1_same and all(after < before for before, after in dist.values())
    detail = ", ".join(f"{e[:3]} {b:.2f}->{a:.2f}" for e, (b, a) in dist.items())
    record_criterion(9, ok, f"layer1 identical {layer1_same}; distance to gain row {detail}")
    assert ok


# ---------------------------------------------------------------- 10: determinism

def _cli_pipeline(root: Path):
    run = lambda *a: cli.main([str(x) for x in a])
    tiny = ["--set", "pretrain_g_epochs=2", "--set", "pretrain_d_epochs=1", "--set", "adversarial_epochs=1",
            "--set", "adapt_epochs=1", "--set", "adapt_d_epochs=1", "--set", "batch=32", "--set", "hop=20",
            "--set", "g_hidden=6", "--set", "d_hidden=5", "--set", "lr=0.003"]
    root.mkdir(parents=True)
    spec = root / "spec.json"
    spec.write_text(json.dumps({"n_utterances": 12, "T_range": [120, 160], "seed": 4}))
    codes = [run("corpus", "synth", "--spec", spec, "-o", root / "corpus"),
             run("corpus", "split", "--manifest", root / "corpus" / "manifest.jsonl", "-o", root / "split")]
    split = root / "split"
    codes.append(run("train", "--model", "csg", "--manifest", split / "train.jsonl", "--val", split / "val.jsonl",
                     "-o", root / "csg", *tiny))
    codes.append(run("adapt", "--ckpt", root / "csg" / "model.ckpt", "--manifest", split / "train.jsonl",
                     "--emotions", "anger,sadness", "-o", root / "adapted", *tiny))
    feats = sorted((root / "corpus" / "features").glob("*.feat.csv"))
    codes.append(run("synth", "--ckpt", root / "csg" / "model.ckpt", *feats, "-o", root / "gen"))
    codes.append(run("synth", "--ckpt", root / "adapted" / "anger.ckpt", *feats, "-o", root / "gen_anger"))
    codes.append(run("eval", "parzen", "--generated", root / "gen", "--test", root / "corpus" / "motion",
                     "--train", root / "corpus" / "motion", "--set", "pca_dims=5", "--set", "parzen_folds=2",
                     "--model-id", "csg", "-o", root / "parzen.json"))
    codes.append(run("eval", "emotion", "--train", split / "train.jsonl", "--val", split / "val.jsonl",
                     "--generated", root / "gen", "--labels", root / "corpus" / "manifest.jsonl",
                     "--set", "classifier_epochs=5", "--model-id", "csg", "-o", root / "emotion.json"))
    pref = root / "pref.csv"
    pref.write_text("".join(f"p{k % 3},e{k},{s}\n" for k, s in enumerate([100, 75, 50, 25, 0, 75, 50, 100])))
    codes.append(run("stats", "preference", pref, "-o", root / "pref.json"))
    codes.append(run("plot", root / "gen", "--channels", "m01_x,4", "-o", root / "plot.svg"))
    return codes


def test_criterion_10_cli_determinism(record_criterion, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    codes = _cli_pipeline(a) + _cli_pipeline(b)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and not p.name.endswith(".timing.jsonl"))
    differ = [str(p) for p in files if (a / p).read_bytes() != (b / p).read_bytes()]
    same_tree = files == sorted(p.relative_to(b) for p in b.rglob("*")
                                if p.is_file() and not p.name.endswith(".timing.jsonl"))
    ok = set(codes) == {0} and same_tree and not differ and len(files) > 0
    record_criterion(10, ok, f"{len(files)} files from 10 commands compared byte for byte; "
                             f"{len(differ)} differ; exit codes {sorted(set(codes))}")
    assert ok, differ
