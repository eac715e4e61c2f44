import numpy as np
import pytest

from csglip.dataset import SynthSpec, generate_synthetic
from csglip.nets.checkpoint import Checkpoint
from csglip.nets.models import GeneratorNet, SwdnnNet
from csglip.numcore import make_rng
from csglip.sequences import FeatureSequence, MotionSequence, read_sequence_csv
from csglip.synth import (FapMapping, SynthesisError, SynthesisRequest, crossfade_weights, export_motion,
                          plot_trajectories, read_fap, swdnn_infer, synthesize, window_starts)
from csglip.train import ScheduleSpec, train_baseline


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SynthSpec(n_utterances=20, T_range=(200, 320), seed=7))


@pytest.fixture(scope="module")
def trained(corpus):
    utts = corpus.utterances
    sched = ScheduleSpec(baseline_epochs=25, batch=32, hop=20, g_hidden=16, lr=3e-3)
    return train_baseline("blstm-ccc", utts[:16], utts[16:], sched, seed=0)


def _csg(F=27, emotion_dim=0):
    G = GeneratorNet(F, noise_dim=4, emotion_dim=emotion_dim, hidden=6, rng=make_rng(0))
    return Checkpoint("csg-emo-aware" if emotion_dim else "csg", G, None, None, {}, None, 0, {})


def test_output_length_and_determinism(corpus):
    ck = _csg()
    x = corpus.utterances[0].features
    a = synthesize(SynthesisRequest(ck, x, noise_seed=3))
    b = synthesize(SynthesisRequest(ck, x, noise_seed=3))
    c = synthesize(SynthesisRequest(ck, x, noise_seed=4))
    assert a.T == x.T and a.F == 45
    assert np.array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)
    w = synthesize(SynthesisRequest(ck, x, noise_seed=3, mode="windowed"))
    assert w.T == x.T


def test_emotion_required_iff_aware(corpus):
    x = corpus.utterances[0].features
    with pytest.raises(SynthesisError):
        synthesize(SynthesisRequest(_csg(emotion_dim=6), x))
    with pytest.raises(SynthesisError):
        synthesize(SynthesisRequest(_csg(), x, emotion="anger"))
    aware = _csg(emotion_dim=6)
    a = synthesize(SynthesisRequest(aware, x, emotion="anger"))
    b = synthesize(SynthesisRequest(aware, x, emotion=np.eye(6)[1]))
    assert np.array_equal(a.frames, b.frames)
    with pytest.raises(SynthesisError):
        synthesize(SynthesisRequest(aware, x, emotion=np.ones(6)))
    with pytest.raises(SynthesisError):
        synthesize(SynthesisRequest(_csg(), FeatureSequence(x.frames, 100.0)))
    with pytest.raises(SynthesisError):
        synthesize(SynthesisRequest(_csg(), x, mode="chunked"))


def test_windowed_agrees_with_full_on_trained_model(corpus, trained):
    for u in corpus.utterances[16:]:
        full = synthesize(SynthesisRequest(trained, u.features)).frames
        win = synthesize(SynthesisRequest(trained, u.features, mode="windowed")).frames
        # RMS difference per channel relative to that channel's RMS deviation
        ratio = np.sqrt(np.mean((win - full) ** 2, 0)) / full.std(0)
        assert ratio.max() < 0.10, ratio.max()


def test_crossfade_and_window_layout():
    w = crossfade_weights(71, 36)
    assert w.shape == (71,) and np.all(w > 0)
    np.testing.assert_allclose(w[:36], np.arange(1, 37) / 37)
    np.testing.assert_allclose(w, w[::-1])
    # a window and its successor 35 frames later share 36 frames whose weights sum to one
    np.testing.assert_allclose(w[35:] + w[:36], 1.0, atol=1e-15)
    starts = window_starts(200)
    assert starts[0] == 0 and starts[-1] == 200 - 71
    assert all(b - a <= 35 for a, b in zip(starts, starts[1:]))
    assert window_starts(71) == [0]


def _brute_swdnn(net, x):
    T = x.shape[0]
    xp = np.concatenate([np.repeat(x[:1], 20, 0), x, np.repeat(x[-1:], 20, 0)])
    preds = {t: [] for t in range(T)}
    for c in range(T):
        out = net.forward(xp[c:c + 41][None], train=False)[0][0]
        for j in range(13):
            t = c - 6 + j
            if 0 <= t < T:
                preds[t].append(out[j])
    return preds


def test_swdnn_matches_brute_force_coverage():
    net = SwdnnNet(3, hidden=5, rng=make_rng(1))
    x = np.random.default_rng(2).normal(size=(50, 3))
    y = swdnn_infer(net, x, batch=7).frames
    preds = _brute_swdnn(net, x)
    assert y.shape == (50, 45)
    assert len(preds[25]) == 13 and len(preds[0]) == 7
    for t in range(50):
        np.testing.assert_allclose(y[t], np.mean(preds[t], axis=0), atol=1e-12)
    with pytest.raises(SynthesisError):
        swdnn_infer(net, x[:40])


def test_swdnn_constant_output():
    net = SwdnnNet(3, hidden=5, rng=make_rng(3))
    net.head.params["W"][...] = 0.0
    net.head.params["b"][...] = 0.25
    y = swdnn_infer(net, np.random.default_rng(4).normal(size=(60, 3))).frames
    np.testing.assert_allclose(y, 0.25, atol=1e-15)


def test_csv_export_roundtrip(tmp_path):
    seq = MotionSequence(np.random.default_rng(5).normal(size=(40, 45)))
    back = read_sequence_csv(export_motion(seq, tmp_path / "m.csv"), expected_channels=45)
    np.testing.assert_allclose(back.frames, seq.frames, rtol=0, atol=1e-12)


def _mapping():
    neutral = np.arange(45) * 0.25 - 5.0  # dyadic values keep the endpoint arithmetic exact
    ranges = np.stack([-np.full(45, 2.0), np.full(45, 2.0)], 1)
    table = [(0, "open_jaw", -500.0, 500.0), (5, "stretch_l_cornerlip", 0.0, 1000.0)]
    return FapMapping(neutral, ranges, table)


def test_fap_endpoints_center_and_inverse(tmp_path):
    m = _mapping()
    X = np.tile(m.neutral_pose, (3, 1))
    X[1, [0, 5]] = m.neutral_pose[[0, 5]] - 2.0   # channel minimum
    X[2, [0, 5]] = m.neutral_pose[[0, 5]] + 2.0   # channel maximum
    f = m.to_fap(X)
    np.testing.assert_array_equal(f[0], [0.0, 500.0])
    np.testing.assert_array_equal(f[1], [-500.0, 0.0])
    np.testing.assert_array_equal(f[2], [500.0, 1000.0])
    Y = np.random.default_rng(6).normal(size=(20, 45))
    np.testing.assert_allclose(m.from_fap(m.to_fap(Y))[:, [0, 5]], Y[:, [0, 5]], atol=1e-12)
    with pytest.raises(ValueError):
        m.to_fap(Y, channels=[1])
    path = export_motion(MotionSequence(Y), tmp_path / "a.fap", "fap", m)
    names, vals, fps = read_fap(path)
    assert names == ["open_jaw", "stretch_l_cornerlip"] and fps == 120.0
    np.testing.assert_allclose(vals, m.to_fap(Y), atol=1e-12)
    with pytest.raises(ValueError):
        export_motion(MotionSequence(Y), tmp_path / "b.fap", "fap")
    m.save(tmp_path / "map.json")
    assert FapMapping.load(tmp_path / "map.json").to_dict() == m.to_dict()


def test_fap_rejects_degenerate_range():
    with pytest.raises(ValueError):
        FapMapping(np.zeros(45), np.zeros((45, 2)), [(0, "open_jaw", 0, 1)])


def test_plot_is_byte_identical_with_one_panel_per_channel(tmp_path):
    rng = np.random.default_rng(7)
    seqs = [MotionSequence(rng.normal(size=(60, 45))) for _ in range(2)]
    a = plot_trajectories(seqs, ["m01_x", 4, "m10_z"], tmp_path / "a.svg", labels=["real", "gen"])
    b = plot_trajectories(seqs, ["m01_x", 4, "m10_z"], tmp_path / "b.svg", labels=["real", "gen"])
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.count('id="axes_') == 3
    with pytest.raises(ValueError):
        plot_trajectories(seqs, [], tmp_path / "c.svg")
