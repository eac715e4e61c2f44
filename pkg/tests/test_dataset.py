import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csglip.dataset import (EMOTIONS, EmotionLabel, SynthSpec, Utterance, build_windows,
                            consensus_label, generate_synthetic, make_batches, read_manifest,
                            sample_mismatched, soft_label, split_corpus, window_utterance,
                            write_corpus)
from csglip.numcore import make_rng
from csglip.sequences import FeatureSequence, MotionSequence
from csglip.train.losses import ccc_per_channel


def _utt(uid, T, F=3, emotion="anger", speaker="s0", seed=0):
    rng = np.random.default_rng(seed)
    x = FeatureSequence(rng.normal(size=(T, F)), 120.0, tuple(f"f{k}" for k in range(F)))
    y = MotionSequence(rng.normal(size=(T, 45)))
    return Utterance(uid, speaker, x, y, EmotionLabel.one_hot(emotion), (emotion,) * 3)


def test_soft_label_examples():
    np.testing.assert_allclose(soft_label(["ang", "ang", "fru"]), [0, 2 / 3, 0, 0, 1 / 3, 0])
    np.testing.assert_allclose(soft_label(["hap"] * 3), [0, 0, 1, 0, 0, 0])
    np.testing.assert_allclose(soft_label(["neu", "sad", "oth"]), [1 / 3, 0, 0, 1 / 3, 0, 1 / 3])
    with pytest.raises(ValueError):
        soft_label([])


def test_consensus_label_examples():
    assert consensus_label(["hap", "hap", "sad"]) == "happiness"
    assert consensus_label(["hap", "sad", "ang"]) is None
    assert consensus_label(["fru"] * 3) == "frustration"


@settings(max_examples=60)
@given(st.lists(st.sampled_from(["neu", "ang", "hap", "sad", "fru", "oth", "exc", "sur"]),
                min_size=1, max_size=9))
def test_labels_live_on_simplex_and_agree(ann):
    s = soft_label(ann)
    assert np.all(s >= 0) and abs(s.sum() - 1) < 1e-9
    hard = consensus_label(ann)
    if hard is not None:
        assert EMOTIONS[int(np.argmax(s))] == hard
        assert s[EMOTIONS.index(hard)] > 0.5


def test_window_counts_and_padding():
    assert len(window_utterance(_utt("a", 200), 71, 10)) == 13
    assert len(window_utterance(_utt("a", 71), 71, 10)) == 1
    w = window_utterance(_utt("a", 50), 71, 10)
    assert len(w) == 1
    assert w.mask[0, :50].all() and not w.mask[0, 50:].any()
    assert np.all(w.X[0, 50:] == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 160), st.integers(1, 80), st.integers(1, 30))
def test_windows_are_contiguous_slices(T, L, hop):
    u = _utt("u", T)
    w = window_utterance(u, L, hop)
    for k, s in enumerate(w.starts):
        n = int(w.mask[k].sum())
        np.testing.assert_array_equal(w.X[k, :n], u.features.frames[s:s + n])
        np.testing.assert_array_equal(w.Y[k, :n], u.motion.frames[s:s + n])
    if T >= L:
        assert len(w) == (T - L) // hop + 1


def test_batches_sizes_order_and_coverage():
    corpus = [_utt(f"u{k}", 71 + 10 * 29, seed=k) for k in range(10)]
    ws = build_windows(corpus, 71, 10)
    assert len(ws) == 300
    sizes = [len(b) for b in make_batches(ws, 128, make_rng(1))]
    assert sizes == [128, 128, 44]
    a = [b.starts.tolist() + b.source_ids.tolist() for b in make_batches(ws, 128, make_rng(1))]
    b = [b.starts.tolist() + b.source_ids.tolist() for b in make_batches(ws, 128, make_rng(1))]
    assert a == b
    seen = sorted((sid, int(s)) for bt in make_batches(ws, 128, make_rng(2))
                  for sid, s in zip(bt.source_ids, bt.starts))
    assert seen == sorted(zip(ws.source_ids, map(int, ws.starts)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=8), st.integers(0, 1000))
def test_mismatched_is_derangement(counts, seed):
    corpus = [_utt(f"u{k}", 71 + 10 * (c - 1), seed=k) for k, c in enumerate(counts)]
    ws = build_windows(corpus, 71, 10)
    mis = sample_mismatched(ws, make_rng(seed))
    assert np.all(mis.motion_source_ids != mis.source_ids)
    assert np.array_equal(mis.X, ws.X)
    if max(counts) * 2 <= sum(counts):
        # permutation mode reuses every motion window exactly once
        key = lambda Y: sorted(map(bytes, Y.reshape(len(Y), -1)))
        assert key(mis.Y) == key(ws.Y)


def test_mismatched_two_utterances_swap_and_single_error():
    ws = build_windows([_utt("a", 71, seed=1), _utt("b", 71, seed=2)], 71, 10)
    mis = sample_mismatched(ws, make_rng(0))
    np.testing.assert_array_equal(mis.Y, ws.Y[::-1])
    with pytest.raises(ValueError):
        sample_mismatched(build_windows([_utt("a", 100)], 71, 10), make_rng(0))


def test_split_sizes_disjoint_deterministic():
    corpus = [_utt(f"u{k}", 10, emotion=["anger", "sadness"][k % 2], speaker=f"s{k % 3}") for k in range(100)]
    tr, va, te = split_corpus(corpus, seed=3)
    assert (len(tr), len(va), len(te)) == (60, 20, 20)
    ids = [u.id for part in (tr, va, te) for u in part]
    assert sorted(ids) == sorted(u.id for u in corpus)
    assert len(set(ids)) == 100
    again = split_corpus(corpus, seed=3)
    assert [[u.id for u in p] for p in again] == [[u.id for u in p] for p in (tr, va, te)]
    # stratification keeps each (speaker, emotion) cell represented in training
    cells = {(u.speaker, u.emotion.hard) for u in corpus}
    assert cells == {(u.speaker, u.emotion.hard) for u in tr}
    with pytest.raises(ValueError):
        split_corpus(corpus[:4])


def test_synthetic_noiseless_oracle_ccc_one():
    c = generate_synthetic(SynthSpec(n_utterances=4, T_range=(100, 120), noise_sd=0.0, seed=2))
    for u in c:
        pred = c.oracle.predict_utterance(u)
        np.testing.assert_allclose(ccc_per_channel(pred, u.motion.frames), 1.0, atol=1e-12)


def test_synthetic_emotion_offsets_by_construction():
    spec = SynthSpec(n_utterances=2, T_range=(80, 80), noise_sd=0.0, seed=5)
    c = generate_synthetic(spec)
    x = c.utterances[0].features
    ang = c.oracle.predict(x, EmotionLabel.one_hot("anger").soft)
    hap = c.oracle.predict(x, EmotionLabel.one_hot("happiness").soft)
    gains = c.oracle.gains
    np.testing.assert_allclose(ang - hap, np.broadcast_to(gains[1] - gains[2], ang.shape), atol=1e-12)


def test_synthetic_bit_identical():
    spec = SynthSpec(n_utterances=5, T_range=(50, 90), seed=11, style_sd=0.3)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    for u, v in zip(a, b):
        assert u.id == v.id and u.annotations == v.annotations
        assert np.array_equal(u.features.frames, v.features.frames)
        assert np.array_equal(u.motion.frames, v.motion.frames)


def test_synthetic_regression_recovers_mixing():
    spec = SynthSpec(n_utterances=12, T_range=(300, 300), noise_sd=0.05, seed=4, emotion_scale=0.0)
    c = generate_synthetic(spec)
    from csglip.dataset import boxsmooth

    X = np.concatenate([boxsmooth(u.features.frames, spec.smoothing_radius) for u in c])
    Y = np.concatenate([u.motion.frames for u in c])
    A_hat, *_ = np.linalg.lstsq(X, Y, rcond=None)
    err = np.abs(A_hat.T - c.oracle.mixing)
    # the noise floor for least squares over 3600 frames is well below 0.05
    assert err.max() < 0.05


def test_synth_spec_dict_roundtrip_and_rejects_unknown():
    spec = SynthSpec(n_utterances=7, T_range=(10, 20), seed=3)
    assert SynthSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"n_utterance": 3})


def test_class_counts():
    spec = SynthSpec(n_utterances=6, T_range=(20, 20), class_counts={"anger": 4, "sadness": 2}, seed=0)
    hard = [u.emotion.hard for u in generate_synthetic(spec)]
    assert sorted(hard) == ["anger"] * 4 + ["sadness"] * 2


def test_manifest_roundtrip_and_truncation(tmp_path):
    c = generate_synthetic(SynthSpec(n_utterances=3, T_range=(30, 40), seed=1))
    manifest = write_corpus(c, tmp_path)
    back = read_manifest(manifest)
    for u, v in zip(c, back):
        assert u.id == v.id and u.speaker == v.speaker
        np.testing.assert_array_equal(u.features.frames, v.features.frames)
        np.testing.assert_array_equal(u.motion.frames, v.motion.frames)
        np.testing.assert_allclose(u.emotion.soft, v.emotion.soft)
    # shorten one motion file: loading warns and truncates
    mfile = tmp_path / "motion" / "utt0000.motion.csv"
    lines = mfile.read_text().splitlines()
    mfile.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.warns(RuntimeWarning, match="truncating"):
        back = read_manifest(manifest)
    assert back[0].features.T == back[0].motion.T == c.utterances[0].T - 5


def test_manifest_rejects_bad_records(tmp_path):
    from csglip.sequences import FormatError

    p = tmp_path / "m.jsonl"
    p.write_text('{"version": 1, "id": "a"}\n')
    with pytest.raises(FormatError, match="missing keys"):
        read_manifest(p)
    p.write_text('{"version": 9, "id": "a", "speaker": "s", "features": "f", "motion": "m", "annotations": []}\n')
    with pytest.raises(FormatError, match="version"):
        read_manifest(p)
