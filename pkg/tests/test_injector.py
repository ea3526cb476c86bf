import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from les_engine.au import N_AU, SLOT_EMOTIONS, AUFrame, AUSequence
from les_engine.errors import BadIndex, BadTarget
from les_engine.injector import (
    AuBias,
    EmotionLevel,
    anchor_vector,
    apply_control,
    build_v_target,
    control_from_trace,
    inject_au_bias,
    inject_emotion,
    inject_sequence,
    target_od,
    trace_to_jsonl,
)
from les_engine.stats import FEATURE_KEYS, DatasetStats, FeatureTable


def fixture_table():
    rng = np.random.default_rng(5)
    uf = {k: rng.normal(size=N_AU) for k in FEATURE_KEYS}
    return FeatureTable(uf, {k: 10 for k in FEATURE_KEYS})


def fixture_stats(ods=(1.0, 2.0, 4.0)):
    emos = {e: np.ones(N_AU) for e in SLOT_EMOTIONS + ("neutral",)}
    mean_od = {(e, k): ods[k - 1] for e in SLOT_EMOTIONS for k in (1, 2, 3)}
    return DatasetStats(np.full(N_AU, 1.0), np.full(N_AU, 0.5), emos, emos, mean_od=mean_od)


def test_anchor_examples():
    t = fixture_table()
    a = anchor_vector(t, "happy", 2.0)
    assert np.array_equal(a, t[("happy", 2)])
    mid = anchor_vector(t, "happy", 1.5)
    np.testing.assert_allclose(mid, 0.5 * (t[("happy", 1)] + t[("happy", 2)]), rtol=0, atol=1e-12)
    ext = anchor_vector(t, "happy", 3.5)
    expected = t[("happy", 3)] + 0.5 * (t[("happy", 3)] - t[("happy", 2)])
    np.testing.assert_allclose(ext, expected, rtol=0, atol=1e-12)
    low = anchor_vector(t, "sad", 0.25)
    np.testing.assert_allclose(low, 0.75 * t[("neutral", 0)] + 0.25 * t[("sad", 1)], rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(SLOT_EMOTIONS), st.integers(0, 2), st.floats(0, 1))
def test_piecewise_linearity(emotion, j, lam):
    t = fixture_table()
    lo = t[("neutral", 0)] if j == 0 else t[(emotion, j)]
    hi = t[(emotion, j + 1)]
    got = anchor_vector(t, emotion, j + lam)
    np.testing.assert_allclose(got, (1 - lam) * lo + lam * hi, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, N_AU, elements=st.floats(-10, 10)), st.sampled_from(SLOT_EMOTIONS))
def test_level_zero_identity(u, emotion):
    out, u_inj = inject_emotion(u, fixture_table(), emotion, 0)
    assert np.array_equal(out, u)
    assert not u_inj.any()


def test_telescoping_from_neutral_anchor():
    t = fixture_table()
    for k in (1, 2, 3):
        u2, _ = inject_emotion(t[("neutral", 0)], t, "angry", k)
        np.testing.assert_allclose(u2, t[("angry", k)], rtol=0, atol=1e-12)


def test_injection_not_compositional():
    t = fixture_table()
    base = np.zeros(N_AU)
    once, _ = inject_emotion(base, t, "fear", 1)
    twice, _ = inject_emotion(once, t, "fear", 1)
    level2, _ = inject_emotion(base, t, "fear", 2)
    assert not np.allclose(twice, level2)


def test_au_bias_examples():
    u = np.zeros(N_AU)
    out = inject_au_bias(u, 9, 2.5)
    assert out[8] == 2.5 and np.count_nonzero(out) == 1
    assert np.array_equal(inject_au_bias(u + 0.3, 4, 0.0), u + 0.3)
    with pytest.raises(BadIndex):
        inject_au_bias(u, 0, 1.0)
    with pytest.raises(BadIndex):
        inject_au_bias(u, 18, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-2**20, 2**20), min_size=N_AU, max_size=N_AU),
       st.integers(1, N_AU), st.sampled_from([0.5, 2.5, -2.5]))
def test_au_bias_involution_on_representable_grid(ints, idx, b):
    # on a 1/64 grid every sum is exact, so +b then -b must restore u bit for bit
    u = np.asarray(ints, dtype=np.float64) / 64
    back = inject_au_bias(inject_au_bias(u, idx, b), idx, -b)
    assert np.array_equal(back, u)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, N_AU, elements=st.floats(-20, 20)), st.integers(1, N_AU))
def test_au_bias_involution_within_rounding(u, idx):
    for b in (0.5, 2.5):
        back = inject_au_bias(inject_au_bias(u, idx, b), idx, -b)
        # one rounding in each direction: error at most one ulp of |u| + |b|
        assert abs(back[idx - 1] - u[idx - 1]) <= np.spacing(abs(u[idx - 1]) + b)
        mask = np.arange(N_AU) != idx - 1
        assert np.array_equal(back[mask], u[mask])


def test_v_target_examples():
    s = fixture_stats()
    assert not build_v_target(s, "happy", 0).any()
    v = build_v_target(s, "happy", 2)
    slot = 17 + SLOT_EMOTIONS.index("happy")
    assert v[slot] == 2.0 and np.count_nonzero(v) == 1
    assert build_v_target(s, "happy", 1.5)[slot] == pytest.approx(1.5, abs=1e-15)
    assert build_v_target(s, "happy", 3.5)[slot] == pytest.approx(5.0, abs=1e-15)
    assert not build_v_target(s, "neutral", 2).any()


def test_target_od_clamped_nonnegative():
    s = fixture_stats((3.0, 2.0, 0.5))
    assert target_od(s, "sad", 10) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 6), st.floats(0, 6))
def test_v_level_monotone(a, b):
    s = fixture_stats()
    lo, hi = sorted((a, b))
    assert target_od(s, "fear", lo) <= target_od(s, "fear", hi)


def test_target_validation():
    with pytest.raises(BadTarget):
        EmotionLevel("joy", 1)
    with pytest.raises(BadTarget):
        EmotionLevel("happy", -1)
    with pytest.raises(BadTarget):
        EmotionLevel("happy", float("nan"))
    with pytest.raises(BadIndex):
        AuBias(0, 1.0)


def _seq(stats, n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = np.clip(rng.normal(1.5, 0.8, size=(n, N_AU)), 0, 5)
    return AUSequence([AUFrame(i + 10, X[i]) for i in range(n)], emotion="happy", level=2)


def test_sequence_level0_identity(stats, table):
    seq = _seq(stats)
    out, results = inject_sequence(seq, stats, table, EmotionLevel("sad", 0))
    assert out.frame_indices == seq.frame_indices
    assert np.abs(out.matrix() - seq.matrix()).max() <= 1e-9
    assert all(r.v_target is None for r in results)


def test_sequence_au_bias_pushes_through_sigma(stats, table):
    seq = _seq(stats)
    out, results = inject_sequence(seq, stats, table, AuBias(9, 2.5))
    M, O = seq.matrix(), out.matrix()
    np.testing.assert_array_equal(np.delete(O, 8, axis=1), np.delete(M, 8, axis=1))
    np.testing.assert_allclose(O[:, 8], np.clip(M[:, 8] + 2.5 * stats.sigma_d[8], 0, 5), rtol=0, atol=1e-12)
    assert out.clamp_count == sum("AU12" in r.clamp_report for r in results)


def test_sequence_emotion_target(stats, table):
    seq = _seq(stats)
    out, results = inject_sequence(seq, stats, table, EmotionLevel("sad", 3.5))
    assert len(out) == 100 and out.frame_indices == seq.frame_indices
    slot = 17 + 17 + SLOT_EMOTIONS.index("sad")
    for r in results:
        assert r.w_prime[slot] == pytest.approx(target_od(stats, "sad", 3.5))
        assert not r.w_prime[17:34].any()
    assert out.matrix().min() >= 0 and out.matrix().max() <= 5


def test_trace_replay(stats, table):
    seq = _seq(stats, n=5)
    out, results = inject_sequence(seq, stats, table, EmotionLevel("angry", 1.7))
    text = trace_to_jsonl(results)
    assert len(text.splitlines()) == 5
    assert json.loads(text.splitlines()[0])["frame"] == 10
    u_inj, v_target = control_from_trace(text)
    again, _ = apply_control(seq, stats, u_inj, v_target)
    assert np.array_equal(again.matrix(), out.matrix())
    with pytest.raises(BadTarget):
        control_from_trace("")
