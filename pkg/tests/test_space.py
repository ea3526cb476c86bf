import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from les_engine.au import N_AU, SLOT_EMOTIONS, AUFrame
from les_engine.errors import StatsIncomplete
from les_engine.space import (
    N_LES,
    compose,
    decompose,
    inverse_standardize,
    isolate,
    les_from_json,
    les_to_csv,
    les_to_json,
    origin_distance,
    reconstruct,
    standardize,
    tail_slot,
)
from les_engine.stats import DatasetStats, fit_stats


def toy_stats(mode="literal"):
    mu = np.linspace(0.5, 2.1, N_AU)
    sigma = np.linspace(0.3, 1.9, N_AU)
    emo_sigma = {e: np.full(N_AU, 0.5 + i * 0.1) for i, e in enumerate(["happy", "neutral", "sad"])}
    emo_mu = {e: np.full(N_AU, 1.0) for e in emo_sigma}
    return DatasetStats(mu, sigma, emo_sigma, emo_mu, opt2_mode=mode)


def test_standardize_examples():
    s = toy_stats()
    np.testing.assert_array_equal(standardize(s.mu_d, s), np.zeros(N_AU))
    np.testing.assert_allclose(standardize(s.mu_d + s.sigma_d, s), np.ones(N_AU), rtol=0, atol=1e-15)


def test_inverse_standardize_and_clamp():
    s = toy_stats()
    au, mask = inverse_standardize(np.zeros(N_AU), s)
    np.testing.assert_array_equal(au, s.mu_d)
    assert not mask.any()
    u = (6.0 - s.mu_d) / s.sigma_d
    au, mask = inverse_standardize(u, s)
    np.testing.assert_array_equal(au, np.full(N_AU, 5.0))
    assert mask.all()


def test_isolate_examples():
    s = toy_stats()
    sig = s.sigma_emo["happy"]
    np.testing.assert_array_equal(isolate(np.zeros(N_AU), s, "happy"), np.zeros(N_AU))
    np.testing.assert_array_equal(isolate(sig, s, "happy"), np.ones(N_AU))
    np.testing.assert_array_equal(isolate(-sig, s, "happy"), np.ones(N_AU))


def test_isolate_centered_mode():
    s = toy_stats("centered")
    au = np.full(N_AU, 1.0)
    np.testing.assert_array_equal(isolate(au, s, "happy"), np.zeros(N_AU))
    np.testing.assert_allclose(isolate(au, s, "happy", mode="literal"), 1.0 / s.sigma_emo["happy"])


def test_isolate_unknown_emotion_stats():
    with pytest.raises(StatsIncomplete):
        isolate(np.zeros(N_AU), toy_stats(), "angry")


def test_origin_distance_examples():
    assert origin_distance(np.zeros(N_AU)) == 0.0
    x = np.zeros(N_AU)
    x[4] = 3.0
    assert origin_distance(x) == 3.0
    x[:2] = (3.0, 4.0)
    x[4] = 0.0
    assert origin_distance(x) == 5.0


def test_reconstruct_neutral_tail_zero():
    s = toy_stats()
    w = reconstruct(AUFrame(0, np.full(N_AU, 2.0)), s, "neutral")
    assert w.shape == (N_LES,)
    np.testing.assert_array_equal(w[34:], np.zeros(7))


def test_reconstruct_happy_slot_hand_computed():
    s = toy_stats()
    sig = s.sigma_emo["happy"][0]
    au = np.zeros(N_AU)
    # isolation coords (sqrt(2), sqrt(2)) -> od = 2
    au[0] = math.sqrt(2.0) * sig
    au[1] = math.sqrt(2.0) * sig
    w = reconstruct(au, s, "happy")
    slot = 17 + 17 + SLOT_EMOTIONS.index("happy")
    assert w[slot] == pytest.approx(2.0, abs=1e-12)
    others = [i for i in range(34, 41) if i != slot]
    assert np.all(w[others] == 0.0)


def test_reconstruct_zero_frame():
    s = toy_stats()
    w = reconstruct(np.zeros(N_AU), s, "sad")
    np.testing.assert_array_equal(w[17:], np.zeros(24))
    np.testing.assert_array_equal(w[:17], -s.mu_d / s.sigma_d)


def test_decompose_examples():
    u, v = decompose(np.zeros(N_LES))
    assert not u.any() and not v.any()
    w = np.zeros(N_LES)
    w[19] = 1.5   # e20
    _, v = decompose(w)
    assert v[2] == 1.5
    with pytest.raises(ValueError):
        decompose(np.zeros(40))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, N_LES, elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_partition_property(w):
    np.testing.assert_array_equal(compose(*decompose(w)), w)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, N_AU, elements=st.floats(0, 5, allow_nan=False)), st.sampled_from(["happy", "sad", "neutral"]))
def test_reconstruct_invariants(au, emotion):
    s = toy_stats()
    w = reconstruct(au, s, emotion)
    assert np.all(w[17:34] >= 0)
    slot = tail_slot(w[17:])
    od = origin_distance(w[17:34])
    if emotion == "neutral" or od == 0:
        assert slot is None
    else:
        assert slot == SLOT_EMOTIONS.index(emotion)
        assert abs(w[34 + slot] - od) <= 1e-9


def test_moments_on_corpus(corpus, stats):
    U = standardize(np.concatenate([s.matrix() for s in corpus]), stats)
    assert np.abs(U.mean(axis=0)).max() < 1e-9
    assert np.abs(U.std(axis=0) - 1).max() < 1e-9


def test_batch_reconstruct_matches_rows(corpus, stats):
    M = corpus[5].matrix()
    W = reconstruct(M, stats, corpus[5].emotion)
    for r in range(len(M)):
        np.testing.assert_array_equal(W[r], reconstruct(M[r], stats, corpus[5].emotion))


def test_exports():
    W = np.arange(2 * N_LES, dtype=float).reshape(2, N_LES) / 7
    np.testing.assert_array_equal(les_from_json(les_to_json(W)), W)
    text = les_to_csv(W, labels=["a", "b"])
    lines = text.splitlines()
    assert lines[0].split(",")[:3] == ["label", "e1", "e2"]
    assert float(lines[1].split(",")[4]) == W[0, 3]


def test_sigma_guard_single_emotion():
    frames = [AUFrame(i, np.full(N_AU, 1.0)) for i in range(3)]
    from les_engine.au import AUSequence
    s = fit_stats([AUSequence(frames, emotion="happy", level=1)])
    assert np.all(s.sigma_d == 1.0)
    assert s.warnings
    with pytest.raises(StatsIncomplete):
        isolate(np.zeros(N_AU), s, "sad")
