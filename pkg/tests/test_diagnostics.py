import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from les_engine.au import N_AU
from les_engine.diagnostics import (
    cluster,
    gmm,
    isolation_report,
    kmeans,
    normalize_od,
    pair_distance,
    silhouette,
    silhouette_samples,
)
from les_engine.errors import DegenerateCluster, SingleCluster, TooFewPoints
from les_engine.space import N_ISO, decompose, origin_distance, reconstruct


def silhouette_oracle(points, labels):
    """Textbook double loop over the definition."""
    n = len(points)

    def dist(i, j):
        acc = 0.0
        for t in range(len(points[i])):
            acc += (points[i][t] - points[j][t]) ** 2
        return math.sqrt(acc)

    def mean_dist(i, members):
        acc = 0.0
        for j in members:
            acc += dist(i, j)
        return acc / len(members)

    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            continue
        a = mean_dist(i, same)
        b = math.inf
        for c in sorted(set(labels)):
            if c != labels[i]:
                b = min(b, mean_dist(i, [j for j in range(n) if labels[j] == c]))
        m = max(a, b)
        total += 0.0 if m == 0 else (b - a) / m
    return total / n


def random_iso_pair(rng, od, same_slot):
    v = np.zeros((2, N_ISO))
    v[:, :N_AU] = np.abs(rng.normal(size=(2, N_AU))) * (rng.random((2, N_AU)) < 0.7)
    v[v[:, :N_AU].sum(axis=1) == 0, 0] = 1.0
    s1 = rng.integers(0, 7)
    s2 = s1 if same_slot else (s1 + rng.integers(1, 7)) % 7
    v[0, N_AU + s1] = 1.0
    v[1, N_AU + s2] = 1.0
    for r in range(2):
        v[r, :N_AU] *= od / origin_distance(v[r, :N_AU])
        v[r, N_AU:] *= od
    return v


def test_pair_distance_examples():
    v = np.zeros(N_ISO)
    v[3], v[N_AU + 2] = 1.0, 1.0
    pd = pair_distance(v, v)
    assert pd.distance == 0 and pd.kind == "inner" and pd.bound_ok
    a, b = np.zeros(N_ISO), np.zeros(N_ISO)
    a[N_AU], b[N_AU + 1] = 1.0, 1.0
    pd = pair_distance(a, b)
    assert pd.distance == pytest.approx(math.sqrt(2), abs=1e-15)
    assert pd.kind == "outer" and pd.bound_ok


def test_pair_distance_same_slot_od2(rng):
    for _ in range(200):
        v = random_iso_pair(rng, 2.0, True)
        pd = pair_distance(*v)
        assert pd.applicable and pd.kind == "inner"
        assert pd.distance <= 2 * math.sqrt(2) * (1 + 1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.booleans())
def test_isolation_bound_property(seed, od, same):
    v = random_iso_pair(np.random.default_rng(seed), od, same)
    pd = pair_distance(*v)
    assert pd.applicable
    assert pd.bound_ok


def test_bound_detects_violation():
    # negative coordinates are outside the valid domain and can break the bound
    a, b = np.zeros(N_ISO), np.zeros(N_ISO)
    a[0], b[0] = 1.0, -1.0
    a[N_AU], b[N_AU] = 1.0, 1.0
    assert not pair_distance(a, b).bound_ok


def test_isolation_report_on_corpus(corpus, stats):
    W = np.concatenate([reconstruct(s.matrix(), stats, s.emotion) for s in corpus])
    _, V = decompose(W)
    rows = isolation_report(V, n_pairs=2000, seed=3)
    assert len(rows) == 2000
    assert all(r["bound_ok"] for r in rows)
    assert {r["kind"] for r in rows} == {"inner", "outer"}
    assert rows == isolation_report(V, n_pairs=2000, seed=3)


def test_normalize_od():
    v = np.zeros((2, N_ISO))
    v[0, :2] = (3, 4)
    out = normalize_od(v)
    assert origin_distance(out[0, :N_AU]) == pytest.approx(1.0)
    assert not out[1].any()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_silhouette_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    d = int(rng.integers(1, 5))
    X = rng.normal(size=(n, d))
    labels = rng.integers(0, int(rng.integers(2, n + 1)), size=n)
    if len(set(labels.tolist())) < 2:
        labels[0], labels[1] = 0, 1
    assert silhouette(X, labels) == silhouette_oracle(X.tolist(), labels.tolist())


def test_silhouette_examples():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    labels = [0, 0, 1, 1]
    assert silhouette(X, labels) == silhouette_oracle(X.tolist(), labels)
    assert silhouette(np.zeros((4, 3)), [0, 0, 1, 1]) == 0.0
    # every point alone: all singletons score 0
    assert silhouette(X, [0, 1, 2, 3]) == 0.0
    with pytest.raises(SingleCluster):
        silhouette(X, [0, 0, 0, 0])


def test_silhouette_block_invariance(rng):
    X = rng.normal(size=(70, 5))
    labels = rng.integers(0, 4, size=70)
    np.testing.assert_array_equal(silhouette_samples(X, labels, block=256), silhouette_samples(X, labels, block=7))


def blobs(rng, n=500, k=4, spread=0.6):
    centers = rng.normal(0, 4, size=(k, 3))
    idx = rng.integers(0, k, size=n)
    return centers[idx] + rng.normal(0, spread, size=(n, 3))


@pytest.mark.parametrize("seed", range(10))
def test_kmeans_wcss_non_increasing(seed):
    X = blobs(np.random.default_rng(100 + seed))
    res = kmeans(X, 5, seed=seed)
    h = res.wcss_history
    assert all(b <= a for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("seed", range(10))
def test_gmm_loglik_non_decreasing(seed):
    X = blobs(np.random.default_rng(200 + seed))
    res = gmm(X, 4, seed=seed)
    h = res.loglik_history
    assert all(b >= a - 1e-9 for a, b in zip(h, h[1:]))


def test_two_blobs_high_silhouette(rng):
    X = np.concatenate([rng.normal(0, 0.05, size=(40, 3)), rng.normal(20, 0.05, size=(40, 3))])
    for method in ("kmeans", "gmm"):
        rep = cluster(X, 2, method=method, seed=1)
        assert rep.silhouette > 0.9


def test_cluster_report_deterministic(rng):
    X = blobs(rng, n=120)
    labels = [f"c{i % 3}" for i in range(120)]
    a = cluster(X, 3, "kmeans", seed=7, labels=labels).to_dict()
    b = cluster(X, 3, "kmeans", seed=7, labels=labels).to_dict()
    assert a == b
    assert sum(c["share_pct"] for c in a["clusters"]) == pytest.approx(100.0)


def test_k_equals_n_singletons(rng):
    X = rng.normal(size=(6, 2))
    rep = cluster(X, 6, "kmeans", seed=0)
    assert len(set(rep.assignments.tolist())) == 6
    assert rep.silhouette == 0.0


def test_cluster_errors(rng):
    with pytest.raises(TooFewPoints):
        kmeans(rng.normal(size=(3, 2)), 4)
    with pytest.raises((DegenerateCluster, TooFewPoints)):
        kmeans(np.zeros((5, 2)), 3)
