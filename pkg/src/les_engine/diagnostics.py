"""Isolation-distance checks and clustering diagnostics on emotion-space vectors.

k-means and the Gaussian mixture are implemented here rather than borrowed
because the diagnostics need their per-iteration objective traces.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .au import N_AU, SLOT_EMOTIONS
from .errors import BadParams, DegenerateCluster, SingleCluster, TooFewPoints
from .space import N_ISO, origin_distance, tail_slot

SQRT2 = math.sqrt(2.0)
# relative slack for the isolation bound; absorbs rounding in the equality cases
BOUND_RTOL = 1e-12


@dataclass
class PairDistance:
    distance: float
    kind: str            # "inner" (same one-hot slot) or "outer"
    bound_ok: bool
    applicable: bool     # both ods equal and both vectors carry comparable tails
    od: Tuple[float, float]


def pair_distance(v1, v2, od_tol=1e-9) -> PairDistance:
    """Distance between two isolation vectors and the isolation-bound check.

    For vectors with equal origin distance ``od`` the same-slot distance is at
    most ``od*sqrt(2)`` and the cross-slot distance at least ``od*sqrt(2)``.
    The bound is only checked (``applicable``) when the two ods agree within
    ``od_tol`` and the vectors are either both emotional or both neutral;
    otherwise ``bound_ok`` is vacuously true.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != (N_ISO,) or v2.shape != (N_ISO,):
        raise ValueError(f"isolation vectors must have {N_ISO} coordinates")
    d = float(np.sqrt(np.sum((v1 - v2) ** 2)))
    s1, s2 = tail_slot(v1), tail_slot(v2)
    kind = "inner" if s1 == s2 else "outer"
    od1 = float(origin_distance(v1[:N_AU]))
    od2 = float(origin_distance(v2[:N_AU]))
    applicable = abs(od1 - od2) <= od_tol and ((s1 is None) == (s2 is None))
    ok = True
    if applicable:
        bound = 0.5 * (od1 + od2) * SQRT2
        slack = BOUND_RTOL * max(bound, 1.0)
        ok = d <= bound + slack if kind == "inner" else d >= bound - slack
    return PairDistance(d, kind, bool(ok), bool(applicable), (od1, od2))


def normalize_od(v, target=1.0):
    """Rescale isolation vectors to origin distance ``target`` (zero-od vectors left as is)."""
    v = np.asarray(v, dtype=np.float64)
    od = origin_distance(v[..., :N_AU])
    scale = np.where(od > 0, target / np.where(od > 0, od, 1.0), 1.0)
    return v * scale[..., None]


def isolation_report(V, labels=None, n_pairs=1000, seed=0, od=1.0):
    """Check the isolation bound on sampled pairs of a corpus of isolation vectors.

    Vectors are rescaled to a common origin distance first, which keeps the
    one-hot/od coupling intact. Zero-od and neutral (zero-tail) vectors are
    skipped. If the corpus has at most ``n_pairs`` pairs all are used.
    """
    V = np.asarray(V, dtype=np.float64)
    keep = [i for i in range(len(V))
            if origin_distance(V[i, :N_AU]) > 0 and tail_slot(V[i]) is not None]
    Vn = normalize_od(V[keep], od)
    m = len(keep)
    total = m * (m - 1) // 2
    if total == 0:
        return []
    if total <= n_pairs:
        pairs = [(a, b) for a in range(m) for b in range(a + 1, m)]
    else:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, m, size=n_pairs)
        b = rng.integers(0, m - 1, size=n_pairs)
        b = b + (b >= a)
        pairs = list(zip(a.tolist(), b.tolist()))
    rows = []
    for a, b in pairs:
        pd = pair_distance(Vn[a], Vn[b])
        i, j = keep[a], keep[b]
        rows.append({
            "i": i, "j": j,
            "label_i": labels[i] if labels is not None else SLOT_EMOTIONS[tail_slot(V[i])],
            "label_j": labels[j] if labels is not None else SLOT_EMOTIONS[tail_slot(V[j])],
            "kind": pd.kind,
            "distance": pd.distance,
            "bound": od * SQRT2,
            "bound_ok": pd.bound_ok,
        })
    return rows


# -- silhouette --------------------------------------------------------------

def _row_distances(X, rows):
    # accumulate coordinates left to right so results do not depend on numpy's
    # pairwise-summation blocking
    acc = np.zeros((len(rows), len(X)))
    for t in range(X.shape[1]):
        diff = X[rows, t][:, None] - X[None, :, t]
        acc += diff * diff
    return np.sqrt(acc)


def silhouette_samples(points, assignments, block=256):
    """Per-point silhouette; points alone in their cluster score 0."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(assignments)
    if len(labels) != len(X):
        raise ValueError("assignments must cover every point")
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    members = [np.flatnonzero(labels == c) for c in clusters]
    sizes = np.array([len(m) for m in members])
    own = np.searchsorted(clusters, labels)
    s = np.zeros(len(X))
    for start in range(0, len(X), block):
        rows = np.arange(start, min(start + block, len(X)))
        D = _row_distances(X, rows)
        # cumsum is a strict left-to-right sum
        sums = np.stack([np.cumsum(D[:, m], axis=1)[:, -1] for m in members], axis=1)
        for r, i in enumerate(rows):
            c = own[i]
            if sizes[c] == 1:
                continue
            a = sums[r, c] / (sizes[c] - 1)
            b = min(sums[r, o] / sizes[o] for o in range(len(clusters)) if o != c)
            denom = max(a, b)
            s[i] = 0.0 if denom == 0 else (b - a) / denom
    return s


def silhouette(points, assignments) -> float:
    """Mean silhouette coefficient (summed left to right)."""
    s = silhouette_samples(points, assignments)
    return float(np.cumsum(s)[-1] / len(s))


# -- k-means -------------------------------------------------------------------

@dataclass
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    wcss_history: List[float]
    n_iter: int
    converged: bool


def _sq_dists(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.sum(diff * diff, axis=-1)


def kmeans_pp_init(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def _fix_empty(X, C, assign, d2):
    """Re-seed empty clusters from the point farthest from its own centroid."""
    k = len(C)
    for c in range(k):
        if np.any(assign == c):
            continue
        counts = np.bincount(assign, minlength=k)
        own = d2[np.arange(len(X)), assign].copy()
        own[counts[assign] < 2] = -1.0
        far = int(np.argmax(own))
        if own[far] <= 0:
            raise DegenerateCluster(f"cluster {c} is empty and no point can re-seed it")
        C[c] = X[far]
        assign[far] = c
        d2[far] = _sq_dists(X[far][None], C)[0]
    return C, assign


def _wcss(X, C, assign):
    diff = X - C[assign]
    return float(np.sum(diff * diff))


def kmeans(points, k, seed=0, max_iter=300, tol=1e-6) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding; stops when no centroid moves more than ``tol``."""
    X = np.asarray(points, dtype=np.float64)
    _check_k(X, k)
    rng = np.random.default_rng(seed)
    C = kmeans_pp_init(X, k, rng)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, C)
        assign = np.argmin(d2, axis=1)
        C, assign = _fix_empty(X, C.copy(), assign, d2)
        newC = np.stack([X[assign == c].mean(axis=0) for c in range(k)])
        shift = float(np.max(np.sqrt(np.sum((newC - C) ** 2, axis=1))))
        C = newC
        history.append(_wcss(X, C, assign))
        if shift < tol:
            converged = True
            break
    return KMeansResult(C, assign, history, it, converged)


def _check_k(X, k):
    if X.ndim != 2:
        raise BadParams("points must be a 2-D array")
    if k < 2:
        raise BadParams(f"k must be at least 2, got {k}")
    if len(X) < k:
        raise TooFewPoints(f"{len(X)} points cannot form {k} clusters")


# -- Gaussian mixture ------------------------------------------------------------

@dataclass
class GMMResult:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    assignments: np.ndarray
    loglik_history: List[float]   # mean log-likelihood per point, one entry per E-step
    n_iter: int
    converged: bool


def _m_step(X, resp, reg):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = (resp.T @ X) / nk[:, None]
    d = X.shape[1]
    covs = np.empty((len(nk), d, d))
    for c in range(len(nk)):
        diff = X - means[c]
        covs[c] = (resp[:, c, None] * diff).T @ diff / nk[c]
        covs[c].flat[:: d + 1] += reg
    return nk / len(X), means, covs


def _log_gauss(X, means, covs):
    n, d = X.shape
    out = np.empty((n, len(means)))
    for c in range(len(means)):
        L = np.linalg.cholesky(covs[c])
        z = np.linalg.solve(L, (X - means[c]).T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, c] = -0.5 * (d * math.log(2 * math.pi) + logdet + np.sum(z * z, axis=0))
    return out


def _e_step(X, weights, means, covs):
    logp = _log_gauss(X, means, covs) + np.log(weights)
    mx = logp.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.sum(np.exp(logp - mx), axis=1))
    return float(lse.mean()), np.exp(logp - lse[:, None])


def gmm(points, k, seed=0, max_iter=200, tol=1e-6, reg=1e-6) -> GMMResult:
    """EM for a full-covariance Gaussian mixture, initialized from k-means.

    ``reg`` is added to every covariance diagonal.
    """
    X = np.asarray(points, dtype=np.float64)
    _check_k(X, k)
    init = kmeans(X, k, seed=seed)
    resp = np.zeros((len(X), k))
    resp[np.arange(len(X)), init.assignments] = 1.0
    weights, means, covs = _m_step(X, resp, reg)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ll, resp = _e_step(X, weights, means, covs)
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            converged = True
            break
        weights, means, covs = _m_step(X, resp, reg)
    return GMMResult(weights, means, covs, np.argmax(resp, axis=1), history, it, converged)


# -- report ------------------------------------------------------------------------

@dataclass
class ClusterReport:
    method: str
    k: int
    seed: int
    assignments: np.ndarray
    silhouette: float
    per_cluster_top_label: Dict[int, Tuple[str, float]] = field(default_factory=dict)
    cluster_share: Dict[int, float] = field(default_factory=dict)
    history: List[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def to_dict(self):
        return {
            "method": self.method,
            "k": self.k,
            "seed": self.seed,
            "silhouette": self.silhouette,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "history": list(self.history),
            "clusters": [
                {
                    "cluster": c,
                    "share_pct": self.cluster_share.get(c, 0.0),
                    "top_label": self.per_cluster_top_label[c][0] if c in self.per_cluster_top_label else None,
                    "top_label_pct": self.per_cluster_top_label[c][1] if c in self.per_cluster_top_label else None,
                }
                for c in range(self.k)
            ],
            "assignments": [int(a) for a in self.assignments],
        }


def cluster(points, k, method="kmeans", seed=0, labels: Optional[Sequence[str]] = None) -> ClusterReport:
    """Cluster action vectors and summarize how labels distribute over clusters."""
    X = np.asarray(points, dtype=np.float64)
    if method == "kmeans":
        res = kmeans(X, k, seed=seed)
        history = res.wcss_history
    elif method == "gmm":
        res = gmm(X, k, seed=seed)
        history = res.loglik_history
    else:
        raise BadParams(f"unknown clustering method {method!r}")
    assign = res.assignments
    score = silhouette(X, assign)
    share, top = {}, {}
    for c in range(k):
        idx = np.flatnonzero(assign == c)
        share[c] = 100.0 * len(idx) / len(X)
        if labels is not None and len(idx):
            counts = Counter(labels[i] for i in idx)
            # ties broken by label name for determinism
            label, cnt = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            top[c] = (label, 100.0 * cnt / len(idx))
    return ClusterReport(method, k, seed, assign, score, top, share, list(history), res.n_iter, res.converged)
