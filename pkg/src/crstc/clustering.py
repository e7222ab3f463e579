"""KMeans, bisecting KMeans, flat-kernel Mean-Shift and silhouette-based k selection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


@dataclass
class ClusterResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centers)


def standardize(points: np.ndarray) -> np.ndarray:
    """Per-dimension z-score; constant dimensions are centred but not scaled."""
    p = np.asarray(points, dtype=np.float64)
    sd = p.std(axis=0)
    sd[sd == 0] = 1.0
    return (p - p.mean(axis=0)) / sd


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points[:, None, :] - centers[None, :, :]) ** 2
    return d.sum(axis=2)


def _inertia(points, labels, centers) -> float:
    return float(((points - centers[labels]) ** 2).sum())


def _check_input(points, k) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if len(p) == 0:
        raise ValueError("no points to cluster")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(p):
        raise ValueError(f"k={k} exceeds the number of points ({len(p)})")
    return p


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator,
              n_trials: int | None = None) -> np.ndarray:
    """Greedy kmeans++: each step samples ``n_trials`` candidates by D^2 and keeps
    the one that most lowers the potential."""
    n = len(points)
    n_trials = n_trials or 2 + int(np.log(k))
    centers = [points[rng.integers(n)]]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total == 0:
            cand = rng.integers(n, size=n_trials)
        else:
            cand = np.searchsorted(np.cumsum(closest), rng.random(n_trials) * total, side="right")
            cand = np.minimum(cand, n - 1)
        pots = [np.minimum(closest, ((points - points[c]) ** 2).sum(axis=1)) for c in cand]
        best = int(np.argmin([q.sum() for q in pots]))
        centers.append(points[cand[best]])
        closest = pots[best]
    return np.array(centers)


def _repair_empty(points, labels, centers, k) -> None:
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(((points[members] - centers[big]) ** 2).sum(axis=1))]
        labels[far] = j
        centers[j] = points[far]
        centers[big] = points[labels == big].mean(axis=0)


def _lloyd(points, centers, max_iter, tol) -> ClusterResult:
    k = len(centers)
    centers = centers.copy()
    labels = np.argmin(_sq_dists(points, centers), axis=1)
    _repair_empty(points, labels, centers, k)
    history = [_inertia(points, labels, centers)]
    it = 0
    for it in range(1, max_iter + 1):
        new = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        history.append(_inertia(points, labels, centers))
        labels = np.argmin(_sq_dists(points, centers), axis=1)
        _repair_empty(points, labels, centers, k)
        history.append(_inertia(points, labels, centers))
        if shift < tol:
            break
    centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
    return ClusterResult(labels, centers, _inertia(points, labels, centers), it, history)


def _hartigan(points, res: ClusterResult, max_sweeps: int = 100) -> ClusterResult:
    """Single-point transfers that strictly lower the inertia, until none is left."""
    labels = res.labels.copy()
    k = len(res.centers)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    centers = res.centers.copy()
    history = list(res.inertia_history)
    for _ in range(max_sweeps):
        moved = False
        for i, x in enumerate(points):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d = ((centers - x) ** 2).sum(axis=1)
            cost_out = counts[a] / (counts[a] - 1) * d[a]
            cost_in = counts / (counts + 1) * d
            cost_in[a] = np.inf
            b = int(np.argmin(cost_in))
            if cost_in[b] < cost_out * (1 - 1e-12):
                centers[a] = (centers[a] * counts[a] - x) / (counts[a] - 1)
                centers[b] = (centers[b] * counts[b] + x) / (counts[b] + 1)
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
        centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        history.append(_inertia(points, labels, centers))
    centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
    return ClusterResult(labels, centers, _inertia(points, labels, centers), res.n_iter, history)


def kmeans(points, k: int, seed=0, max_iter: int = 300, tol: float = 1e-6,
           n_init: int = 20, refine: bool = True) -> ClusterResult:
    """Lloyd's algorithm from ``n_init`` starts; the lowest inertia wins.

    Starts alternate between greedy kmeans++ and Forgy (k distinct points drawn
    uniformly); D^2 seeding alone keeps picking outliers on tiny sets. Each Lloyd solution is polished with Hartigan single-point transfers when
    ``refine`` is set. Initial centres are drawn through a seeded shuffle of the
    input, so the result depends only on the seed and the input order.
    """
    p = _check_input(points, k)
    rng = np.random.default_rng(seed)
    best: ClusterResult | None = None
    for i in range(max(1, n_init)):
        perm = rng.permutation(len(p))
        init = _kmeanspp(p[perm], k, rng) if i % 2 == 0 else p[perm[:k]]
        res = _lloyd(p, init, max_iter, tol)
        if refine:
            res = _hartigan(p, res)
        if best is None or res.inertia < best.inertia - 1e-12:
            best = res
    return best


def bisecting_kmeans(points, k: int, seed=0, max_iter: int = 300, tol: float = 1e-6,
                     n_init: int = 20) -> ClusterResult:
    """Split the highest-inertia cluster with 2-means until there are ``k`` clusters."""
    p = _check_input(points, k)
    rng = np.random.default_rng(seed)
    labels = np.zeros(len(p), dtype=np.int64)
    while labels.max() + 1 < k:
        sse = []
        for j in range(labels.max() + 1):
            m = p[labels == j]
            sse.append(((m - m.mean(axis=0)) ** 2).sum() if len(m) > 1 else -1.0)
        target = int(np.argmax(sse))
        members = np.flatnonzero(labels == target)
        split = kmeans(p[members], 2, seed=int(rng.integers(2**32)), max_iter=max_iter,
                       tol=tol, n_init=n_init)
        labels[members[split.labels == 1]] = labels.max() + 1
    centers = np.array([p[labels == j].mean(axis=0) for j in range(k)])
    return ClusterResult(labels, centers, _inertia(p, labels, centers))


def default_bandwidth(points) -> float:
    """Half the median pairwise distance."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    d = np.sqrt(_sq_dists(p, p))
    iu = np.triu_indices(len(p), 1)
    med = float(np.median(d[iu])) if len(iu[0]) else 0.0
    return 0.5 * med if med > 0 else 1.0


def mean_shift(points, bandwidth: float | None = None, max_iter: int = 300,
               tol: float | None = None) -> ClusterResult:
    """Flat-kernel mean shift started from every point.

    Converged modes within ``bandwidth / 2`` of a better-supported mode are
    merged into it; points take the label of their nearest surviving mode.
    """
    p = _check_input(points, 1)
    bw = default_bandwidth(p) if bandwidth is None else float(bandwidth)
    if bw <= 0:
        raise ValueError("bandwidth must be > 0")
    tol = 1e-3 * bw if tol is None else tol
    modes = p.copy()
    active = np.ones(len(p), dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        within = _sq_dists(modes[idx], p) <= bw * bw
        new = (within @ p) / within.sum(axis=1, keepdims=True)
        moved = np.sqrt(((new - modes[idx]) ** 2).sum(axis=1))
        modes[idx] = new
        active[idx[moved < tol]] = False

    support = (_sq_dists(modes, p) <= bw * bw).sum(axis=1)
    order = sorted(range(len(modes)), key=lambda i: (-support[i], i))
    kept: list[np.ndarray] = []
    for i in order:
        if all(np.sqrt(((modes[i] - m) ** 2).sum()) >= bw / 2 for m in kept):
            kept.append(modes[i])
    centers = np.array(kept)
    labels = np.argmin(_sq_dists(p, centers), axis=1)
    return ClusterResult(labels, centers, _inertia(p, labels, centers), it)


def silhouette_score(points, labels) -> float:
    """Mean silhouette coefficient; points in singleton clusters score 0."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        return 0.0
    d = np.sqrt(_sq_dists(p, p))
    s = np.zeros(len(p))
    for i in range(len(p)):
        own = labels == labels[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue
        a = d[i, own].sum() / n_own
        b = min(d[i, labels == c].mean() for c in uniq if c != labels[i])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(s.mean())


def select_k(points, candidates: Iterable[int] = range(2, 9), seed=0) -> int:
    """Candidate k whose KMeans clustering has the best mean silhouette; ties go to smaller k."""
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("no candidate k values")
    p = np.asarray(points, dtype=np.float64)
    if len(p) < max(cands):
        raise ValueError(f"{len(p)} points cannot support k={max(cands)}")
    if len(cands) == 1:
        return cands[0]
    best_k, best_s = cands[0], -np.inf
    for k in cands:
        s = silhouette_score(p, kmeans(p, k, seed=seed).labels)
        if s > best_s + 1e-12:
            best_k, best_s = k, s
    return best_k


def cluster(points, method: str = "kmeans", k: int | str = 2, seed=0,
            bandwidth: float | None = None) -> ClusterResult:
    """Dispatch by method name: ``kmeans``, ``bisecting`` or ``meanshift``; ``k='auto'`` uses select_k."""
    if method == "meanshift":
        return mean_shift(points, bandwidth)
    if k == "auto":
        k = select_k(points, seed=seed)
    if method == "kmeans":
        return kmeans(points, int(k), seed=seed)
    if method == "bisecting":
        return bisecting_kmeans(points, int(k), seed=seed)
    raise ValueError(f"unknown clustering method {method!r}")
