"""K-means clustering with validity-index based K selection and outlier removal."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.stats import rankdata

from .errors import ConfigError, PipelineError, ValidityIndexError

logger = logging.getLogger(__name__)

DEFAULT_RESTARTS = 25


@dataclass(eq=False)
class ClusterModel:
    """A fitted K-means model over station features.

    Every station is assigned to its nearest centroid (ties to the lowest
    cluster index), each centroid is the mean of its members and no cluster is
    empty. ``wcss_history`` records the objective after each accepted move of
    the winning restart.
    """

    k: int
    centroids: np.ndarray
    assignment: dict[str, int]
    wcss: float
    seed: int
    restarts: int
    wcss_history: tuple[float, ...] = field(default=(), repr=False)

    def cluster_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for c in self.assignment.values():
            sizes[c] += 1
        return sizes

    def to_json_dict(self, validity: Sequence["ValidityScores"] | None = None) -> dict:
        doc = {
            "schema_version": 1,
            "k": self.k,
            "seed": self.seed,
            "restarts": self.restarts,
            "wcss": self.wcss,
            "centroids": [[float(x) for x in row] for row in self.centroids],
            "assignment": dict(sorted(self.assignment.items())),
        }
        if validity is not None:
            doc["validity"] = [
                {"k": v.k, "davies_bouldin": v.davies_bouldin, "silhouette": v.silhouette, "dunn": v.dunn}
                for v in validity
            ]
        return doc


@dataclass(frozen=True, slots=True)
class ValidityScores:
    k: int
    davies_bouldin: float
    silhouette: float
    dunn: float


@dataclass
class OutlierReport:
    """Stations flagged as outliers before the main clustering."""

    removed_stations: set[str]
    nearest_centroid_distance: dict[str, float]
    distance_threshold: float
    small_cluster_max_size: float
    probe_k: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "probe_k": self.probe_k,
            "distance_threshold": self.distance_threshold,
            "small_cluster_max_size": self.small_cluster_max_size,
            "removed_stations": sorted(self.removed_stations),
            "nearest_centroid_distance": dict(sorted(self.nearest_centroid_distance.items())),
        }


@dataclass(frozen=True, slots=True)
class KSelection:
    chosen_k: int
    scores: tuple[ValidityScores, ...]
    disqualified: dict[int, str]


def _feature_matrix(features) -> tuple[list[str], np.ndarray]:
    if isinstance(features, Mapping):
        pairs = list(features.items())
    else:
        pairs = list(features)
        keys = [k for k, _ in pairs]
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ConfigError(f"duplicate feature keys: {dupes}")
    if not pairs:
        raise ConfigError("no features given")
    pairs.sort(key=lambda kv: kv[0])
    ids = [k for k, _ in pairs]
    X = np.asarray([np.asarray(v, dtype=float) for _, v in pairs])
    if X.ndim != 2:
        raise ConfigError("feature vectors must all have the same dimension")
    if not np.all(np.isfinite(X)):
        raise ConfigError("feature vectors must be finite")
    return ids, X


def _squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining mass sits on already-chosen points; take the
            # lowest-index point not yet chosen to keep centers distinct.
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _repair_empty(X, assign, sums, sizes):
    """Reseed any empty cluster with the point farthest from its own centroid."""
    while True:
        empty = np.flatnonzero(sizes == 0)
        if len(empty) == 0:
            return
        target = int(empty[0])
        centroids = sums / np.maximum(sizes, 1)[:, None]
        d = ((X - centroids[assign]) ** 2).sum(axis=1)
        d[sizes[assign] <= 1] = -1.0  # never empty another cluster
        donor_point = int(np.argmax(d))
        if d[donor_point] < 0:
            raise PipelineError("cannot repair empty cluster: all donors are singletons")
        src = assign[donor_point]
        assign[donor_point] = target
        sums[src] -= X[donor_point]
        sums[target] += X[donor_point]
        sizes[src] -= 1
        sizes[target] += 1


def _kmeans_single(X: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n, d = X.shape
    centers = _kmeanspp_init(X, k, rng)
    assign = np.argmin(_squared_distances(X, centers), axis=1)
    sums = np.zeros((k, d))
    np.add.at(sums, assign, X)
    sizes = np.bincount(assign, minlength=k)
    _repair_empty(X, assign, sums, sizes)

    centroids = sums / sizes[:, None]
    wcss = float(((X - centroids[assign]) ** 2).sum())
    history = [wcss]
    tol = 1e-12 * max(1.0, wcss)

    # Hartigan-Wong sweeps: candidate moves are screened against a snapshot of
    # the centroids, then re-validated one at a time against the live state so
    # each accepted move strictly reduces the objective.
    for _ in range(10_000):
        d2 = _squared_distances(X, centroids)
        own = d2[np.arange(n), assign]
        donor_sizes = sizes[assign]
        removal_gain = np.where(donor_sizes > 1, donor_sizes / np.maximum(donor_sizes - 1, 1) * own, -np.inf)
        add_cost = d2 * (sizes / (sizes + 1.0))[None, :]
        add_cost[np.arange(n), assign] = np.inf
        best_gain = removal_gain - add_cost.min(axis=1)
        candidates = np.flatnonzero(best_gain > tol)
        if len(candidates) == 0:
            break
        moved = False
        for i in candidates:
            a = int(assign[i])
            if sizes[a] <= 1:
                continue
            x = X[i]
            d2i = ((centroids - x) ** 2).sum(axis=1)
            cost = sizes / (sizes + 1.0) * d2i
            cost[a] = np.inf
            j = int(np.argmin(cost))
            gain = sizes[a] / (sizes[a] - 1.0) * d2i[a] - cost[j]
            if gain <= tol:
                continue
            sums[a] -= x
            sums[j] += x
            sizes[a] -= 1
            sizes[j] += 1
            assign[i] = j
            centroids[a] = sums[a] / sizes[a]
            centroids[j] = sums[j] / sizes[j]
            wcss -= gain
            history.append(wcss)
            moved = True
        if not moved:
            break

    # Canonicalize: exact member means, nearest assignment with ties to the
    # lowest index, then re-enter the sweep if the float cleanup moved a point.
    for _ in range(100):
        for c in range(k):
            centroids[c] = X[assign == c].mean(axis=0)
        nearest = np.argmin(_squared_distances(X, centroids), axis=1)
        changed = np.flatnonzero(nearest != assign)
        stable = True
        for i in changed:
            if sizes[assign[i]] > 1:
                sizes[assign[i]] -= 1
                sizes[nearest[i]] += 1
                assign[i] = nearest[i]
                stable = False
        if stable:
            break

    wcss = float(((X - centroids[assign]) ** 2).sum())
    return centroids, assign, wcss, history


def kmeans(
    features,
    k: int,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    *,
    threads: int = 1,
) -> ClusterModel:
    """Best-of-restarts K-means with k-means++ initialization.

    Updates follow the Hartigan-Wong single-point criterion: a point moves only
    when the move strictly reduces the within-cluster sum of squares, with the
    donor and recipient cluster sizes factored in. Deterministic for a given
    (features, k, seed, restarts) regardless of ``threads``: every restart is
    seeded independently and the winner is picked by (wcss, restart index).
    """
    ids, X = _feature_matrix(features)
    n = len(ids)
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of feature vectors ({n})")
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")

    def run(restart: int):
        rng = np.random.default_rng([seed, restart])
        return _kmeans_single(X, k, rng)

    if threads > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(restarts)))
    else:
        results = [run(r) for r in range(restarts)]

    best = min(range(restarts), key=lambda r: (results[r][2], r))
    centroids, assign, wcss, history = results[best]
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignment={ids[i]: int(assign[i]) for i in range(n)},
        wcss=wcss,
        seed=seed,
        restarts=restarts,
        wcss_history=tuple(history),
    )


def _labels_for(ids: Sequence[str], model: ClusterModel) -> np.ndarray:
    try:
        return np.array([model.assignment[i] for i in ids])
    except KeyError as exc:
        raise ValidityIndexError(f"model has no assignment for station {exc}") from exc


def _pairwise_distances(X: np.ndarray) -> np.ndarray:
    d2 = _squared_distances(X, X)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def silhouette(features, model: ClusterModel) -> float:
    """Mean silhouette width over all points.

    Per point, a is the mean distance to the other members of its own cluster
    (0 for singletons), b the smallest mean distance to another cluster, and
    the width (b - a) / max(a, b), taken as 0 when both are 0.
    """
    if model.k < 2:
        raise ValidityIndexError("silhouette is undefined for k < 2")
    ids, X = _feature_matrix(features)
    labels = _labels_for(ids, model)
    D = _pairwise_distances(X)
    onehot = np.zeros((len(ids), model.k))
    onehot[np.arange(len(ids)), labels] = 1.0
    sizes = onehot.sum(axis=0)
    if np.any(sizes == 0):
        raise ValidityIndexError("silhouette needs every cluster to have at least one member")
    sum_to_cluster = D @ onehot
    own = sum_to_cluster[np.arange(len(ids)), labels]
    own_sizes = sizes[labels]
    a = np.where(own_sizes > 1, own / np.maximum(own_sizes - 1, 1), 0.0)
    mean_to_cluster = sum_to_cluster / sizes[None, :]
    mean_to_cluster[np.arange(len(ids)), labels] = np.inf
    b = mean_to_cluster.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def davies_bouldin(features, model: ClusterModel) -> float:
    """Davies-Bouldin index: mean worst-pair dispersion-to-separation ratio."""
    if model.k < 2:
        raise ValidityIndexError("davies_bouldin is undefined for k < 2")
    ids, X = _feature_matrix(features)
    labels = _labels_for(ids, model)
    k = model.k
    sigma = np.zeros(k)
    for c in range(k):
        members = X[labels == c]
        if len(members) == 0:
            raise ValidityIndexError(f"cluster {c} is empty")
        sigma[c] = float(np.sqrt(((members - model.centroids[c]) ** 2).sum(axis=1)).mean())
    centroid_dist = _pairwise_distances(model.centroids)
    worst = 0.0
    total = 0.0
    for i in range(k):
        ratios = []
        for j in range(k):
            if j == i:
                continue
            if centroid_dist[i, j] == 0.0:
                raise ValidityIndexError(f"clusters {i} and {j} have coincident centroids")
            ratios.append((sigma[i] + sigma[j]) / centroid_dist[i, j])
        total += max(ratios)
    return float(total / k)


def dunn(features, model: ClusterModel) -> float:
    """Dunn index: minimum single-linkage inter-cluster distance over the
    maximum intra-cluster diameter."""
    if model.k < 2:
        raise ValidityIndexError("dunn is undefined for k < 2")
    ids, X = _feature_matrix(features)
    labels = _labels_for(ids, model)
    D = _pairwise_distances(X)
    same = labels[:, None] == labels[None, :]
    max_diameter = float(D[same].max()) if same.any() else 0.0
    if max_diameter == 0.0:
        raise ValidityIndexError("dunn is undefined: every cluster has zero diameter")
    min_inter = float(D[~same].min())
    return min_inter / max_diameter


def select_k(
    features,
    k_range: tuple[int, int] | range,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    *,
    threads: int = 1,
) -> KSelection:
    """Fit K-means over a K range and pick the best K by rank aggregation.

    Each candidate K is ranked per index (Davies-Bouldin ascending, silhouette
    and Dunn descending, ties sharing the mean rank) and the K with the best
    mean rank wins; ties go to the smaller K. A K whose model breaks an index
    is disqualified and logged.
    """
    if isinstance(k_range, range):
        lo, hi = k_range.start, k_range.stop - 1
    else:
        lo, hi = k_range
    ids, _ = _feature_matrix(features)
    n = len(ids)
    if not 2 <= lo <= hi <= n - 1:
        raise ConfigError(f"k_range [{lo}, {hi}] must lie within [2, {n - 1}] for {n} stations")

    scores: list[ValidityScores] = []
    disqualified: dict[int, str] = {}
    for k in range(lo, hi + 1):
        model = kmeans(features, k, seed=seed, restarts=restarts, threads=threads)
        try:
            scores.append(
                ValidityScores(
                    k=k,
                    davies_bouldin=davies_bouldin(features, model),
                    silhouette=silhouette(features, model),
                    dunn=dunn(features, model),
                )
            )
        except ValidityIndexError as exc:
            disqualified[k] = str(exc)
            logger.warning("k=%d disqualified: %s", k, exc)

    if lo == hi:
        return KSelection(chosen_k=lo, scores=tuple(scores), disqualified=disqualified)
    if not scores:
        raise PipelineError("every candidate K was disqualified by a validity index")

    db_rank = rankdata([s.davies_bouldin for s in scores])
    sil_rank = rankdata([-s.silhouette for s in scores])
    dunn_rank = rankdata([-s.dunn for s in scores])
    mean_rank = (db_rank + sil_rank + dunn_rank) / 3.0
    best = min(range(len(scores)), key=lambda i: (mean_rank[i], scores[i].k))
    return KSelection(chosen_k=scores[best].k, scores=tuple(scores), disqualified=disqualified)


def detect_outlier_stations(
    features,
    probe_k: int,
    seed: int = 0,
    *,
    restarts: int = DEFAULT_RESTARTS,
    min_cluster_fraction: float = 0.01,
    min_cluster_size: float = 2.0,
    distance_percentile: float = 95.0,
) -> OutlierReport:
    """Flag stations that sit alone and far from the main clusters.

    A station is flagged only when K-means at ``probe_k`` and single-linkage
    agglomerative clustering cut at ``probe_k`` both put it in a tiny cluster
    (size below max(min_cluster_size, min_cluster_fraction * n)) and its
    distance to the nearest large-cluster centroid exceeds the
    ``distance_percentile`` of all stations' nearest-centroid distances.
    """
    ids, X = _feature_matrix(features)
    n = len(ids)
    if n < probe_k + 2:
        raise ConfigError(f"need at least probe_k + 2 = {probe_k + 2} stations, got {n}")

    model = kmeans(features, probe_k, seed=seed, restarts=restarts)
    km_labels = _labels_for(ids, model)
    km_sizes = np.bincount(km_labels, minlength=probe_k)

    Z = linkage(X, method="single")
    h_labels = fcluster(Z, t=probe_k, criterion="maxclust")
    h_sizes = np.bincount(h_labels)

    size_cutoff = max(float(min_cluster_size), min_cluster_fraction * n)
    small_km = km_sizes < size_cutoff
    small_h = h_sizes < size_cutoff
    size_flagged = small_km[km_labels] & small_h[h_labels]

    large_centroids = model.centroids[~small_km]
    if len(large_centroids) == 0:
        large_centroids = model.centroids
    nearest = np.sqrt(_squared_distances(X, large_centroids)).min(axis=1)
    threshold = float(np.percentile(nearest, distance_percentile))
    flagged = size_flagged & (nearest > threshold)

    return OutlierReport(
        removed_stations={ids[i] for i in np.flatnonzero(flagged)},
        nearest_centroid_distance={ids[i]: float(nearest[i]) for i in range(n)},
        distance_threshold=threshold,
        small_cluster_max_size=size_cutoff,
        probe_k=probe_k,
    )


def adjusted_rand_index(labels_a: Sequence, labels_b: Sequence) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    if len(labels_a) != len(labels_b):
        raise ConfigError("labelings must have the same length")
    n = len(labels_a)
    if n == 0:
        raise ConfigError("labelings must be non-empty")
    a_codes = {v: i for i, v in enumerate(dict.fromkeys(labels_a))}
    b_codes = {v: i for i, v in enumerate(dict.fromkeys(labels_b))}
    table = np.zeros((len(a_codes), len(b_codes)), dtype=np.int64)
    for va, vb in zip(labels_a, labels_b):
        table[a_codes[va], b_codes[vb]] += 1

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table.astype(float)).sum()
    sum_a = comb2(table.sum(axis=1).astype(float)).sum()
    sum_b = comb2(table.sum(axis=0).astype(float)).sum()
    expected = sum_a * sum_b / comb2(float(n))
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
