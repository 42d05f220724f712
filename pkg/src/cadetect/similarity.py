"""Case similarity over context attributes and neighbourhood selection.

Distances are squared quadratic forms ``(w*d) G (w*d)^T`` with ``d = a - b``
and ``G`` the inverse of the shape matrix (identity for the Euclidean kind,
a regularised inverse covariance for the Mahalanobis kinds). They are
evaluated as ``||T(a) - T(b)||^2`` with ``T(x) = (w*x) L`` and ``G = L L^T``,
which makes symmetry and zero self-distance exact in floating point and
lets batched and pairwise evaluation agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .dataset import CaseRecord, Dataset, context_of

EUCLIDEAN = "euclidean"
MAHALANOBIS = "mahalanobis"
WEIGHTED_MAHALANOBIS = "weighted_mahalanobis"
METRIC_KINDS = (EUCLIDEAN, MAHALANOBIS, WEIGHTED_MAHALANOBIS)

DEFAULT_EPSILON = 1e-6
REJECTION_SIGMAS = 2.0


class NeighborhoodError(ValueError):
    """Not enough reference cases for the requested neighbourhood."""


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    w: np.ndarray
    z: np.ndarray | None = None  # signed rank-sum statistics behind w

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or np.any(w > 1):
            raise ValueError("importance weights must be a vector with entries in [0, 1]")
        if w.size and w.max() != 1 and np.any(w != 0):
            raise ValueError("importance weights must have max 1 unless all zero")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, eq=False)
class MetricConfig:
    kind: str
    gamma_inverse: np.ndarray
    weights: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        g = np.asarray(self.gamma_inverse, dtype=float)
        w = np.asarray(getattr(self.weights, "w", self.weights), dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gamma_inverse must be square")
        if w.shape != (g.shape[0],):
            raise ValueError("weights length must match gamma_inverse dimension")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not np.allclose(g, g.T, rtol=0, atol=1e-9):
            raise ValueError("gamma_inverse must be symmetric")
        try:
            factor = np.linalg.cholesky(g) if g.size else g.copy()
        except np.linalg.LinAlgError:
            raise ValueError("gamma_inverse must be positive definite") from None
        for arr in (g, w, factor):
            arr.setflags(write=False)
        object.__setattr__(self, "gamma_inverse", g)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_factor", factor)

    @property
    def dim(self) -> int:
        return self.gamma_inverse.shape[0]

    def transform(self, X) -> np.ndarray:
        """Rows mapped so that squared Euclidean distance equals the metric."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"vectors have dimension {X.shape[1]}, metric has {self.dim}")
        # broadcast-and-sum rather than matmul: identical per-row arithmetic
        # regardless of batch size
        return ((X * self.weights)[:, :, None] * self._factor[None, :, :]).sum(axis=1)

    @classmethod
    def euclidean(cls, dim: int) -> "MetricConfig":
        return cls(EUCLIDEAN, np.eye(dim), np.ones(dim))


@dataclass(frozen=True)
class NeighborhoodResult:
    neighbor_indices: tuple[int, ...]
    distances: tuple[float, ...]
    target_avg_distance: float
    population_mean: float = float("nan")
    population_std: float = float("nan")
    accepted: bool = True


def covariance_matrix(data: Dataset) -> np.ndarray:
    """Population covariance (divisor n) of the context attributes as 0/1 reals."""
    if len(data) == 0:
        raise ValueError("covariance of an empty dataset is undefined")
    X = data.context_matrix().astype(float)
    centered = X - X.mean(axis=0)
    sigma = centered.T @ centered / X.shape[0]
    return (sigma + sigma.T) / 2


def regularized_inverse(sigma, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Inverse of ``sigma + epsilon * I``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    sigma = np.asarray(sigma, dtype=float)
    inv = np.linalg.inv(sigma + epsilon * np.eye(sigma.shape[0]))
    return (inv + inv.T) / 2


def rank_sum_z(values: np.ndarray, group: np.ndarray) -> float:
    """Tie-corrected Wilcoxon rank-sum z for the ``group`` sample.

    Zero when the pooled values are constant.
    """
    values = np.asarray(values, dtype=float)
    group = np.asarray(group, dtype=bool)
    n = values.size
    n1 = int(group.sum())
    n2 = n - n1
    if n1 == 0 or n2 == 0:
        raise ValueError("rank-sum needs two nonempty groups")
    if values.min() == values.max():
        return 0.0
    ranks = rankdata(values)
    r1 = ranks[group].sum()
    _, ties = np.unique(values, return_counts=True)
    tie_term = float(np.sum(ties.astype(float) ** 3 - ties))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    return float((r1 - n1 * (n + 1) / 2.0) / np.sqrt(var))


def rank_sum_weights(data: Dataset) -> ImportanceWeights:
    """|z| of each context attribute against the target, scaled to max 1."""
    y = data.target_vector().astype(bool)
    if len(data) == 0 or y.all() or not y.any():
        raise ValueError("rank-sum weights need both target values present")
    X = data.context_matrix()
    z = np.array([rank_sum_z(X[:, j], y) for j in range(X.shape[1])])
    mag = np.abs(z)
    top = mag.max(initial=0.0)
    w = mag / top if top > 0 else np.zeros_like(mag)
    return ImportanceWeights(w, z)


def build_metric(kind: str, reference: Dataset, epsilon: float = DEFAULT_EPSILON) -> MetricConfig:
    """Metric whose covariance and weights are estimated on ``reference``."""
    dim = reference.schema.arity - 1
    if kind == EUCLIDEAN:
        return MetricConfig(EUCLIDEAN, np.eye(dim), np.ones(dim), epsilon)
    g = regularized_inverse(covariance_matrix(reference), epsilon)
    if kind == MAHALANOBIS:
        return MetricConfig(MAHALANOBIS, g, np.ones(dim), epsilon)
    if kind == WEIGHTED_MAHALANOBIS:
        return MetricConfig(WEIGHTED_MAHALANOBIS, g, rank_sum_weights(reference).w, epsilon)
    raise ValueError(f"unknown metric kind {kind!r}")


def distance(metric: MetricConfig, a, b) -> float:
    """Squared generalised distance between two context vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (metric.dim,) or b.shape != (metric.dim,):
        raise ValueError(f"vectors must have dimension {metric.dim}")
    ta, tb = metric.transform(a)[0], metric.transform(b)[0]
    return float(((ta - tb) ** 2).sum())


def distances_to(metric: MetricConfig, X, q) -> np.ndarray:
    """Distances from context vector ``q`` to every row of ``X``."""
    Y = metric.transform(X)
    yq = metric.transform(q)[0]
    return ((Y - yq) ** 2).sum(axis=1)


def _same_case(record: CaseRecord, query: CaseRecord) -> bool:
    return record is query or (query.case_id is not None and record.case_id == query.case_id)


def _candidates(data: Dataset, query: CaseRecord) -> np.ndarray:
    return np.array([i for i, r in enumerate(data) if not _same_case(r, query)], dtype=np.int64)


def _query_context(data: Dataset, query: CaseRecord) -> np.ndarray:
    if len(query.values) != data.schema.arity:
        raise ValueError("query arity does not match the dataset schema")
    return np.array(context_of(query, data.schema), dtype=float)


def nearest_rows(X, q, k: int, metric: MetricConfig) -> tuple[np.ndarray, np.ndarray]:
    """Positions and distances of the ``k`` rows of ``X`` closest to ``q``.

    Sorted by (distance, row position) ascending.
    """
    X = np.asarray(X, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > X.shape[0]:
        raise NeighborhoodError(f"k={k} exceeds the {X.shape[0]} available records")
    d = distances_to(metric, X, q)
    order = np.lexsort((np.arange(d.size), d))[:k]
    return order, d[order]


def k_best_average_distances(X, k: int, metric: MetricConfig, chunk: int = 64) -> np.ndarray:
    """For each row, the mean distance to its ``k`` nearest other rows.

    Works on distinct rows with multiplicities, so duplicated binary
    contexts cost nothing extra.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if k > n - 1:
        raise NeighborhoodError(f"k={k} exceeds the {n - 1} other records")
    patterns, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    Y = metric.transform(patterns)
    u = patterns.shape[0]
    averages = np.empty(u)
    for start in range(0, u, chunk):
        stop = min(start + chunk, u)
        D = ((Y[start:stop, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)
        mult = np.broadcast_to(counts, D.shape).copy()
        mult[np.arange(stop - start), np.arange(start, stop)] -= 1
        order = np.argsort(D, axis=1, kind="stable")
        Ds = np.take_along_axis(D, order, axis=1)
        Cs = np.take_along_axis(mult, order, axis=1)
        before = np.cumsum(Cs, axis=1) - Cs
        take = np.clip(k - before, 0, Cs)
        averages[start:stop] = (Ds * take).sum(axis=1) / k
    return averages[inverse]


def neighborhood_check(X, q, k: int, metric: MetricConfig,
                       sigmas: float = REJECTION_SIGMAS) -> NeighborhoodResult:
    """k-best matches of ``q`` among the rows of ``X`` plus the distance check.

    ``X`` must not contain the query. Each row's own k-best average distance
    (among the other rows) forms the reference population; the query is
    accepted when its average is at most mean + sigmas * std, with the
    population standard deviation.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise NeighborhoodError("need at least 2 non-query records")
    pos, dist = nearest_rows(X, q, k, metric)
    averages = k_best_average_distances(X, k, metric)
    target_avg = float(dist.mean())
    mean = float(averages.mean())
    std = float(averages.std())
    return NeighborhoodResult(
        neighbor_indices=tuple(int(i) for i in pos),
        distances=tuple(float(x) for x in dist),
        target_avg_distance=target_avg,
        population_mean=mean,
        population_std=std,
        accepted=bool(target_avg <= mean + sigmas * std),
    )


def _remap(result: NeighborhoodResult, cand: np.ndarray) -> NeighborhoodResult:
    return replace(result, neighbor_indices=tuple(int(cand[i]) for i in result.neighbor_indices))


def k_best_matches(data: Dataset, query: CaseRecord, k: int, metric: MetricConfig) -> NeighborhoodResult:
    """The ``k`` records closest to ``query``, ties going to the lower index.

    Records that are the query itself (same object, or same case_id) are
    never selected.
    """
    cand = _candidates(data, query)
    pos, dist = nearest_rows(data.context_matrix()[cand], _query_context(data, query), k, metric)
    return NeighborhoodResult(
        neighbor_indices=tuple(int(i) for i in cand[pos]),
        distances=tuple(float(x) for x in dist),
        target_avg_distance=float(dist.mean()),
    )


def neighborhood_quality(data: Dataset, query: CaseRecord, k: int, metric: MetricConfig,
                         sigmas: float = REJECTION_SIGMAS) -> NeighborhoodResult:
    """:func:`k_best_matches` plus the one-sided rejection check.

    The reference population is every record of ``data`` other than the
    query.
    """
    cand = _candidates(data, query)
    hood = neighborhood_check(data.context_matrix()[cand], _query_context(data, query), k, metric, sigmas)
    return _remap(hood, cand)
