"""Background filtering, MeanShift vote clustering and edge-point voting."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ConfigurationError, EmptyInputError, ValidationError
from .geometry import RigidTransform, fit_rigid
from .objects import ObjectModel

# Seeds are climbed in blocks so the dense seed x sample mask stays small.
_BLOCK_ELEMS = 4_000_000
# modes closer than this fraction of the bandwidth count as one
_MERGE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PredictionField:
    """Per-point network output (or oracle stand-in).

    ``class_confidence`` is N x (n_classes + 1); the last column is background.
    ``edge_offsets`` is N x M x 3 and ``center_offset`` N x 3, in meters.
    """

    class_confidence: np.ndarray
    edge_offsets: np.ndarray
    center_offset: np.ndarray

    def __post_init__(self):
        conf = np.asarray(self.class_confidence, dtype=np.float64)
        edge = np.asarray(self.edge_offsets, dtype=np.float64)
        ctr = np.asarray(self.center_offset, dtype=np.float64)
        if conf.ndim != 2 or conf.shape[1] < 2:
            raise ValidationError("class_confidence must be N x (n_classes + 1)")
        n = len(conf)
        if edge.ndim != 3 or edge.shape[0] != n or edge.shape[2] != 3:
            raise ValidationError("edge_offsets must be N x M x 3")
        if ctr.shape != (n, 3):
            raise ValidationError("center_offset must be N x 3")
        if np.any(conf < 0) or np.any(conf > 1) or np.any(np.abs(conf.sum(axis=1) - 1.0) > 1e-6):
            raise ValidationError("confidence rows must be probabilities summing to 1")
        if not (np.all(np.isfinite(edge)) and np.all(np.isfinite(ctr))):
            raise ValidationError("offsets must be finite")
        object.__setattr__(self, "class_confidence", conf)
        object.__setattr__(self, "edge_offsets", edge)
        object.__setattr__(self, "center_offset", ctr)

    def __len__(self):
        return len(self.class_confidence)

    @property
    def n_classes(self) -> int:
        """Number of object classes, background excluded."""
        return self.class_confidence.shape[1] - 1

    @property
    def n_edge_points(self) -> int:
        return self.edge_offsets.shape[1]

    def labels(self) -> np.ndarray:
        """Argmax class per point; ``n_classes`` denotes background."""
        return np.argmax(self.class_confidence, axis=1)

    def subset(self, rows) -> PredictionField:
        rows = np.asarray(rows, dtype=np.int64)
        return PredictionField(self.class_confidence[rows], self.edge_offsets[rows], self.center_offset[rows])


@dataclass(frozen=True, eq=False)
class InstanceHypothesis:
    class_id: int
    point_indices: np.ndarray
    voted_center: np.ndarray
    voted_edge_points: np.ndarray | None = None
    vote_support: np.ndarray | None = None

    def __post_init__(self):
        if len(self.point_indices) == 0:
            raise ValidationError("an instance hypothesis needs at least one point")


class MeanShiftResult(NamedTuple):
    centers: np.ndarray
    assignment: np.ndarray


def filter_background(pred: PredictionField) -> dict[int, np.ndarray]:
    """Group points by argmax class, dropping those whose argmax is background."""
    labels = pred.labels()
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels) if c != pred.n_classes}


def _kernel_sums(x, samples, wx, w, bandwidth, kernel):
    """Weighted sample sums and weight totals in the kernel window of each row of x."""
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        + np.einsum("ij,ij->i", samples, samples)[None, :]
        - 2.0 * (x @ samples.T)
    )
    if kernel == "flat":
        k = (d2 <= bandwidth * bandwidth).astype(np.float64)
    else:
        k = np.exp(-0.5 * np.maximum(d2, 0.0) / (bandwidth * bandwidth))
        k[d2 > 9.0 * bandwidth * bandwidth] = 0.0
    return k @ wx, k @ w


def _climb(seeds, samples, w, bandwidth, eps, max_iter, kernel):
    """Move every seed uphill until it shifts less than eps.

    Seeds that land on bit-identical positions share all later iterations, so
    they are merged; this is exact, not an approximation. Returns final
    positions and a validity mask (False where a window held no weight).
    """
    wx = samples * w[:, None]
    x = seeds.copy()
    valid = np.ones(len(x), dtype=bool)
    active = np.arange(len(x))
    block = max(1, _BLOCK_ELEMS // max(len(samples), 1))
    for _ in range(max_iter):
        if len(active) == 0:
            break
        uniq, inverse = np.unique(x[active], axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        new = np.empty_like(uniq)
        tot = np.empty(len(uniq))
        for s in range(0, len(uniq), block):
            num, den = _kernel_sums(uniq[s:s + block], samples, wx, w, bandwidth, kernel)
            tot[s:s + block] = den
            with np.errstate(invalid="ignore", divide="ignore"):
                new[s:s + block] = num / den[:, None]
        empty = tot <= 0
        shift = np.linalg.norm(new - uniq, axis=1)
        done = empty | (shift < eps)
        new[empty] = uniq[empty]
        x[active] = new[inverse]
        valid[active[empty[inverse]]] = False
        active = active[~done[inverse]]
    return x, valid


def _merge_close(cand, first, mult, tol):
    """Fold together modes that differ only by rounding (the same window can
    average to values a few ulps apart). Each group keeps the member reached
    first and the summed multiplicity."""
    pairs = cKDTree(cand).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return cand, first, mult
    n = len(cand)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_groups, group = connected_components(graph, directed=False)
    rep = np.full(n_groups, -1)
    for i in np.argsort(first, kind="stable"):
        if rep[group[i]] < 0:
            rep[group[i]] = i
    return cand[rep], first[rep], np.bincount(group, weights=mult, minlength=n_groups).astype(np.int64)


def mean_shift(samples, bandwidth: float, eps: float = 1e-5, max_iter: int = 100,
               weights=None, kernel: str = "flat") -> MeanShiftResult:
    """Mode seeking with a flat (default) or truncated Gaussian kernel.

    Every sample with positive weight is used as a seed and climbs to a mode.
    Modes are ranked by the weight inside their window and greedily merged
    when closer than ``bandwidth / 2``. Each sample is then assigned to its
    nearest surviving mode.

    Zero-weight samples never pull on anything, but they still climb, so a
    caller can keep rows it does not trust (e.g. background) at the cost of
    extra work without changing any result.
    """
    if not bandwidth > 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bandwidth}")
    if kernel not in ("flat", "gaussian"):
        raise ConfigurationError(f"unknown kernel {kernel!r}")
    X = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(X) == 0:
        raise EmptyInputError("mean_shift needs at least one sample")
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != len(X) or np.any(w < 0):
        raise ConfigurationError("weights must be nonnegative, one per sample")
    pos = np.flatnonzero(w > 0)
    if len(pos) == 0:
        raise EmptyInputError("all sample weights are zero")
    # work relative to one sample: identical votes then average to exactly 0
    ref = X[pos[0]].copy()
    X = X - ref
    P, wp = X[pos], w[pos]

    modes, ok = _climb(P, P, wp, bandwidth, eps, max_iter, kernel)
    zero = np.flatnonzero(w == 0)
    if len(zero):
        # retained zero-weight rows: same work, discarded outcome
        _climb(X[zero], P, wp, bandwidth, eps, max_iter, kernel)

    cand, first, mult = np.unique(modes[ok], axis=0, return_index=True, return_counts=True)
    if len(cand) == 0:
        cand, first, mult = P[:1].copy(), np.array([0]), np.array([1])
    cand, first, mult = _merge_close(cand, first, mult, _MERGE_RTOL * bandwidth)
    _, support = _kernel_sums(cand, P, np.zeros((len(P), 1)), wp, bandwidth, "flat")
    order = np.lexsort((first, -mult, -support))
    cand = cand[order]
    alive = np.ones(len(cand), dtype=bool)
    keep = []
    half2 = (0.5 * bandwidth) ** 2
    for i in range(len(cand)):
        if not alive[i]:
            continue
        keep.append(i)
        d2 = np.sum((cand - cand[i]) ** 2, axis=1)
        alive &= d2 > half2
    centers = cand[keep]
    _, assignment = cKDTree(centers).query(X)
    return MeanShiftResult(centers + ref, np.asarray(assignment, dtype=np.int64))


def cluster_instances(points, pred: PredictionField, bandwidth: float = 0.05, class_id: int = 0,
                      indices=None, weights=None, min_cluster_size: int = 30,
                      eps: float = 1e-5, max_iter: int = 100, kernel: str = "flat") -> list[InstanceHypothesis]:
    """Split one class's points into instances by clustering their center votes.

    ``indices`` selects rows of ``points``/``pred`` (default: all); returned
    ``point_indices`` refer to those same global rows. Rows with zero weight
    are carried through the clustering but never become members.
    """
    points = np.asarray(points, dtype=np.float64)
    rows = np.arange(len(points)) if indices is None else np.asarray(indices, dtype=np.int64)
    if len(rows) == 0:
        return []
    w = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=np.float64)
    if not np.any(w > 0):
        return []
    votes = points[rows] + pred.center_offset[rows]
    centers, assign = mean_shift(votes, bandwidth, eps, max_iter, weights=w, kernel=kernel)
    hyps = []
    for c, center in enumerate(centers):
        members = rows[(assign == c) & (w > 0)]
        if len(members) >= max(min_cluster_size, 1):
            hyps.append(InstanceHypothesis(int(class_id), members, center.copy()))
    return hyps


def vote_edge_points(hyp: InstanceHypothesis, points, pred: PredictionField, bandwidth: float = 0.03,
                     retained_rows=None, eps: float = 1e-5, max_iter: int = 100,
                     kernel: str = "flat") -> InstanceHypothesis:
    """Fill ``voted_edge_points``: for each edge index, the mode of the members'
    votes ``p_i + of_i^j`` that collects the most votes.

    ``retained_rows`` are extra rows (background kept in unfiltered mode) that
    take part with zero weight.
    """
    points = np.asarray(points, dtype=np.float64)
    members = np.asarray(hyp.point_indices, dtype=np.int64)
    extra = np.zeros(0, dtype=np.int64) if retained_rows is None else np.asarray(retained_rows, dtype=np.int64)
    rows = np.concatenate([members, extra])
    w = np.concatenate([np.ones(len(members)), np.zeros(len(extra))])
    m = pred.n_edge_points
    voted = np.empty((m, 3))
    support = np.empty(m, dtype=np.int64)
    for j in range(m):
        cand = points[rows] + pred.edge_offsets[rows, j]
        centers, assign = mean_shift(cand, bandwidth, eps, max_iter, weights=w, kernel=kernel)
        counts = np.bincount(assign[: len(members)], minlength=len(centers))
        best = int(np.argmax(counts))
        voted[j] = centers[best]
        support[j] = counts[best]
    return replace(hyp, voted_edge_points=voted, vote_support=support)


def estimate_pose(hyp: InstanceHypothesis, model: ObjectModel, weighted: bool = False) -> RigidTransform:
    """Least-squares pose mapping the model's edge points onto the voted ones."""
    if hyp.voted_edge_points is None:
        raise ValidationError("hypothesis has no voted edge points")
    if len(hyp.voted_edge_points) != model.n_edge_points:
        raise ValidationError(
            f"{len(hyp.voted_edge_points)} voted edge points vs {model.n_edge_points} on the model"
        )
    w = hyp.vote_support if weighted else None
    return fit_rigid(model.edge_points, hyp.voted_edge_points, weights=w)
