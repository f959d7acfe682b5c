"""Keypoint selectors: dynamic (feature-argmax voting), farthest-point, and
saliency-weighted farthest-point selection of model edge points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, EmptyInputError, ValidationError
from .objects import ObjectModel


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-point features, one row per point. ``point_index`` maps rows back
    to indices in the originating point cloud."""

    values: np.ndarray
    point_index: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError("feature values must be an N x C matrix")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("feature values must be finite")
        idx = np.arange(len(vals)) if self.point_index is None else np.asarray(self.point_index, dtype=np.int64)
        if idx.shape != (len(vals),):
            raise ValidationError("point_index length differs from feature rows")
        if len(np.unique(idx)) != len(idx):
            raise ValidationError("point_index entries must be unique")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "point_index", idx)

    def __len__(self):
        return len(self.values)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def subset(self, rows) -> FeatureMap:
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureMap(self.values[rows], self.point_index[rows])


@dataclass(frozen=True, eq=False)
class KeypointSet:
    indices: np.ndarray
    win_counts: np.ndarray

    def __len__(self):
        return len(self.indices)


def channel_wins(values) -> np.ndarray:
    """Number of feature channels in which each row holds the maximum.

    ``np.argmax`` returns the first maximum, so equal maxima go to the lowest
    row index.
    """
    values = np.asarray(values)
    return np.bincount(np.argmax(values, axis=0), minlength=len(values))


def _row_sums(values) -> np.ndarray:
    # correctly rounded, so the tie-break key does not depend on channel order
    return np.array([math.fsum(r) for r in np.asarray(values).tolist()], dtype=np.float64)


def select_dynamic_keypoints(fm: FeatureMap, k: int) -> KeypointSet:
    """Pick the ``k`` points that win the most per-channel argmaxes.

    Ranking is by win count, then by the row's feature sum (both descending),
    then by row index. Points that win no channel only appear when fewer than
    ``k`` points win anything. ``fm`` should already be restricted to
    foreground points.
    """
    if int(k) != k or k <= 0:
        raise ConfigurationError(f"k must be a positive integer, got {k!r}")
    if len(fm) == 0 or fm.n_channels == 0:
        raise EmptyInputError("empty feature map")
    wins = channel_wins(fm.values)
    # only winners can rank, unless zero-win rows are needed as padding
    cand = np.flatnonzero(wins > 0)
    if len(cand) < k:
        cand = np.arange(len(fm))
    row_sum = _row_sums(fm.values[cand])
    order = cand[np.lexsort((cand, -row_sum, -wins[cand]))[: int(k)]]
    return KeypointSet(fm.point_index[order], wins[order])


def select_dynamic_keypoints_per_instance(fm: FeatureMap, instance_of_row, k: int) -> KeypointSet:
    """Run the dynamic selector inside every instance, then keep the best
    ``k`` across the frame under the same ranking."""
    if int(k) != k or k <= 0:
        raise ConfigurationError(f"k must be a positive integer, got {k!r}")
    inst = np.asarray(instance_of_row)
    idx, wins, sums = [], [], []
    for label in np.unique(inst):
        rows = np.flatnonzero(inst == label)
        sub = fm.subset(rows)
        kp = select_dynamic_keypoints(sub, k)
        lookup = {p: r for r, p in enumerate(sub.point_index)}
        sel = np.array([lookup[p] for p in kp.indices], dtype=np.int64)
        idx.append(kp.indices)
        wins.append(kp.win_counts)
        sums.append(_row_sums(sub.values[sel]))
    if not idx:
        raise EmptyInputError("empty feature map")
    idx, wins, sums = np.concatenate(idx), np.concatenate(wins), np.concatenate(sums)
    order = np.lexsort((idx, -sums, -wins))[: int(k)]
    return KeypointSet(idx[order], wins[order])


def select_fps(points, k: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise EmptyInputError("no points to sample from")
    if not 0 <= start < n:
        raise ConfigurationError(f"start index {start} out of range")
    if k <= 0:
        raise ConfigurationError(f"k must be positive, got {k}")
    k = min(int(k), n)
    picked = [int(start)]
    min_d = np.linalg.norm(pts - pts[start], axis=1)
    min_d[start] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        picked.append(nxt)
        np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1), out=min_d)
        min_d[picked] = -1.0
    return np.array(picked, dtype=np.int64)


def estimate_normals(vertices, k: int = 12) -> np.ndarray:
    """PCA normals from k-nearest neighbours, oriented away from the centroid."""
    v = np.asarray(vertices, dtype=np.float64)
    k = min(k, len(v))
    _, nbr = cKDTree(v).query(v, k=k)
    nb = v[nbr]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = np.einsum("ni,ni->n", normals, v - v.mean(axis=0)) < 0
    normals[flip] *= -1
    return normals


def curvature_saliency(vertices, normals, k: int = 8) -> np.ndarray:
    """Mean angle (radians) between each vertex normal and the normals of its
    ``k`` nearest neighbours."""
    v = np.asarray(vertices, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    k = min(k, len(v) - 1)
    if k <= 0:
        return np.zeros(len(v))
    _, nbr = cKDTree(v).query(v, k=k + 1)
    nbr = nbr[:, 1:]
    cos = np.clip(np.einsum("ni,nki->nk", n, n[nbr]), -1.0, 1.0)
    return np.arccos(cos).mean(axis=1)


def select_edge_points(model: ObjectModel, m: int, k_neighbors: int = 4, uniform_rtol: float = 1e-6) -> np.ndarray:
    """Choose ``m`` distinctive, well-spread model points.

    Greedy farthest-point selection where each candidate's score is its
    curvature saliency times its distance to the already-chosen set. The first
    pick is the most salient vertex. When saliency is uniform (to
    ``uniform_rtol``) this is plain farthest point sampling from vertex 0.
    Stand-in for SIFT-guided FPS, which needs rendered views.
    """
    if int(m) != m or m <= 0:
        raise ConfigurationError(f"m must be a positive integer, got {m!r}")
    v = model.vertices
    if m > len(v):
        raise ConfigurationError(f"model has {len(v)} vertices, {m} edge points requested")
    normals = model.normals if model.normals is not None else estimate_normals(v)
    sal = curvature_saliency(v, normals, k_neighbors)
    if np.ptp(sal) <= uniform_rtol * max(float(sal.max()), 1e-300):
        return v[select_fps(v, m, start=0)].copy()

    first = int(np.argmax(sal))
    picked = [first]
    min_d = np.linalg.norm(v - v[first], axis=1)
    for _ in range(int(m) - 1):
        score = sal * min_d
        score[picked] = -1.0
        nxt = int(np.argmax(score))
        picked.append(nxt)
        np.minimum(min_d, np.linalg.norm(v - v[nxt], axis=1), out=min_d)
    return v[picked].copy()
