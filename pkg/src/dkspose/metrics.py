"""Pose and segmentation metrics: ADD, ADD-S, ADD(S), AUC, ADD(S)-0.1d, mIoU,
keypoint error.

Thresholded metrics use strict inequality (``d < threshold``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, ValidationError
from .geometry import RigidTransform, transform_points
from .objects import ObjectModel

AUC_MAX_THRESHOLD = 0.10


def add(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
    """Mean distance between corresponding vertices under the two poses."""
    a = transform_points(pred, model.vertices)
    b = transform_points(gt, model.vertices)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def add_s_bruteforce(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
    """O(q^2) closest-point ADD-S, kept as the reference for ``add_s``."""
    a = transform_points(pred, model.vertices)
    b = transform_points(gt, model.vertices)
    best = np.empty(len(a))
    for i, p in enumerate(a):
        best[i] = np.min(np.linalg.norm(b - p, axis=1))
    return float(np.mean(best))


def add_s(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
    """Mean over predicted vertices of the distance to the closest gt vertex.

    Nearest neighbours come from a k-d tree; distances are then recomputed
    with the same expression as the brute-force path.
    """
    a = transform_points(pred, model.vertices)
    b = transform_points(gt, model.vertices)
    _, nn = cKDTree(b).query(a)
    return float(np.mean(np.linalg.norm(b[nn] - a, axis=1)))


def add_of(pred: RigidTransform, gt: RigidTransform, model: ObjectModel) -> float:
    """ADD(S): ADD-S for symmetric models, ADD otherwise."""
    return add_s(pred, gt, model) if model.symmetric else add(pred, gt, model)


def auc(distances, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Area under the accuracy-threshold curve on [0, max_threshold], in percent.

    accuracy(th) is the fraction of distances below th. Integrating the
    empirical step function exactly, each distance d contributes
    ``max(0, max_threshold - d)``.
    """
    d = np.sort(np.asarray(distances, dtype=np.float64).reshape(-1))
    if len(d) == 0:
        raise EmptyInputError("auc of an empty distance set")
    if not max_threshold > 0:
        raise ValidationError("max_threshold must be positive")
    # breakpoints of the step function, clipped to the integration window
    knots = np.concatenate([[0.0], np.clip(d, 0.0, max_threshold), [max_threshold]])
    acc = np.arange(len(d) + 1) / len(d)  # accuracy on each interval between knots
    area = np.sum(np.diff(knots) * acc)
    return float(100.0 * area / max_threshold)


def add01d_rate(distances, diameter: float) -> float:
    """Percentage of distances below 10% of the object diameter."""
    if not diameter > 0:
        raise ValidationError("diameter must be positive")
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if len(d) == 0:
        return 0.0
    return float(100.0 * np.mean(d < 0.1 * diameter))


def miou(pred_labels, gt_labels, classes=None) -> float:
    """Mean IoU over classes present in either labelling, in percent.

    Background is treated like any other class if it appears.
    """
    p = np.asarray(pred_labels).reshape(-1)
    g = np.asarray(gt_labels).reshape(-1)
    if p.shape != g.shape:
        raise ValidationError("label sequences differ in length")
    if classes is None:
        classes = np.union1d(p, g)
    ious = []
    for c in classes:
        inter = np.count_nonzero((p == c) & (g == c))
        union = np.count_nonzero((p == c) | (g == c))
        if union:
            ious.append(inter / union)
    if not ious:
        return 0.0
    return float(100.0 * np.mean(ious))


def keypoint_error(voted, gt_scene_edge_points) -> float:
    """Mean Euclidean distance between matched keypoints (meters)."""
    a = np.asarray(voted, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(gt_scene_edge_points, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValidationError("keypoint sets differ in length")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


@dataclass
class ClassRow:
    class_id: int | str
    adds_auc: float
    add_s_auc: float
    add01d_rate: float
    kp_err_m: float
    n_instances: int = 0


@dataclass
class EvalReport:
    """Per-class rows laid out like the usual benchmark tables.

    ``adds_auc`` is the ADD-S AUC and ``add_s_auc`` the ADD(S) AUC; both in %.
    ``add01d_rate`` applies to ADD(S). ``timing`` holds milliseconds per frame.
    """

    rows: list = field(default_factory=list)
    miou: float = float("nan")
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            for v in (r.adds_auc, r.add_s_auc, r.add01d_rate):
                if not (np.isnan(v) or 0.0 <= v <= 100.0):
                    raise ValidationError("percentages must lie in [0, 100]")

    def all_row(self) -> ClassRow:
        if not self.rows:
            nan = float("nan")
            return ClassRow("ALL", nan, nan, nan, nan, 0)
        kp = [r.kp_err_m for r in self.rows if not np.isnan(r.kp_err_m)]
        return ClassRow(
            "ALL",
            float(np.mean([r.adds_auc for r in self.rows])),
            float(np.mean([r.add_s_auc for r in self.rows])),
            float(np.mean([r.add01d_rate for r in self.rows])),
            float(np.mean(kp)) if kp else float("nan"),
            sum(r.n_instances for r in self.rows),
        )
