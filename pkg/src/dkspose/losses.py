"""Training losses with hand-derived gradients.

* ``edge_offset_loss``  -- role-weighted L1 on per-point edge-point offsets
* ``center_offset_loss`` -- the same for the offset to the instance center
* ``focal_semantic_loss`` -- focal loss on class probabilities
* ``multi_task_loss``    -- weighted sum of the three

Offset losses are normalised by the number of points N only (not N * M),
and background points stay in that count with their (default zero) weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError

KEYPOINT, BACKGROUND, OTHER = 0, 1, 2
ROLE_NAMES = {"keypoint": KEYPOINT, "background": BACKGROUND, "other": OTHER}


@dataclass(frozen=True)
class PointRoleWeights:
    """Per-role loss weights; ``roles`` tags each point KEYPOINT/BACKGROUND/OTHER."""

    w_keypoint: float = 2.0
    w_background: float = 0.0
    w_others: float = 1.0
    roles: np.ndarray | None = None

    def __post_init__(self):
        if min(self.w_keypoint, self.w_background, self.w_others) < 0:
            raise ConfigurationError("role weights must be nonnegative")

    def with_roles(self, roles) -> PointRoleWeights:
        return PointRoleWeights(self.w_keypoint, self.w_background, self.w_others,
                                np.asarray(roles, dtype=np.int64))

    def per_point(self, n: int) -> np.ndarray:
        if self.roles is None:
            return np.full(n, self.w_others)
        roles = np.asarray(self.roles)
        if roles.shape != (n,):
            raise ConfigurationError(f"roles has shape {roles.shape}, expected ({n},)")
        table = np.array([self.w_keypoint, self.w_background, self.w_others])
        return table[roles]


@dataclass(frozen=True, eq=False)
class LossValue:
    value: float
    gradient: np.ndarray


def make_roles(n: int, keypoints=(), background=()) -> np.ndarray:
    """Role vector: OTHER everywhere, then background, then keypoints (keypoints win)."""
    roles = np.full(n, OTHER, dtype=np.int64)
    roles[np.asarray(background, dtype=np.int64)] = BACKGROUND
    roles[np.asarray(keypoints, dtype=np.int64)] = KEYPOINT
    return roles


def _weighted_l1(pred, truth, w: PointRoleWeights, norm: str) -> LossValue:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"prediction shape {pred.shape} differs from target shape {truth.shape}")
    n = pred.shape[0]
    if n == 0:
        raise ConfigurationError("loss over zero points")
    wp = w.per_point(n)
    err = pred - truth
    bshape = (n,) + (1,) * (err.ndim - 1)
    if norm == "l1":
        per = np.abs(err).reshape(n, -1).sum(axis=1)
        grad = np.sign(err) * (wp / n).reshape(bshape)
    elif norm == "l2":
        # Euclidean norm of each 3-vector, summed over edge points
        mag = np.linalg.norm(err, axis=-1, keepdims=True)
        per = mag.reshape(n, -1).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(mag > 0, err / mag, 0.0)
        grad = unit * (wp / n).reshape(bshape)
    else:
        raise ConfigurationError(f"unknown norm {norm!r}")
    value = float(np.sum(per * wp) / n)
    return LossValue(value, grad)


def edge_offset_loss(pred, truth, w: PointRoleWeights = PointRoleWeights(), norm: str = "l1") -> LossValue:
    """Role-weighted offset loss over N x M x 3 edge-point offsets."""
    if np.ndim(pred) != 3:
        raise ConfigurationError("edge offsets must be N x M x 3")
    return _weighted_l1(pred, truth, w, norm)


def center_offset_loss(pred, truth, w: PointRoleWeights = PointRoleWeights(), norm: str = "l1") -> LossValue:
    if np.ndim(pred) != 2:
        raise ConfigurationError("center offsets must be N x 3")
    return _weighted_l1(pred, truth, w, norm)


def focal_semantic_loss(conf, labels, alpha: float = 0.25, gamma: float = 2.0) -> LossValue:
    """Mean of ``-alpha (1 - q)^gamma log q`` with q the probability of the true class.

    ``labels`` may be one-hot rows or integer class ids. q is clamped to
    [1e-12, 1]; the gradient (w.r.t. ``conf``) is zero where the clamp is active.
    """
    conf = np.asarray(conf, dtype=np.float64)
    if conf.ndim != 2:
        raise ValidationError("confidences must be N x C")
    if np.any(conf < 0) or np.any(np.abs(conf.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("confidence rows must be probabilities summing to 1")
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != conf.shape or np.any(labels.sum(axis=1) != 1) or np.any((labels != 0) & (labels != 1)):
            raise ValidationError("labels must be one-hot rows matching the confidences")
        idx = np.argmax(labels, axis=1)
    else:
        idx = labels.astype(np.int64)
        if idx.shape != (len(conf),) or np.any(idx < 0) or np.any(idx >= conf.shape[1]):
            raise ValidationError("label ids out of range")
    n = len(conf)
    rows = np.arange(n)
    q_raw = conf[rows, idx]
    q = np.clip(q_raw, 1e-12, 1.0)
    one_m = 1.0 - q
    logq = np.log(q)
    per = -alpha * one_m ** gamma * logq
    value = float(np.sum(per) / n)

    # d/dq of -a (1-q)^g log q = a [g (1-q)^(g-1) log q - (1-q)^g / q]
    with np.errstate(divide="ignore", invalid="ignore"):
        focus = np.where(one_m > 0, gamma * one_m ** (gamma - 1.0) * logq, 0.0) if gamma != 0 else 0.0
    dq = alpha * (focus - one_m ** gamma / q)
    dq = np.where((q_raw < 1e-12) | (q_raw > 1.0), 0.0, dq)
    grad = np.zeros_like(conf)
    grad[rows, idx] = dq / n
    return LossValue(value, grad)


def multi_task_loss(l_edge: float, l_center: float, l_sem: float, lambdas=(3.0, 1.0, 1.0)) -> float:
    l1, l2, l3 = lambdas
    return l1 * l_edge + l2 * l_center + l3 * l_sem
