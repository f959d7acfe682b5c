"""Fast oracle-equivalence checks for an installed copy of the package.

Each check compares a production path with an independent slow reference
on seeded random inputs and returns ``(name, ok, detail)``.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import RigidTransform, fit_rigid, rotation_error
from .keypoints import FeatureMap, select_dynamic_keypoints
from .losses import PointRoleWeights, edge_offset_loss
from .metrics import add, add_s, add_s_bruteforce, auc
from .objects import ObjectModel
from .voting import mean_shift


def check_fit(rng, n=200):
    worst_r = worst_t = 0.0
    for _ in range(n):
        T = RigidTransform.random(rng, 0.5)
        src = rng.normal(size=(8, 3)) * 0.1
        est = fit_rigid(src, T(src))
        worst_r = max(worst_r, rotation_error(est.R, T.R))
        worst_t = max(worst_t, float(np.linalg.norm(est.t - T.t)))
    return worst_r < 1e-8 and worst_t < 1e-9, f"max rot err {worst_r:.1e} rad, max trans err {worst_t:.1e} m"


def check_add_s(rng, n=100):
    worst, order_ok = 0.0, True
    for _ in range(n):
        mdl = ObjectModel.from_vertices(0, rng.normal(size=(50, 3)) * 0.05)
        a, b = RigidTransform.random(rng, 0.1), RigidTransform.random(rng, 0.1)
        fast, slow = add_s(a, b, mdl), add_s_bruteforce(a, b, mdl)
        worst = max(worst, abs(fast - slow))
        order_ok &= fast <= add(a, b, mdl) + 1e-15
    return worst <= 1e-9 and order_ok, f"max |fast - brute| {worst:.1e}, ADD-S <= ADD: {order_ok}"


def check_auc(rng, n=50):
    worst = 0.0
    grid = (np.arange(200_000) + 0.5) * (0.1 / 200_000)
    for _ in range(n):
        d = rng.uniform(0, 0.15, rng.integers(1, 40))
        # searchsorted(side="left") counts distances strictly below each threshold
        riemann = 100.0 * np.mean(np.searchsorted(np.sort(d), grid, side="left") / len(d))
        worst = max(worst, abs(auc(d) - riemann))
    return worst < 1e-3, f"max |exact - midpoint sum| {worst:.1e}"


def check_dks(rng, n=100):
    ok = True
    for _ in range(n):
        v = rng.normal(size=(int(rng.integers(1, 40)), int(rng.integers(1, 12))))
        k = int(rng.integers(1, len(v) + 1))
        wins = np.zeros(len(v), dtype=int)
        for c in range(v.shape[1]):
            wins[int(np.argmax(v[:, c]))] += 1
        ref = sorted(range(len(v)), key=lambda i: (-wins[i], -math.fsum(v[i]), i))[:k]
        ok &= list(select_dynamic_keypoints(FeatureMap(v), k).indices) == ref
    return bool(ok), "matches brute-force tally ranking" if ok else "ranking differs"


def check_loss_gradient(rng, n=20, h=1e-5):
    worst = 0.0
    for _ in range(n):
        pred = rng.normal(size=(5, 3, 3))
        truth = rng.normal(size=(5, 3, 3))
        w = PointRoleWeights(roles=rng.integers(0, 3, 5))
        g = edge_offset_loss(pred, truth, w).gradient
        for idx in np.ndindex(pred.shape):
            p, m = pred.copy(), pred.copy()
            p[idx] += h
            m[idx] -= h
            num = (edge_offset_loss(p, truth, w).value - edge_offset_loss(m, truth, w).value) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(abs(g[idx]), abs(num), 1e-12) if g[idx] or num else 0.0)
    return worst < 1e-4, f"max relative error {worst:.1e}"


def check_mean_shift(rng):
    a = rng.normal([0, 0, 0], 0.01, (100, 3))
    b = rng.normal([0.5, 0, 0], 0.01, (100, 3))
    res = mean_shift(np.vstack([a, b]), 0.05)
    c = res.centers[np.argsort(res.centers[:, 0])] if len(res.centers) == 2 else None
    ok = c is not None and np.linalg.norm(c[0] - a.mean(0)) < 0.01 and np.linalg.norm(c[1] - b.mean(0)) < 0.01
    return bool(ok), f"{len(res.centers)} centers"


CHECKS = [
    ("pose fit", check_fit),
    ("ADD-S accelerated vs brute force", check_add_s),
    ("AUC exact vs Riemann", check_auc),
    ("DKS vs tally oracle", check_dks),
    ("edge loss gradient", check_loss_gradient),
    ("MeanShift two blobs", check_mean_shift),
]


def run_all(seed: int = 0):
    out = []
    for i, (name, fn) in enumerate(CHECKS):
        ok, detail = fn(np.random.default_rng([seed, i]))
        out.append((name, bool(ok), detail))
    return out
