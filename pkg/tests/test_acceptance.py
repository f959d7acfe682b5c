"""Acceptance criteria. Each test carries ``@pytest.mark.acceptance(n, title)``;
conftest prints one PASS/FAIL line per criterion at the end of the run."""

import math
import time

import numpy as np
import pytest

from dkspose.geometry import RigidTransform, fit_rigid, rotation_error
from dkspose.keypoints import FeatureMap, select_dynamic_keypoints, select_dynamic_keypoints_per_instance
from dkspose.losses import BACKGROUND, PointRoleWeights, center_offset_loss, edge_offset_loss, focal_semantic_loss
from dkspose.metrics import add, add_s, add_s_bruteforce, auc, miou
from dkspose.objects import ObjectModel
from dkspose.pipeline import PipelineConfig, run_estimate, score_instances
from dkspose.synth import default_models, oracle_predictions, random_scene
from dkspose.toy import MlpModel, TrainConfig, featurize, forward, gradient_check, separable_set, \
    standard_training_set, train
from dkspose.voting import PredictionField, mean_shift

from test_keypoints import tally_oracle
from test_voting import in_hull


@pytest.fixture(scope="module")
def models():
    return default_models(m=8)


@pytest.fixture(scope="module")
def scenes50(models):
    return [random_scene(models, seed=s, scene_id=s) for s in range(50)]


@pytest.mark.acceptance(1, "pose fit correctness and speed")
def test_pose_fit(record_property):
    rng = np.random.default_rng(2024)
    worst_r = worst_t = 0.0
    times = []
    for _ in range(1000):
        T = RigidTransform.random(rng, 1.0)
        src = rng.normal(size=(8, 3)) * 0.1
        dst = T(src)
        t0 = time.perf_counter()
        est = fit_rigid(src, dst)
        times.append(time.perf_counter() - t0)
        worst_r = max(worst_r, rotation_error(est.R, T.R))
        worst_t = max(worst_t, float(np.linalg.norm(est.t - T.t)))
    med = 1e3 * float(np.median(times))
    record_property("detail", f"max rot err {worst_r:.1e} rad, max trans err {worst_t:.1e} m, "
                              f"median fit {med:.3f} ms")
    assert worst_r < 1e-8 and worst_t < 1e-9
    assert med < 1.0


@pytest.mark.acceptance(2, "zero-noise end-to-end identity")
def test_zero_noise_identity(record_property, scenes50, models):
    results = [run_estimate(sc, oracle_predictions(sc), models) for sc in scenes50]
    scores = score_instances(results, scenes50)
    worst = max(s.add for s in scores)
    value = auc([s.add_of for s in scores])
    record_property("detail", f"{len(scores)} instances, max ADD {worst:.1e} m, AUC {value:.12f}")
    assert all(s.matched for s in scores)
    assert worst < 1e-6
    # float ADD of an exact pose is ~1e-16 m, so the integral sits within rounding of 100
    assert abs(value - 100.0) < 1e-9


@pytest.mark.acceptance(3, "noise robustness at 5 mm offset noise")
def test_noise_robustness(record_property, scenes50, models):
    cfg = PipelineConfig(offset_sigma=0.005, m_edge_points=8)
    ratios = []
    for sc in scenes50:
        res = run_estimate(sc, oracle_predictions(sc, cfg.noise), models, cfg)
        for s in score_instances([res], [sc]):
            mdl = sc.instance(s.instance_id).model
            if np.count_nonzero(sc.instance_label == s.instance_id) >= 200 and mdl.diameter >= 0.15:
                ratios.append(s.add_of / (0.1 * mdl.diameter))
    ratios = np.array(ratios)
    rate = 100.0 * np.mean(ratios < 1.0)
    record_property("detail", f"{len(ratios)} instances, ADD(S)-0.1d {rate:.1f}%, "
                              f"worst ADD(S) {ratios.max():.3f} of threshold")
    assert len(ratios) >= 100
    assert rate == 100.0


def half_background(scene):
    fg, bg = np.flatnonzero(scene.foreground), np.flatnonzero(~scene.foreground)
    keep = np.random.default_rng([scene.scene_id, 9]).choice(bg, size=len(fg), replace=False)
    return scene.subset(np.sort(np.concatenate([fg, keep])))


@pytest.mark.acceptance(4, "background filter equivalence and speed")
def test_background_filter(record_property, scenes50, models):
    on, off = PipelineConfig(offset_sigma=0.005), PipelineConfig(offset_sigma=0.005, filter_background=False)
    identical = 0
    for sc in scenes50:
        pred = oracle_predictions(sc, on.noise)
        a = run_estimate(sc, pred, models, on)
        b = run_estimate(sc, pred, models, off)
        same = len(a.poses) == len(b.poses) and all(
            p.instance_id == q.instance_id and np.array_equal(p.pose.to_row(), q.pose.to_row())
            for p, q in zip(a.poses, b.poses))
        identical += same

    t_on, t_off = [], []
    for sc in scenes50[:5]:
        half = half_background(sc)
        pred = oracle_predictions(half, on.noise)
        for _ in range(20):
            t_on.append(run_estimate(half, pred, models, on).timing.pose_estimation_ms)
            t_off.append(run_estimate(half, pred, models, off).timing.pose_estimation_ms)
    m_on, m_off = float(np.median(t_on)), float(np.median(t_off))
    record_property("detail", f"{identical}/50 scenes bit-identical; 50% background: "
                              f"{m_on:.1f} ms filtered vs {m_off:.1f} ms unfiltered")
    assert identical == 50
    assert m_on < m_off


@pytest.mark.acceptance(5, "DKS properties and worked examples")
def test_dks_properties(record_property):
    rng = np.random.default_rng(55)
    for _ in range(500):
        n, c = int(rng.integers(2, 200)), int(rng.integers(1, 64))
        vals = rng.normal(size=(n, c))
        fg = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        k = int(rng.integers(1, 40))
        fm = FeatureMap(vals[fg], fg)
        a = select_dynamic_keypoints(fm, k)
        b = select_dynamic_keypoints(FeatureMap(vals[fg][:, rng.permutation(c)], fg), k)
        again = select_dynamic_keypoints(FeatureMap(vals[fg].copy(), fg.copy()), k)
        assert set(a.indices.tolist()) == set(b.indices.tolist())
        assert a.indices.tobytes() == again.indices.tobytes() and a.win_counts.tobytes() == again.win_counts.tobytes()
        assert set(a.indices.tolist()) <= set(fg.tolist())
        assert len(a) == min(k, len(fg)) and len(set(a.indices.tolist())) == len(a)
        inst = rng.integers(0, 3, len(fg))
        per = select_dynamic_keypoints_per_instance(fm, inst, k)
        assert set(per.indices.tolist()) <= set(fg.tolist()) and len(per) == min(k, len(fg))

    examples = [
        (np.array([[5.0, 0.0], [1.0, 9.0], [2.0, 2.0]]), 2),
        (np.array([[0.3, -1.0, 2.0, 0.0, 5.0]]), 1),
        (np.vstack([np.full(8, 9.0), rng.uniform(0, 1, (3, 8))]), 2),
    ]
    for v, k in examples:
        kp = select_dynamic_keypoints(FeatureMap(v), k)
        ref, ref_wins = tally_oracle(v, k)
        assert kp.indices.tolist() == ref and kp.win_counts.tolist() == ref_wins
    assert set(select_dynamic_keypoints(FeatureMap(examples[0][0]), 2).indices.tolist()) == {0, 1}
    assert select_dynamic_keypoints(FeatureMap(examples[1][0]), 1).win_counts.tolist() == [5]
    third = select_dynamic_keypoints(FeatureMap(examples[2][0]), 2)
    assert third.indices[0] == 0 and third.win_counts.tolist() == [8, 0]
    assert third.indices[1] == 1 + int(np.argmax([math.fsum(r) for r in examples[2][0][1:]]))
    record_property("detail", "500 random maps and 3 worked examples agree with the tally oracle")


@pytest.mark.acceptance(6, "DKS throughput at N=12000, C=128")
def test_dks_throughput(record_property):
    fm = FeatureMap(np.random.default_rng(6).normal(size=(12000, 128)))
    select_dynamic_keypoints(fm, 25)
    times = []
    for _ in range(21):
        t0 = time.perf_counter()
        select_dynamic_keypoints(fm, 25)
        times.append(time.perf_counter() - t0)
    med = 1e3 * float(np.median(times))
    record_property("detail", f"median {med:.2f} ms")
    assert med < 50.0


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        p, m = x.copy(), x.copy()
        p[idx] += h
        m[idx] -= h
        g[idx] = (f(p) - f(m)) / (2 * h)
    return g


def away_from_kinks(rng, shape, margin=1e-3):
    """Prediction/target pairs whose residual components all exceed the margin."""
    truth = rng.normal(size=shape)
    step = rng.uniform(margin * 2, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return truth + step, truth


@pytest.mark.acceptance(7, "loss gradient fidelity")
def test_loss_gradients(record_property):
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        w = PointRoleWeights(roles=rng.integers(0, 3, n))
        pe, te = away_from_kinks(rng, (n, m, 3))
        pc, tc = away_from_kinks(rng, (n, 3))
        conf = rng.dirichlet(np.ones(3), size=n)
        lab = rng.integers(0, 3, n)
        pairs = [
            (central_diff(lambda p: edge_offset_loss(p, te, w).value, pe), edge_offset_loss(pe, te, w).gradient),
            (central_diff(lambda p: center_offset_loss(p, tc, w).value, pc), center_offset_loss(pc, tc, w).gradient),
            (central_diff(lambda c: focal_semantic_loss(c, lab).value, conf, h=1e-7),
             focal_semantic_loss(conf, lab).gradient),
        ]
        for num, ana in pairs:
            rel = np.abs(num - ana) / np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-12)
            worst = max(worst, float(rel.max()))

    # the same multi-task loss through the toy network
    sc = random_scene(default_models(), seed=3, n_points=300)
    rows = np.r_[np.flatnonzero(sc.foreground)[:20], np.flatnonzero(~sc.foreground)[:20]]
    sc = sc.subset(rows)
    truth = PredictionField(np.eye(sc.n_classes + 1)[sc.prediction_labels()], sc.gt_edge_offsets,
                            sc.gt_center_offset)
    net_err = gradient_check(MlpModel.init(sc.n_classes, 8, hidden=(8,), seed=1), featurize(sc), truth)

    # zero background weight: background rows contribute nothing, whatever their values
    annihilated = True
    for _ in range(100):
        n = 10
        roles = rng.integers(0, 3, n)
        w = PointRoleWeights(roles=roles)
        bg = roles == BACKGROUND
        pe, te = rng.normal(size=(n, 4, 3)), rng.normal(size=(n, 4, 3))
        pc, tc = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        pe2, pc2 = pe.copy(), pc.copy()
        pe2[bg] = rng.normal(size=pe2[bg].shape) * 1e3
        pc2[bg] = rng.normal(size=pc2[bg].shape) * 1e3
        for f, a, b, t in ((edge_offset_loss, pe, pe2, te), (center_offset_loss, pc, pc2, tc)):
            la, lb = f(a, t, w), f(b, t, w)
            annihilated &= la.value == lb.value and np.all(lb.gradient[bg] == 0)
    record_property("detail", f"max relative error {worst:.1e} (losses), {net_err:.1e} (network); "
                              f"background annihilation exact: {bool(annihilated)}")
    assert worst < 1e-4 and net_err < 1e-4
    assert annihilated


@pytest.mark.acceptance(8, "metric oracle equivalence")
def test_metric_oracles(record_property):
    rng = np.random.default_rng(88)
    worst_adds, order_ok = 0.0, True
    for _ in range(1000):
        mdl = ObjectModel.from_vertices(0, rng.normal(size=(int(rng.integers(4, 80)), 3)) * 0.05)
        a, b = RigidTransform.random(rng, 0.1), RigidTransform.random(rng, 0.1)
        fast = add_s(a, b, mdl)
        worst_adds = max(worst_adds, abs(fast - add_s_bruteforce(a, b, mdl)))
        order_ok &= fast <= add(a, b, mdl)

    th = 0.1
    worst_closed = worst_riemann = 0.0
    cell = 1e-5
    mids = (np.arange(int(round(th / cell))) + 0.5) * cell
    for _ in range(100):
        n = int(rng.integers(1, 60))
        # continuous distances against the closed form of the step integral
        d = rng.uniform(0, 0.15, n)
        closed = 100.0 * np.mean(np.maximum(0.0, th - d)) / th
        worst_closed = max(worst_closed, abs(auc(d, th) - closed))
        # lattice distances: each grid cell lies wholly on one side of every step,
        # so the midpoint Riemann sum is the integral itself
        q = rng.integers(0, 15_000, n) * cell
        acc = np.searchsorted(np.sort(q), mids, side="left") / n
        riemann = 100.0 * np.sum(acc) * cell / th
        worst_riemann = max(worst_riemann, abs(auc(q, th) - riemann))
    record_property("detail", f"ADD-S max |fast - brute| {worst_adds:.1e}, ADD-S <= ADD {bool(order_ok)}; "
                              f"AUC vs closed form {worst_closed:.1e}, vs Riemann {worst_riemann:.1e}")
    assert worst_adds <= 1e-9 and order_ok
    assert worst_closed < 1e-9 and worst_riemann < 1e-6


@pytest.mark.acceptance(9, "toy training convergence")
def test_toy_training(record_property):
    cfg = TrainConfig(epochs=200, seed=0)
    train_set = standard_training_set(0)
    _, hist = train(train_set, cfg)
    _, hist2 = train(train_set, cfg)
    ratio = hist[-1] / hist[0]

    model, _ = train(separable_set(0), TrainConfig(epochs=200, seed=0))
    held = separable_set(500)
    pred = np.concatenate([forward(model, featurize(s)).labels() for s in held])
    gt = np.concatenate([s.prediction_labels() for s in held])
    score = miou(pred, gt)
    same = np.array(hist).tobytes() == np.array(hist2).tobytes()
    record_property("detail", f"loss {hist[0]:.3f} -> {hist[-1]:.3f} (ratio {ratio:.3f}), "
                              f"held-out mIoU {score:.2f}%, history reproducible: {same}")
    assert ratio < 0.5
    assert score >= 90.0
    assert same


@pytest.mark.acceptance(10, "MeanShift correctness")
def test_mean_shift(record_property):
    rng = np.random.default_rng(10)
    a = rng.normal([0, 0, 0], 0.01, (100, 3))
    b = rng.normal([1, 0, 0], 0.01, (100, 3))
    res = mean_shift(np.vstack([a, b]), 0.05)
    c = res.centers[np.argsort(res.centers[:, 0])]
    dist = [float(np.linalg.norm(c[0] - a.mean(0))), float(np.linalg.norm(c[1] - b.mean(0)))]
    assert len(res.centers) == 2 and max(dist) < 0.01

    outside = 0
    for _ in range(500):
        x = rng.normal(size=(int(rng.integers(1, 80)), 3)) * rng.uniform(0.005, 0.3)
        bw = float(rng.uniform(0.01, 0.2))
        outside += sum(not in_hull(x, ctr) for ctr in mean_shift(x, bw).centers)
    record_property("detail", f"2 centers at {dist[0]:.4f} m and {dist[1]:.4f} m from blob means; "
                              f"{outside} centers outside the hull over 500 inputs")
    assert outside == 0
