from dataclasses import replace

import numpy as np
import pytest

from dkspose.errors import ConfigurationError, TrainingDivergedError, ValidationError
from dkspose.geometry import PointCloud
from dkspose.keypoints import FeatureMap
from dkspose.losses import BACKGROUND, KEYPOINT, PointRoleWeights
from dkspose.synth import default_models, random_scene
from dkspose.toy import (MlpModel, N_FEATURES, Targets, TrainConfig, assign_roles, featurize, forward, gradient_check,
                         hidden_features, load_checkpoint, loss_and_grads, save_checkpoint,
                         save_loss_history, train)
from dkspose.voting import PredictionField


@pytest.fixture(scope="module")
def small_scenes():
    models = default_models()
    out = []
    for i in range(2):
        sc = random_scene(models, seed=i, n_objects=2, n_points=400)
        fg, bg = np.flatnonzero(sc.foreground), np.flatnonzero(~sc.foreground)
        out.append(sc.subset(np.sort(np.r_[fg[:60], bg[:60]])))
    return out


def with_points(scene, pts):
    n = len(pts)
    return replace(scene, cloud=PointCloud(np.asarray(pts, float), None), class_label=np.zeros(n, int),
                   instance_label=np.zeros(n, int), gt_edge_offsets=np.zeros((n, 1, 3)),
                   gt_center_offset=np.zeros((n, 3)), synthetic_color=np.zeros((n, 3)))


class TestFeaturize:
    def test_layout(self, small_scenes):
        fm = featurize(small_scenes[0])
        assert fm.values.shape == (len(small_scenes[0]), N_FEATURES)
        assert np.allclose(fm.values[:, :3].mean(axis=0), 0, atol=1e-12)

    def test_single_point(self, small_scenes):
        fm = featurize(with_points(small_scenes[0], [[0.1, 0.2, 0.7]]))
        assert np.all(fm.values[:, 3:6] == 0)

    def test_planar_patch(self, small_scenes):
        g = np.linspace(-0.05, 0.05, 8)
        pts = np.array([[x, y, 0.6] for x in g for y in g])
        fm = featurize(with_points(small_scenes[0], pts))
        assert np.all(np.abs(fm.values[:, 3]) < 1e-9)
        assert np.all(fm.values[:, 4] > 0)

    def test_translation_invariance(self, small_scenes):
        sc = small_scenes[0]
        moved = replace(sc, cloud=PointCloud(sc.points + [0.3, -0.2, 0.5], None))
        a, b = featurize(sc).values, featurize(moved).values
        assert np.allclose(a, b, atol=1e-9)

    def test_empty(self, small_scenes):
        with pytest.raises(ValidationError):
            featurize(with_points(small_scenes[0], np.zeros((0, 3))))


class TestModel:
    def test_chain_validation(self):
        with pytest.raises(ValidationError):
            MlpModel([np.zeros((3, 4)), np.zeros((5, 8))], [np.zeros(4), np.zeros(8)], 1, 1)
        with pytest.raises(ValidationError):
            MlpModel([np.full((3, 8), np.inf)], [np.zeros(8)], 1, 1)
        with pytest.raises(ValidationError):
            MlpModel([np.zeros((3, 7))], [np.zeros(7)], 1, 1)

    def test_zero_model(self):
        mdl = MlpModel([np.zeros((N_FEATURES, 8))], [np.zeros(8)], 1, 1)
        out = forward(mdl, FeatureMap(np.random.default_rng(0).normal(size=(5, N_FEATURES))))
        assert np.all(out.class_confidence == 0.5)
        assert np.all(out.edge_offsets == 0) and np.all(out.center_offset == 0)

    def test_hand_computed_single_layer(self):
        W = np.zeros((2, 8))
        W[0, 0], W[1, 1] = 1.0, 2.0  # logits
        W[0, 2] = 3.0  # first edge offset x
        W[1, 7] = -1.0  # center z
        b = np.zeros(8)
        b[5] = 0.5  # center x
        out = forward(MlpModel([W], [b], 1, 1), FeatureMap(np.array([[1.0, 1.0]])))
        e = np.exp([1.0, 2.0])
        assert np.allclose(out.class_confidence, [e / e.sum()], atol=1e-15)
        assert out.edge_offsets.tolist() == [[[3.0, 0.0, 0.0]]]
        assert out.center_offset.tolist() == [[0.5, 0.0, -1.0]]

    def test_rows_sum_to_one(self, rng):
        mdl = MlpModel.init(4, 8, seed=2)
        conf = forward(mdl, FeatureMap(rng.normal(size=(50, N_FEATURES)) * 10)).class_confidence
        assert np.allclose(conf.sum(axis=1), 1, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            forward(MlpModel.init(1, 1), FeatureMap(np.zeros((2, 5))))

    def test_batch_order_independent(self, rng):
        mdl = MlpModel.init(2, 4, seed=1)
        X = rng.normal(size=(30, N_FEATURES))
        perm = rng.permutation(30)
        a = forward(mdl, FeatureMap(X))
        b = forward(mdl, FeatureMap(X[perm]))
        assert np.allclose(a.class_confidence[perm], b.class_confidence, atol=1e-15)
        assert np.allclose(a.edge_offsets[perm], b.edge_offsets, atol=1e-15)

    def test_hidden_features_width(self, rng):
        fm = hidden_features(MlpModel.init(2, 4, hidden=(16, 12)), FeatureMap(rng.normal(size=(5, N_FEATURES))))
        assert fm.values.shape == (5, 12) and np.all(fm.values >= 0)


class TestGradientCheck:
    def _truth(self, sc):
        conf = np.eye(sc.n_classes + 1)[sc.prediction_labels()]
        return PredictionField(conf, sc.gt_edge_offsets, sc.gt_center_offset)

    def test_random_small_model(self, small_scenes):
        sc = small_scenes[0]
        mdl = MlpModel.init(sc.n_classes, 8, hidden=(8,), seed=1)
        assert mdl.n_params < 1e4
        assert gradient_check(mdl, featurize(sc), self._truth(sc)) < 1e-4

    def test_with_keypoint_roles(self, small_scenes):
        sc = small_scenes[1]
        mdl = MlpModel.init(sc.n_classes, 8, hidden=(6, 6), seed=4)
        fm = featurize(sc)
        lab = sc.prediction_labels()
        roles = assign_roles(mdl, fm.values, lab, sc.instance_label, sc.n_classes, 10)
        assert np.count_nonzero(roles == KEYPOINT) == 10
        assert gradient_check(mdl, fm, self._truth(sc), roles=roles) < 1e-4

    def test_zero_loss(self):
        # saturated logits give a confidence of exactly 1 on the true class; offsets hit their targets
        b = np.zeros(8)
        b[0] = 1000.0
        mdl = MlpModel([np.zeros((2, 8))], [b], 1, 1)
        truth = PredictionField(np.tile([1.0, 0.0], (3, 1)), np.zeros((3, 1, 3)), np.zeros((3, 3)))
        fm = FeatureMap(np.ones((3, 2)))
        targets = Targets(truth.labels(), truth.edge_offsets, truth.center_offset)
        loss, grads, _ = loss_and_grads(mdl, fm.values, targets, np.zeros(3, int))
        assert loss == 0 and all(np.all(g == 0) for g in grads)
        assert gradient_check(mdl, fm, truth) == 0.0

    def test_single_parameter(self):
        rng = np.random.default_rng(3)
        mdl = MlpModel([rng.normal(size=(1, 8))], [np.zeros(8)], 1, 1)
        fm = FeatureMap(np.array([[1.0], [0.5], [-0.7]]))
        truth = PredictionField(np.array([[1.0, 0], [0, 1], [1, 0]]), rng.normal(size=(3, 1, 3)),
                                rng.normal(size=(3, 3)))
        assert gradient_check(mdl, fm, truth, params=[0], h=1e-5) < 1e-8


class TestTraining:
    def test_config_validation(self):
        for kw in ({"learning_rate": -1}, {"epochs": 0}, {"batch_points": 0}, {"selector": "x"}):
            with pytest.raises(ConfigurationError):
                TrainConfig(**kw)

    def test_zero_learning_rate(self, small_scenes):
        init = MlpModel.init(small_scenes[0].n_classes, 8, seed=0)
        mdl, hist = train(small_scenes, TrainConfig(learning_rate=0.0, epochs=3), model=init)
        assert hist[0] == hist[1] == hist[2]
        assert np.array_equal(mdl.flat(), init.flat())

    def test_loss_decreases(self, small_scenes):
        _, hist = train(small_scenes, TrainConfig(epochs=15, batch_points=64))
        assert hist[-1] < hist[0]

    def test_deterministic(self, small_scenes):
        cfg = TrainConfig(epochs=3, batch_points=64, seed=5)
        a, ha = train(small_scenes, cfg)
        b, hb = train(small_scenes, cfg)
        assert ha == hb and np.array_equal(a.flat(), b.flat())

    def test_background_weight_annihilates(self, small_scenes):
        cfg = TrainConfig(epochs=3, batch_points=64, role_weights=PointRoleWeights(w_background=0.0))
        rng = np.random.default_rng(11)
        noisy = []
        for sc in small_scenes:
            bg = ~sc.foreground
            edge, ctr = sc.gt_edge_offsets.copy(), sc.gt_center_offset.copy()
            edge[bg] = rng.normal(size=edge[bg].shape)
            ctr[bg] = rng.normal(size=ctr[bg].shape)
            noisy.append(replace(sc, gt_edge_offsets=edge, gt_center_offset=ctr))
        assert train(small_scenes, cfg)[1] == train(noisy, cfg)[1]

    def test_fps_selector(self, small_scenes):
        _, hist = train(small_scenes, TrainConfig(epochs=2, selector="fps"))
        assert len(hist) == 2 and np.all(np.isfinite(hist))

    def test_divergence_reports_epoch(self, small_scenes):
        init = MlpModel.init(small_scenes[0].n_classes, 8)
        huge = MlpModel([W * 1e150 for W in init.layer_weights], init.layer_biases, init.n_classes, 8)
        with pytest.raises(TrainingDivergedError) as info, np.errstate(all="ignore"):
            train(small_scenes, TrainConfig(epochs=5), model=huge)
        assert info.value.epoch == 1

    def test_roles_cover_background(self, small_scenes):
        sc = small_scenes[0]
        mdl = MlpModel.init(sc.n_classes, 8)
        lab = sc.prediction_labels()
        roles = assign_roles(mdl, featurize(sc).values, lab, sc.instance_label, sc.n_classes, 25)
        assert np.array_equal(roles == BACKGROUND, lab == sc.n_classes)
        assert np.count_nonzero(roles == KEYPOINT) == min(25, np.count_nonzero(lab != sc.n_classes))
        assert np.all(lab[roles == KEYPOINT] != sc.n_classes)


class TestFiles:
    def test_checkpoint_round_trip(self, tmp_path):
        mdl = MlpModel.init(3, 8, seed=9)
        save_checkpoint(mdl, tmp_path / "m.bin")
        back = load_checkpoint(tmp_path / "m.bin")
        assert np.array_equal(back.flat(), mdl.flat())
        assert (back.n_classes, back.m_edge) == (3, 8)
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw[:4] == b"DKSM" and len(raw) == 4 + 16 + 8 * 3 + 8 * mdl.n_params

    def test_checkpoint_rejects_garbage(self, tmp_path):
        save_checkpoint(MlpModel.init(1, 1), tmp_path / "m.bin")
        raw = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "bad.bin").write_bytes(raw[:-3])
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "bad.bin")
        (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ValidationError):
            load_checkpoint(tmp_path / "magic.bin")

    def test_loss_history_csv(self, tmp_path):
        save_loss_history([1.0, 0.1 + 0.2], tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss" and float(lines[2].split(",")[1]) == 0.1 + 0.2
