"""Desk-scale stand-in for the learned backbone.

A small ReLU MLP maps hand-crafted per-point features to the three heads
(semantic logits, edge-point offsets, center offset) and is trained with the
multi-task loss by SGD with momentum. Keypoint roles for the loss weights are
re-selected every iteration from the network's current last hidden layer.

Feature layout (C = 9 columns):

    0-2  point minus scene centroid (m)
    3-5  eigenvalues of the 16-NN covariance, ascending (cm^2)
    6-8  synthetic color (0..1)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, TrainingDivergedError, ValidationError
from .keypoints import FeatureMap, select_dynamic_keypoints_per_instance, select_fps
from .synth import default_models, make_model, random_scene
from .losses import (BACKGROUND, KEYPOINT, OTHER, PointRoleWeights, center_offset_loss,
                     edge_offset_loss, focal_semantic_loss, multi_task_loss)
from .voting import PredictionField

N_FEATURES = 9
FEATURE_NEIGHBORS = 16
CKPT_MAGIC = b"DKSM"
CKPT_VERSION = 1


def featurize(scene, k: int = FEATURE_NEIGHBORS) -> FeatureMap:
    pts = scene.points
    n = len(pts)
    if n == 0:
        raise ValidationError("cannot featurize an empty scene")
    rel = pts - pts.mean(axis=0)
    k = min(k, n)
    _, nbr = cKDTree(pts).query(pts, k=k)
    nbr = np.asarray(nbr).reshape(n, k)
    nb = pts[nbr] - pts[nbr].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb) / k
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None) * 1e4
    color = np.asarray(scene.synthetic_color, dtype=np.float64)
    return FeatureMap(np.hstack([rel, eig, color]))


@dataclass(eq=False)
class MlpModel:
    layer_weights: list
    layer_biases: list
    n_classes: int
    m_edge: int
    hidden_activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_weights) != len(self.layer_biases) or not self.layer_weights:
            raise ValidationError("need matching, nonempty weight and bias lists")
        for i, (W, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            if W.shape[1] != b.shape[0]:
                raise ValidationError(f"layer {i}: bias length {b.shape[0]} vs {W.shape[1]} outputs")
            if i and W.shape[0] != self.layer_weights[i - 1].shape[1]:
                raise ValidationError(f"layer {i} input does not chain to layer {i - 1}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValidationError("non-finite parameters")
        if self.layer_weights[-1].shape[1] != self.output_dim:
            raise ValidationError("output layer does not match the head sizes")

    @property
    def output_dim(self) -> int:
        return (self.n_classes + 1) + 3 * self.m_edge + 3

    @property
    def input_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.layer_weights, self.layer_biases))

    @classmethod
    def init(cls, n_classes: int, m_edge: int, hidden=(64, 64), input_dim: int = N_FEATURES,
             seed: int = 0) -> MlpModel:
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden, (n_classes + 1) + 3 * m_edge + 3]
        Ws, bs = [], []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(2.0 / a) if i < len(dims) - 2 else np.sqrt(1.0 / a)
            Ws.append(rng.normal(0.0, scale, (a, b)))
            bs.append(np.zeros(b))
        return cls(Ws, bs, n_classes, m_edge)

    @classmethod
    def zeros_like(cls, other: MlpModel) -> MlpModel:
        return cls([np.zeros_like(W) for W in other.layer_weights],
                   [np.zeros_like(b) for b in other.layer_biases], other.n_classes, other.m_edge)

    def params(self) -> list:
        out = []
        for W, b in zip(self.layer_weights, self.layer_biases):
            out += [W, b]
        return out

    def copy(self) -> MlpModel:
        return MlpModel([W.copy() for W in self.layer_weights], [b.copy() for b in self.layer_biases],
                        self.n_classes, self.m_edge)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model: MlpModel, X):
    acts = [X]
    pre = []
    h = X
    last = len(model.layer_weights) - 1
    for i, (W, b) in enumerate(zip(model.layer_weights, model.layer_biases)):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts, pre


def _split_heads(model: MlpModel, out):
    c = model.n_classes + 1
    m = model.m_edge
    logits = out[:, :c]
    edge = out[:, c:c + 3 * m].reshape(-1, m, 3)
    ctr = out[:, c + 3 * m:]
    return logits, edge, ctr


def forward(model: MlpModel, fm: FeatureMap) -> PredictionField:
    """Softmax semantic head plus raw offset heads."""
    X = fm.values
    if X.shape[1] != model.input_dim:
        raise ConfigurationError(f"features have {X.shape[1]} channels, model expects {model.input_dim}")
    acts, _ = _forward(model, X)
    logits, edge, ctr = _split_heads(model, acts[-1])
    return PredictionField(_softmax(logits), edge, ctr)


def hidden_features(model: MlpModel, fm: FeatureMap) -> FeatureMap:
    """Last hidden layer activations, used as the keypoint-selection feature map."""
    acts, _ = _forward(model, fm.values)
    return FeatureMap(acts[-2], fm.point_index)


@dataclass
class Targets:
    """Supervision for one batch: class ids in prediction-column convention,
    edge offsets N x M x 3, center offsets N x 3."""

    labels: np.ndarray
    edge: np.ndarray
    center: np.ndarray


def loss_and_grads(model: MlpModel, X, targets: Targets, roles, lambdas=(3.0, 1.0, 1.0),
                   role_weights: PointRoleWeights = PointRoleWeights(),
                   alpha: float = 0.25, gamma: float = 2.0, cache=None):
    """Multi-task loss on a batch and its gradient for every parameter.

    Returns ``(loss, grads, parts)`` where grads is a list aligned with
    ``model.params()`` and parts maps component names to values.
    """
    acts, pre = cache if cache is not None else _forward(model, X)
    logits, edge, ctr = _split_heads(model, acts[-1])
    conf = _softmax(logits)
    w = role_weights.with_roles(roles)
    le = edge_offset_loss(edge, targets.edge, w)
    lc = center_offset_loss(ctr, targets.center, w)
    ls = focal_semantic_loss(conf, targets.labels, alpha, gamma)
    l1, l2, l3 = lambdas
    loss = multi_task_loss(le.value, lc.value, ls.value, lambdas)

    g_conf = l3 * ls.gradient
    g_logits = conf * (g_conf - np.sum(g_conf * conf, axis=1, keepdims=True))
    g_out = np.hstack([g_logits, l1 * le.gradient.reshape(len(X), -1), l2 * lc.gradient])

    grads = []
    g = g_out
    for i in range(len(model.layer_weights) - 1, -1, -1):
        W = model.layer_weights[i]
        gW = acts[i].T @ g
        gb = g.sum(axis=0)
        grads = [gW, gb] + grads
        if i > 0:
            g = (g @ W.T) * (pre[i - 1] > 0)
    return loss, grads, {"edge": le.value, "center": lc.value, "semantic": ls.value}


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    momentum: float = 0.9
    epochs: int = 200
    batch_points: int = 256
    seed: int = 0
    lambdas: tuple = (3.0, 1.0, 1.0)
    role_weights: PointRoleWeights = field(default_factory=PointRoleWeights)
    dks_k: int = 25
    selector: str = "dks"
    hidden: tuple = (64, 64)
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_points < 1:
            raise ConfigurationError("batch_points must be at least 1")
        if self.dks_k < 0:
            raise ConfigurationError("dks_k must be nonnegative")
        if self.selector not in ("dks", "fps"):
            raise ConfigurationError(f"unknown selector {self.selector!r}")


def assign_roles(model: MlpModel, X, labels, instance, n_classes: int, k: int, selector: str = "dks",
                 points=None, cache=None):
    """KEYPOINT for the top-k selected foreground points, BACKGROUND for
    ground-truth background, OTHER for the rest.

    Selection runs per instance (k candidates each) with a cap of k per batch.
    ``dks`` ranks by the current last hidden layer; ``fps`` samples by distance.
    """
    roles = np.where(labels == n_classes, BACKGROUND, OTHER).astype(np.int64)
    fg = np.flatnonzero(labels != n_classes)
    if k <= 0 or len(fg) == 0:
        return roles
    if selector == "dks":
        acts = cache[0] if cache is not None else _forward(model, X)[0]
        fm = FeatureMap(acts[-2][fg], fg)
        kp = select_dynamic_keypoints_per_instance(fm, instance[fg], k).indices
    else:
        chosen = []
        insts = np.unique(instance[fg])
        per = int(np.ceil(k / len(insts)))
        for lab in insts:
            rows = fg[instance[fg] == lab]
            chosen.append(rows[select_fps(points[rows], per, start=0)])
        kp = np.concatenate(chosen)[:k]
    roles[kp] = KEYPOINT
    return roles


@dataclass
class _Prepared:
    X: np.ndarray
    labels: np.ndarray
    instance: np.ndarray
    edge: np.ndarray
    center: np.ndarray
    points: np.ndarray


def _prepare(scene) -> _Prepared:
    return _Prepared(featurize(scene).values, scene.prediction_labels(), scene.instance_label,
                     scene.gt_edge_offsets, scene.gt_center_offset, scene.points)


def train(scenes, cfg: TrainConfig = TrainConfig(), model: MlpModel | None = None, log=None):
    """SGD with momentum on the multi-task loss.

    Each iteration: forward a batch, pick keypoints among its ground-truth
    foreground points from the current features, weight the offset losses by
    role, backpropagate, update. Returns ``(model, loss_history)`` with one
    mean batch loss per epoch. Fully determined by ``cfg.seed``.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValidationError("no training scenes")
    n_classes = scenes[0].n_classes
    m = scenes[0].gt_edge_offsets.shape[1]
    data = [_prepare(s) for s in scenes]
    if model is None:
        model = MlpModel.init(n_classes, m, cfg.hidden, N_FEATURES, cfg.seed)
    else:
        model = model.copy()
    velocity = [np.zeros_like(p) for p in model.params()]
    rng = np.random.default_rng([cfg.seed, 7])
    history = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for si in rng.permutation(len(data)):
            d = data[si]
            perm = rng.permutation(len(d.X))
            for s in range(0, len(perm), cfg.batch_points):
                b = np.sort(perm[s:s + cfg.batch_points])
                X = d.X[b]
                cache = _forward(model, X)
                roles = assign_roles(model, X, d.labels[b], d.instance[b], n_classes, cfg.dks_k,
                                     cfg.selector, d.points[b], cache)
                tg = Targets(d.labels[b], d.edge[b], d.center[b])
                loss, grads, _ = loss_and_grads(model, X, tg, roles, cfg.lambdas, cfg.role_weights,
                                                cfg.alpha, cfg.gamma, cache)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch)
                losses.append(loss)
                for p, g, v in zip(model.params(), grads, velocity):
                    v *= cfg.momentum
                    v -= cfg.learning_rate * g
                    p += v
        mean = float(np.mean(losses))
        if not np.isfinite(mean) or not np.all(np.isfinite(model.flat())):
            raise TrainingDivergedError(epoch)
        history.append(mean)
        if log is not None:
            log(epoch, mean)
    return model, history


def gradient_check(model: MlpModel, fm: FeatureMap, truth: PredictionField, roles=None,
                   lambdas=(3.0, 1.0, 1.0), role_weights: PointRoleWeights = PointRoleWeights(),
                   h: float = 1e-6, params=None, atol: float = 1e-8) -> float:
    """Largest relative error between backprop and central-difference gradients.

    ``truth`` supplies one-hot class targets and offset targets. ``params``
    optionally restricts the check to a list of flat parameter indices.
    Relative error is ``|a - n| / max(|a|, |n|, atol)``; roles stay fixed.
    """
    X = fm.values
    labels = truth.labels()
    targets = Targets(labels, truth.edge_offsets, truth.center_offset)
    if roles is None:
        roles = np.where(labels == model.n_classes, BACKGROUND, OTHER)
    _, grads, _ = loss_and_grads(model, X, targets, roles, lambdas, role_weights)
    analytic = np.concatenate([g.ravel() for g in grads])
    probe = model.copy()
    tensors = probe.params()
    offsets = np.cumsum([0] + [p.size for p in tensors])
    idx = range(offsets[-1]) if params is None else params
    worst = 0.0
    for flat_i in idx:
        t = int(np.searchsorted(offsets, flat_i, side="right") - 1)
        view = tensors[t].reshape(-1)
        j = flat_i - offsets[t]
        orig = view[j]
        view[j] = orig + h
        fp = loss_and_grads(probe, X, targets, roles, lambdas, role_weights)[0]
        view[j] = orig - h
        fm_ = loss_and_grads(probe, X, targets, roles, lambdas, role_weights)[0]
        view[j] = orig
        num = (fp - fm_) / (2 * h)
        a = analytic[flat_i]
        err = abs(a - num) / max(abs(a), abs(num), atol)
        worst = max(worst, err)
    return worst


def semantic_labels(model: MlpModel, fm: FeatureMap) -> np.ndarray:
    return forward(model, fm).labels()


# ---------------------------------------------------------------------------
# training sets
# ---------------------------------------------------------------------------

def standard_training_set(seed: int = 0, n_scenes: int = 4, n_points: int = 1500, m: int = 8):
    """Small multi-class scenes: two of the four default objects each."""
    models = default_models(m=m)
    return [random_scene(models, seed=seed + i, n_objects=2, n_points=n_points) for i in range(n_scenes)]


def separable_set(seed: int = 0, n_scenes: int = 6, m: int = 8):
    """Two-class scenes (one box class vs background) with balanced counts.

    Every foreground point is kept along with an equal number of background
    points; the box color alone separates the classes.
    """
    mdl = [make_model("box", (0.12, 0.10, 0.09), m=m, class_id=0)]
    out = []
    for i in range(n_scenes):
        sc = random_scene(mdl, seed=seed + i)
        fg = np.flatnonzero(sc.foreground)
        bg = np.flatnonzero(~sc.foreground)
        rng = np.random.default_rng([seed + i, 3])
        keep = rng.choice(bg, size=min(len(fg), len(bg)), replace=False)
        out.append(sc.subset(np.sort(np.concatenate([fg, keep]))))
    return out


# ---------------------------------------------------------------------------
# checkpoint and history files
# ---------------------------------------------------------------------------

def save_checkpoint(model: MlpModel, path) -> None:
    """Binary layout (little endian): magic ``DKSM``, u32 version, u32
    n_classes, u32 m_edge, u32 layer count, (u32 in, u32 out) per layer, then
    per layer the weights row-major followed by the biases, all float64."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IIII", CKPT_VERSION, model.n_classes, model.m_edge, len(model.layer_weights)))
        for W in model.layer_weights:
            fh.write(struct.pack("<II", *W.shape))
        for W, b in zip(model.layer_weights, model.layer_biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValidationError(f"{path}: not a model checkpoint")
    try:
        version, n_classes, m_edge, n_layers = struct.unpack_from("<IIII", raw, 4)
        if version != CKPT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        pos = 20
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from("<II", raw, pos))
            pos += 8
        Ws, bs = [], []
        for a, b in shapes:
            Ws.append(np.frombuffer(raw, "<f8", a * b, pos).reshape(a, b).astype(np.float64))
            pos += 8 * a * b
            bs.append(np.frombuffer(raw, "<f8", b, pos).astype(np.float64))
            pos += 8 * b
    except ValidationError:
        raise
    except (struct.error, ValueError) as exc:
        raise ValidationError(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise ValidationError(f"{path}: trailing or missing bytes")
    return MlpModel(Ws, bs, n_classes, m_edge)


def save_loss_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss"])
        for i, v in enumerate(history, 1):
            wr.writerow([i, format(v, ".17g")])
