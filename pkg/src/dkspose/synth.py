"""Synthetic RGBD-like scenes with exact ground truth.

Objects are analytic primitives (box, cylinder, sphere, L-shaped prism) that
are both sampled into model vertices and ray-cast into a depth grid, so every
rendered point lies exactly on a posed object surface.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GeometryError, ValidationError
from .geometry import CameraIntrinsics, PointCloud, RigidTransform, backproject, transform_points, write_d16, read_d16
from .keypoints import select_edge_points
from .objects import ObjectModel, load_model, save_model
from .voting import PredictionField

BACKGROUND = -1
SCENE_FORMAT_VERSION = 1
SHAPES = ("box", "cylinder", "sphere", "lshape")


@dataclass(frozen=True)
class NoiseConfig:
    depth_sigma: float = 0.0
    offset_sigma: float = 0.0
    label_flip_rate: float = 0.0
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.depth_sigma < 0 or self.offset_sigma < 0:
            raise ConfigurationError("noise sigmas must be nonnegative")
        for name in ("label_flip_rate", "dropout_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class BackgroundPlane:
    """Plane ``normal . X = offset`` in camera coordinates, checker-textured."""

    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 1.2
    checker: float = 0.05


@dataclass(frozen=True, eq=False)
class SceneInstance:
    class_id: int
    instance_id: int
    gt_pose: RigidTransform
    model: ObjectModel
    model_ref: str = ""


@dataclass(frozen=True, eq=False)
class SceneSample:
    cloud: PointCloud
    class_label: np.ndarray
    instance_label: np.ndarray
    instances: tuple
    gt_edge_offsets: np.ndarray
    gt_center_offset: np.ndarray
    synthetic_color: np.ndarray
    n_classes: int
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    depth: np.ndarray | None = None
    scene_id: int = 0
    visible_fraction: tuple | None = None

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    def __len__(self):
        return len(self.cloud)

    @property
    def foreground(self) -> np.ndarray:
        return self.class_label != BACKGROUND

    def instance(self, instance_id) -> SceneInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)

    def gt_scene_edge_points(self, instance_id) -> np.ndarray:
        inst = self.instance(instance_id)
        return transform_points(inst.gt_pose, inst.model.edge_points)

    def prediction_labels(self) -> np.ndarray:
        """Ground-truth labels in prediction-column convention (background = n_classes)."""
        return np.where(self.class_label == BACKGROUND, self.n_classes, self.class_label)

    def subset(self, rows) -> SceneSample:
        rows = np.asarray(rows, dtype=np.int64)
        px = None if self.cloud.source_pixel is None else self.cloud.source_pixel[rows]
        return replace(
            self,
            cloud=PointCloud(self.cloud.points[rows], px),
            class_label=self.class_label[rows],
            instance_label=self.instance_label[rows],
            gt_edge_offsets=self.gt_edge_offsets[rows],
            gt_center_offset=self.gt_center_offset[rows],
            synthetic_color=self.synthetic_color[rows],
        )


# ---------------------------------------------------------------------------
# primitives: surface sampling and ray casting in the object frame
# ---------------------------------------------------------------------------

def _box_grid(lo, hi, h):
    """Surface grid of an axis-aligned box with spacing close to h."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    L = hi - lo
    n = np.maximum(1, np.rint(L / h)).astype(int)
    idx = np.array(list(itertools.product(*[range(k + 1) for k in n])))
    idx = idx[((idx == 0) | (idx == n)).any(axis=1)]
    verts = lo + idx * (L / n)
    normals = np.where(idx == 0, -1.0, np.where(idx == n, 1.0, 0.0))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return verts, normals


def _lshape_boxes(dims):
    a, b, c, t = dims
    lo1, hi1 = np.array([0.0, 0.0, 0.0]), np.array([a, t, c])
    lo2, hi2 = np.array([0.0, 0.0, 0.0]), np.array([t, b, c])
    center = np.array([a / 2, b / 2, c / 2])
    return [(lo1 - center, hi1 - center), (lo2 - center, hi2 - center)]


def _check_dims(shape, dims):
    need = {"box": 3, "cylinder": 2, "sphere": 1, "lshape": 4}
    if shape not in need:
        raise ConfigurationError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    dims = tuple(float(d) for d in np.atleast_1d(dims))
    if len(dims) != need[shape] or any(not d > 0 for d in dims):
        raise ConfigurationError(f"{shape} needs {need[shape]} positive dims, got {dims}")
    if shape == "lshape" and not (dims[3] < dims[0] and dims[3] < dims[1]):
        raise ConfigurationError("lshape thickness must be smaller than both arm lengths")
    return dims


def sample_surface(shape, dims, vertex_count, rng):
    """Vertices and unit normals on the primitive's surface.

    Boxes and L-shapes use a near-uniform grid (edges and corners included,
    normals averaged over incident faces), so the count only approximates
    ``vertex_count``. Spheres use a Fibonacci lattice; cylinders random side
    and cap samples plus two rim circles.
    """
    dims = _check_dims(shape, dims)
    if shape == "box":
        area = 2 * (dims[0] * dims[1] + dims[1] * dims[2] + dims[0] * dims[2])
        h = np.sqrt(area / max(vertex_count, 8))
        return _box_grid(-np.array(dims) / 2, np.array(dims) / 2, min(h, min(dims) / 2))
    if shape == "sphere":
        r = dims[0]
        i = np.arange(vertex_count) + 0.5
        phi = np.arccos(1 - 2 * i / vertex_count)
        theta = np.pi * (1 + 5 ** 0.5) * i
        n = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
        return r * n, n
    if shape == "cylinder":
        r, hgt = dims
        n_rim = max(8, vertex_count // 10)
        ang = 2 * np.pi * np.arange(n_rim) / n_rim
        rims, rim_n = [], []
        for s in (-1.0, 1.0):
            rims.append(np.column_stack([r * np.cos(ang), r * np.sin(ang), np.full(n_rim, s * hgt / 2)]))
            nn = np.column_stack([np.cos(ang), np.sin(ang), np.full(n_rim, s)])
            rim_n.append(nn / np.linalg.norm(nn, axis=1, keepdims=True))
        rest = max(vertex_count - 2 * n_rim, 0)
        side_area, cap_area = 2 * np.pi * r * hgt, np.pi * r * r
        n_side = int(round(rest * side_area / (side_area + 2 * cap_area)))
        n_cap = rest - n_side
        a = rng.uniform(0, 2 * np.pi, n_side)
        side = np.column_stack([r * np.cos(a), r * np.sin(a), rng.uniform(-hgt / 2, hgt / 2, n_side)])
        side_n = np.column_stack([np.cos(a), np.sin(a), np.zeros(n_side)])
        rr = r * np.sqrt(rng.uniform(0, 1, n_cap))
        a = rng.uniform(0, 2 * np.pi, n_cap)
        s = np.where(rng.uniform(size=n_cap) < 0.5, -1.0, 1.0)
        cap = np.column_stack([rr * np.cos(a), rr * np.sin(a), s * hgt / 2])
        cap_n = np.column_stack([np.zeros(n_cap), np.zeros(n_cap), s])
        return np.vstack(rims + [side, cap]), np.vstack(rim_n + [side_n, cap_n])
    # lshape: union of two boxes, dropping grid points buried inside the other box
    boxes = _lshape_boxes(dims)
    area = 0.0
    for lo, hi in boxes:
        L = hi - lo
        area += 2 * (L[0] * L[1] + L[1] * L[2] + L[0] * L[2])
    h = min(np.sqrt(area / max(vertex_count, 12)), dims[3] / 2)
    verts, normals = [], []
    for k, (lo, hi) in enumerate(boxes):
        v, n = _box_grid(lo, hi, h)
        olo, ohi = boxes[1 - k]
        inside = np.all((v > olo + 1e-12) & (v < ohi - 1e-12), axis=1)
        on_other = np.all((v >= olo - 1e-12) & (v <= ohi + 1e-12), axis=1)
        keep = ~inside
        if k == 1:
            keep &= ~on_other  # shared points already emitted by the first box
        verts.append(v[keep])
        normals.append(n[keep])
    return np.vstack(verts), np.vstack(normals)


def _ray_box(o, d, lo, hi):
    """Slab test. Returns entry distance (inf on miss) and the face index 0..5."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_enter = tmin.max(axis=1)
    axis = tmin.argmax(axis=1)
    t_exit = tmax.min(axis=1)
    hit = (t_enter <= t_exit) & (t_enter > 0)
    sign = d[np.arange(len(d)), axis] > 0  # entering through the low face when moving +
    face = 2 * axis + np.where(sign, 0, 1)
    return np.where(hit, t_enter, np.inf), face


def _ray_sphere(o, d, center, r):
    oc = o - center
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", d, oc)
    c = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(disc)
    t = (-b - sq) / a
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _ray_cylinder(o, d, r, hgt):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t_side = (-b - np.sqrt(disc)) / a
    z = o[:, 2] + t_side * d[:, 2]
    side_ok = (disc >= 0) & (a > 0) & (t_side > 0) & (np.abs(z) <= hgt / 2)
    t_side = np.where(side_ok, t_side, np.inf)
    best, face = t_side, np.zeros(len(o), dtype=np.int64)
    for k, zc in ((1, -hgt / 2), (2, hgt / 2)):
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (zc - o[:, 2]) / d[:, 2]
        p = o + t[:, None] * d
        ok = (t > 0) & (p[:, 0] ** 2 + p[:, 1] ** 2 <= r * r)
        t = np.where(ok, t, np.inf)
        better = t < best
        best = np.where(better, t, best)
        face = np.where(better, k, face)
    return best, face


def ray_cast(model: ObjectModel, o, d):
    """Distance along rays ``o + s d`` (object frame) to the first surface hit
    and a face index for texturing."""
    shape, dims = model.shape, model.dims
    if shape == "box":
        return _ray_box(o, d, -np.array(dims) / 2, np.array(dims) / 2)
    if shape == "sphere":
        t = _ray_sphere(o, d, np.zeros(3), dims[0])
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        return t, (p > 0).astype(np.int64) @ np.array([1, 2, 4])
    if shape == "cylinder":
        return _ray_cylinder(o, d, dims[0], dims[1])
    if shape == "lshape":
        best = np.full(len(o), np.inf)
        face = np.zeros(len(o), dtype=np.int64)
        for k, (lo, hi) in enumerate(_lshape_boxes(dims)):
            t, f = _ray_box(o, d, lo, hi)
            better = t < best
            best = np.where(better, t, best)
            face = np.where(better, f + 6 * k, face)
        return best, face
    raise ConfigurationError(f"model {model.name!r} has no renderable shape")


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def make_model(shape: str, dims, vertex_count: int = 600, m: int = 8, seed: int = 0,
               class_id: int = 0, name: str | None = None) -> ObjectModel:
    """Sample an object model on a primitive and choose its ``m`` edge points.

    Spheres and cylinders are flagged symmetric; boxes and L-shapes are not.
    """
    if not (vertex_count >= m >= 3):
        raise ConfigurationError(f"need vertex_count >= m >= 3, got {vertex_count}, {m}")
    dims = _check_dims(shape, dims)
    rng = np.random.default_rng(seed)
    verts, normals = sample_surface(shape, dims, vertex_count, rng)
    model = ObjectModel.from_vertices(
        class_id, verts, normals=normals, symmetric=shape in ("sphere", "cylinder"),
        shape=shape, dims=dims, name=name or f"{shape}_{class_id}",
    )
    return model.with_edge_points(select_edge_points(model, m))


def default_models(m: int = 8, seed: int = 0, vertex_count: int = 600) -> list[ObjectModel]:
    """Four-object library at YCB-like scale (diameters 0.15 to 0.20 m)."""
    specs = [
        ("box", (0.12, 0.10, 0.09)),
        ("cylinder", (0.04, 0.14)),
        ("lshape", (0.13, 0.10, 0.05, 0.04)),
        ("sphere", (0.08,)),
    ]
    return [make_model(s, d, vertex_count, m, seed + c, class_id=c) for c, (s, d) in enumerate(specs)]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _palette(class_id, face):
    """Deterministic per-class hue with per-face brightness."""
    hue = (0.61803398875 * (class_id + 1)) % 1.0
    base = np.array([
        0.5 + 0.5 * np.cos(2 * np.pi * (hue + 0.0)),
        0.5 + 0.5 * np.cos(2 * np.pi * (hue + 1 / 3)),
        0.5 + 0.5 * np.cos(2 * np.pi * (hue + 2 / 3)),
    ])
    shade = 0.55 + 0.45 * ((np.asarray(face) * 0.37) % 1.0)
    return np.clip(shade[:, None] * base[None, :], 0.0, 1.0)


def _pixel_rays(intr: CameraIntrinsics):
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    d = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u, dtype=float)], axis=-1)
    return d.reshape(-1, 3)


def render_scene(models, poses, intr: CameraIntrinsics | None = None,
                 background: BackgroundPlane | None = BackgroundPlane(),
                 noise: NoiseConfig | None = None, n_points: int = 12000,
                 n_classes: int | None = None, scene_id: int = 0, model_refs=None) -> SceneSample:
    """Z-buffer render posed primitives (plus an optional background plane),
    backproject, and uniformly subsample to ``n_points`` points.

    Depth noise and pixel dropout are applied to the depth grid before
    backprojection. Labels are exact; offsets are measured from each stored
    (possibly noisy) point to the exact posed edge points and centroid, so
    ``p + offset`` always lands on the true target.
    """
    intr = intr or CameraIntrinsics()
    noise = noise or NoiseConfig()
    models, poses = list(models), list(poses)
    if len(models) != len(poses):
        raise ConfigurationError("models and poses differ in length")
    ms = {mdl.n_edge_points for mdl in models}
    if len(ms) > 1:
        raise ConfigurationError("all models in a scene need the same number of edge points")
    m = ms.pop() if ms else 0
    if n_classes is None:
        n_classes = 1 + max((mdl.class_id for mdl in models), default=-1)
    for mdl, pose in zip(models, poses):
        if np.any(transform_points(pose, mdl.vertices)[:, 2] <= 0):
            raise GeometryError(f"object {mdl.name!r} is not fully in front of the camera")

    rng = np.random.default_rng([noise.seed, scene_id])
    rays = _pixel_rays(intr)
    npx = len(rays)
    zbuf = np.full(npx, np.inf)
    owner = np.full(npx, -1, dtype=np.int64)
    covered = np.zeros(len(models), dtype=np.int64)
    face = np.zeros(npx, dtype=np.int64)

    if background is not None:
        nrm = np.asarray(background.normal, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = background.offset / (rays @ nrm)
        t = np.where(np.isfinite(t) & (t > 0), t, np.inf)
        zbuf = t
        pts = rays * np.where(np.isfinite(t), t, 0.0)[:, None]
        cell = np.floor(pts[:, :2] / background.checker).astype(np.int64)
        face = (cell.sum(axis=1) % 2)

    for k, (mdl, pose) in enumerate(zip(models, poses)):
        # cull rays that miss the bounding sphere
        c_obj = 0.5 * (mdl.vertices.min(axis=0) + mdl.vertices.max(axis=0))
        rad = np.linalg.norm(mdl.vertices - c_obj, axis=1).max() * (1 + 1e-9) + 1e-12
        c_cam = transform_points(pose, c_obj)
        cand = np.flatnonzero(np.isfinite(_ray_sphere(np.zeros((npx, 3)), rays, c_cam, rad))
                              | (np.linalg.norm(c_cam) <= rad))
        if len(cand) == 0:
            continue
        o_obj = np.broadcast_to(-pose.R.T @ pose.t, (len(cand), 3))
        d_obj = rays[cand] @ pose.R
        t, f = ray_cast(mdl, np.ascontiguousarray(o_obj), d_obj)
        covered[k] = np.count_nonzero(np.isfinite(t))
        better = t < zbuf[cand]
        sel = cand[better]
        zbuf[sel] = t[better]
        owner[sel] = k
        face[sel] = f[better]

    visible = np.bincount(owner[owner >= 0], minlength=len(models))
    visible_fraction = tuple(float(v / c) if c else 0.0 for v, c in zip(visible, covered))
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0).reshape(intr.height, intr.width)
    if noise.dropout_rate > 0:
        depth[rng.uniform(size=depth.shape) < noise.dropout_rate] = 0.0
    if noise.depth_sigma > 0:
        jitter = rng.normal(0.0, noise.depth_sigma, depth.shape)
        depth = np.where(depth > 0, np.maximum(depth + jitter, 1e-6), 0.0)

    cloud = backproject(depth, intr)
    pix = cloud.source_pixel[:, 1] * intr.width + cloud.source_pixel[:, 0]
    if len(cloud) > n_points:
        rows = np.sort(rng.choice(len(cloud), size=n_points, replace=False))
    else:
        rows = np.arange(len(cloud))
    cloud = PointCloud(cloud.points[rows], cloud.source_pixel[rows])
    pix = pix[rows]
    pts = cloud.points

    own = owner[pix]
    class_label = np.full(len(pts), BACKGROUND, dtype=np.int64)
    instance_label = np.full(len(pts), BACKGROUND, dtype=np.int64)
    edge_off = np.zeros((len(pts), m, 3))
    ctr_off = np.zeros((len(pts), 3))
    color = np.empty((len(pts), 3))
    bg = own < 0
    color[bg] = np.where((face[pix[bg]] == 0)[:, None], [0.55, 0.5, 0.45], [0.35, 0.32, 0.3])

    refs = list(model_refs) if model_refs is not None else [""] * len(models)
    instances = []
    for k, (mdl, pose) in enumerate(zip(models, poses)):
        instances.append(SceneInstance(mdl.class_id, k, pose, mdl, refs[k]))
        rows_k = np.flatnonzero(own == k)
        class_label[rows_k] = mdl.class_id
        instance_label[rows_k] = k
        targets = transform_points(pose, mdl.edge_points)
        edge_off[rows_k] = targets[None, :, :] - pts[rows_k, None, :]
        ctr_off[rows_k] = transform_points(pose, mdl.centroid) - pts[rows_k]
        color[rows_k] = _palette(mdl.class_id, face[pix[rows_k]])

    return SceneSample(
        cloud=cloud, class_label=class_label, instance_label=instance_label,
        instances=tuple(instances), gt_edge_offsets=edge_off, gt_center_offset=ctr_off,
        synthetic_color=color, n_classes=int(n_classes), intrinsics=intr, depth=depth,
        scene_id=int(scene_id), visible_fraction=visible_fraction,
    )


def place_objects(models, rng, intr: CameraIntrinsics | None = None, depth_range=(0.55, 0.85),
                  max_tries: int = 500) -> list[RigidTransform]:
    """Random upright-agnostic poses inside the view frustum with bounding
    spheres kept apart (occlusion is still possible)."""
    intr = intr or CameraIntrinsics()
    poses, placed = [], []
    for mdl in models:
        rad = 0.5 * mdl.diameter
        for _ in range(max_tries):
            z = rng.uniform(*depth_range)
            u = rng.uniform(0.2 * intr.width, 0.8 * intr.width)
            v = rng.uniform(0.2 * intr.height, 0.8 * intr.height)
            c = np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
            if all(np.linalg.norm(c - pc) > rad + pr for pc, pr in placed):
                break
        else:
            raise GeometryError("could not place objects without overlap")
        R = RigidTransform.random(rng).R
        # place the model centroid at c
        t = c - R @ mdl.centroid
        poses.append(RigidTransform(R, t))
        placed.append((c, rad))
    return poses


def random_scene(models, seed: int, n_objects: int | None = None, intr: CameraIntrinsics | None = None,
                 noise: NoiseConfig | None = None, n_points: int = 12000,
                 background: BackgroundPlane | None = BackgroundPlane(), scene_id: int | None = None,
                 n_classes: int | None = None, model_refs=None, min_visible_fraction: float = 0.3,
                 max_attempts: int = 50) -> SceneSample:
    """Draw objects from ``models`` without replacement, pose them and render.

    Placements are redrawn until every object shows at least
    ``min_visible_fraction`` of the pixels it would cover on its own.
    """
    if not 0.0 <= min_visible_fraction <= 1.0:
        raise ConfigurationError("min_visible_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    models = list(models)
    k = len(models) if n_objects is None else min(n_objects, len(models))
    pick = np.sort(rng.choice(len(models), size=k, replace=False))
    chosen = [models[i] for i in pick]
    refs = None if model_refs is None else [model_refs[i] for i in pick]
    if n_classes is None:
        n_classes = 1 + max(mdl.class_id for mdl in models)
    for _ in range(max_attempts):
        poses = place_objects(chosen, rng, intr)
        scene = render_scene(chosen, poses, intr, background, noise, n_points,
                             n_classes=n_classes, scene_id=seed if scene_id is None else scene_id,
                             model_refs=refs)
        if min(scene.visible_fraction, default=1.0) >= min_visible_fraction:
            return scene
    raise GeometryError(f"no placement with every object at least {min_visible_fraction:.0%} visible "
                        f"after {max_attempts} attempts")


# ---------------------------------------------------------------------------
# oracle predictions
# ---------------------------------------------------------------------------

def oracle_predictions(scene: SceneSample, noise: NoiseConfig | None = None) -> PredictionField:
    """A perfect network with controllable corruption.

    One-hot confidences from the true labels, a ``label_flip_rate`` fraction
    moved to a uniformly drawn wrong column, and isotropic Gaussian noise of
    ``offset_sigma`` on every offset.
    """
    noise = noise or NoiseConfig()
    rng = np.random.default_rng([noise.seed, scene.scene_id, 1])
    n, ncol = len(scene), scene.n_classes + 1
    labels = scene.prediction_labels().copy()
    if noise.label_flip_rate > 0:
        flip = rng.uniform(size=n) < noise.label_flip_rate
        shift = rng.integers(1, ncol, size=n)
        labels = np.where(flip, (labels + shift) % ncol, labels)
    conf = np.zeros((n, ncol))
    conf[np.arange(n), labels] = 1.0
    edge = scene.gt_edge_offsets.copy()
    ctr = scene.gt_center_offset.copy()
    if noise.offset_sigma > 0:
        edge = edge + rng.normal(0.0, noise.offset_sigma, edge.shape)
        ctr = ctr + rng.normal(0.0, noise.offset_sigma, ctr.shape)
    return PredictionField(conf, edge, ctr)


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def save_scene(scene: SceneSample, path, model_paths=None) -> None:
    """Write ``<path>`` (JSON scene document) and ``<path stem>.d16`` depth."""
    path = Path(path)
    refs = model_paths or [inst.model_ref for inst in scene.instances]
    depth_name = None
    if scene.depth is not None:
        depth_name = path.with_suffix(".d16").name
        write_d16(path.with_suffix(".d16"), scene.depth)
    intr = scene.intrinsics
    doc = {
        "format_version": SCENE_FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "n_classes": scene.n_classes,
        "intrinsics": {"fx": _fmt(intr.fx), "fy": _fmt(intr.fy), "cx": _fmt(intr.cx), "cy": _fmt(intr.cy),
                       "width": intr.width, "height": intr.height},
        "depth_file": depth_name,
        "instances": [
            {"class_id": inst.class_id, "instance_id": inst.instance_id,
             "pose": [_fmt(v) for v in inst.gt_pose.to_row()], "model": str(ref)}
            for inst, ref in zip(scene.instances, refs)
        ],
        "points": [
            {"xyz": [_fmt(v) for v in p], "class": int(c), "instance": int(i),
             "color": [_fmt(v) for v in col], "pixel": [int(q) for q in px]}
            for p, c, i, col, px in zip(scene.points, scene.class_label, scene.instance_label,
                                        scene.synthetic_color, scene.cloud.source_pixel)
        ],
    }
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_scene(path) -> SceneSample:
    """Read a scene document; ground-truth offsets are rebuilt from the
    instance poses and the referenced model files."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format_version") != SCENE_FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported scene format_version {doc.get('format_version')!r}")
    try:
        iv = doc["intrinsics"]
        intr = CameraIntrinsics(float(iv["fx"]), float(iv["fy"]), float(iv["cx"]), float(iv["cy"]),
                                int(iv["width"]), int(iv["height"]))
        recs = doc["points"]
        pts = np.array([[float(v) for v in r["xyz"]] for r in recs]).reshape(-1, 3)
        cls = np.array([r["class"] for r in recs], dtype=np.int64)
        ins = np.array([r["instance"] for r in recs], dtype=np.int64)
        col = np.array([[float(v) for v in r["color"]] for r in recs]).reshape(-1, 3)
        px = np.array([r["pixel"] for r in recs], dtype=np.int64).reshape(-1, 2)
        instances = []
        for rec in doc["instances"]:
            ref = Path(rec["model"])
            if not ref.is_absolute():
                ref = path.parent / ref
            instances.append(SceneInstance(int(rec["class_id"]), int(rec["instance_id"]),
                                           RigidTransform.from_row([float(v) for v in rec["pose"]]),
                                           load_model(ref), rec["model"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed scene document: {exc}") from exc
    m = instances[0].model.n_edge_points if instances else 0
    edge = np.zeros((len(pts), m, 3))
    ctr = np.zeros((len(pts), 3))
    for inst in instances:
        rows = np.flatnonzero(ins == inst.instance_id)
        edge[rows] = transform_points(inst.gt_pose, inst.model.edge_points)[None] - pts[rows, None]
        ctr[rows] = transform_points(inst.gt_pose, inst.model.centroid) - pts[rows]
    depth = None
    if doc.get("depth_file"):
        depth = read_d16(path.parent / doc["depth_file"])
    return SceneSample(PointCloud(pts, px), cls, ins, tuple(instances), edge, ctr, col,
                       int(doc["n_classes"]), intr, depth, int(doc["scene_id"]))


def save_models(models, directory) -> list[str]:
    """Write ``model_<class>.json`` files; returns the file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for mdl in models:
        name = f"model_{mdl.class_id}.json"
        save_model(mdl, directory / name)
        names.append(name)
    return names
