"""End-to-end orchestration: configuration, estimation with stage timing,
evaluation reports, benchmark sweeps, and their CSV/SVG files."""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ValidationError
from .geometry import RigidTransform
from .losses import PointRoleWeights
from .metrics import ClassRow, EvalReport, add, add01d_rate, add_of, add_s, auc, keypoint_error, miou
from .synth import NoiseConfig, default_models, oracle_predictions, random_scene
from .voting import (InstanceHypothesis, PredictionField, cluster_instances, estimate_pose,
                     filter_background, vote_edge_points)

POSE_COLUMNS = ["scene_id", "instance_id", "class_id",
                "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz"]
EVAL_COLUMNS = ["class_id", "adds_auc", "add_s_auc", "add01d_rate", "kp_err_m", "n_instances"]


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text, n):
    vals = tuple(float(x) for x in str(text).replace(",", " ").split())
    if len(vals) != n:
        raise ValueError(f"expected {n} numbers")
    return vals


@dataclass
class PipelineConfig:
    n_points: int = 12000
    m_edge_points: int = 8
    k_keypoints: int = 25
    lambdas: tuple = (3.0, 1.0, 1.0)
    role_weights: tuple = (2.0, 0.0, 1.0)
    center_bandwidth: float = 0.05
    edge_bandwidth: float = 0.03
    min_cluster_size: int = 30
    filter_background: bool = True
    selector: str = "dks"
    weighted_fit: bool = False
    offset_sigma: float = 0.0
    depth_sigma: float = 0.0
    label_flip_rate: float = 0.0
    dropout_rate: float = 0.0
    n_scenes: int = 10
    n_objects: int = 4
    seed: int = 0
    repeat: int = 20
    max_threshold: float = 0.10

    def __post_init__(self):
        for name in ("n_points", "m_edge_points", "n_scenes", "n_objects", "repeat"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if self.m_edge_points < 3:
            raise ConfigurationError("m_edge_points must be at least 3")
        if self.k_keypoints < 0:
            raise ConfigurationError("k_keypoints must be nonnegative")
        if not (self.center_bandwidth > 0 and self.edge_bandwidth > 0):
            raise ConfigurationError("bandwidths must be positive")
        if self.selector not in ("dks", "fps"):
            raise ConfigurationError(f"selector must be dks or fps, got {self.selector!r}")
        if not self.max_threshold > 0:
            raise ConfigurationError("max_threshold must be positive")
        self.noise  # validates the noise fields
        PointRoleWeights(*self.role_weights)

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.depth_sigma, self.offset_sigma, self.label_flip_rate,
                           self.dropout_rate, self.seed)

    @property
    def point_role_weights(self) -> PointRoleWeights:
        return PointRoleWeights(*self.role_weights)

    @classmethod
    def from_mapping(cls, values: dict, base: PipelineConfig | None = None) -> PipelineConfig:
        """Apply string (or typed) values on top of ``base`` (default: defaults)."""
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            if raw is None:
                continue
            default = getattr(base, key)
            try:
                if isinstance(default, bool):
                    val = raw if isinstance(raw, bool) else _parse_bool(raw)
                elif isinstance(default, int):
                    val = int(raw)
                elif isinstance(default, float):
                    val = float(raw)
                elif isinstance(default, tuple):
                    val = tuple(float(x) for x in raw) if isinstance(raw, (list, tuple)) else _parse_floats(raw, len(default))
                else:
                    val = str(raw).strip()
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"bad value for {key}: {exc}") from None
            out[key] = val
        return replace(base, **out)


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment; blank lines ignored."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def resolve_config(config_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Command-line overrides beat the config file, which beats the defaults."""
    cfg = PipelineConfig()
    if config_path is not None:
        cfg = PipelineConfig.from_mapping(read_config_file(config_path), cfg)
    if overrides:
        cfg = PipelineConfig.from_mapping({k: v for k, v in overrides.items() if v is not None}, cfg)
    return cfg


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

@dataclass
class TimingBreakdown:
    prediction_ms: float = 0.0
    pose_estimation_ms: float = 0.0
    total_ms: float = 0.0

    def rows(self):
        return [("network_forward", self.prediction_ms), ("pose_estimation", self.pose_estimation_ms),
                ("total", self.total_ms)]

    @staticmethod
    def median(items) -> TimingBreakdown:
        items = list(items)
        return TimingBreakdown(float(np.median([t.prediction_ms for t in items])),
                               float(np.median([t.pose_estimation_ms for t in items])),
                               float(np.median([t.total_ms for t in items])))


@dataclass(eq=False)
class PoseEstimate:
    scene_id: int
    instance_id: int
    class_id: int
    pose: RigidTransform
    hypothesis: InstanceHypothesis | None = None


@dataclass(eq=False)
class EstimateResult:
    poses: list
    timing: TimingBreakdown
    status: str = "ok"
    messages: list = field(default_factory=list)


def _match_instance_ids(hyps, scene):
    """Name each hypothesis after the ground-truth instance owning most of its
    points. When two claim the same instance the larger keeps it; the others
    (and those made mostly of background) get -1."""
    labels = getattr(scene, "instance_label", None)
    if labels is None:
        return list(range(len(hyps)))
    ids = []
    for h in hyps:
        lab = labels[h.point_indices]
        lab = lab[lab >= 0]
        ids.append(int(np.bincount(lab).argmax()) if len(lab) else -1)
    order = sorted(range(len(hyps)), key=lambda i: -len(hyps[i].point_indices))
    seen = set()
    for i in order:
        if ids[i] in seen:
            ids[i] = -1
        elif ids[i] >= 0:
            seen.add(ids[i])
    return ids


def run_estimate(scene, predictions, models, cfg: PipelineConfig = PipelineConfig()) -> EstimateResult:
    """Background filtering (optional), center-vote clustering, edge-point
    voting and least-squares fitting for every instance.

    ``predictions`` is a PredictionField or a zero-argument callable producing
    one (timed as the network-forward stage). ``models`` maps class id to
    ObjectModel (a sequence indexed by class id also works).

    With filtering off, background rows stay in every clustering pass at zero
    weight: they cost time but cannot move a mode, so poses are unchanged.
    """
    if not isinstance(models, dict):
        models = {m.class_id: m for m in models}
    t0 = time.perf_counter()
    pred = predictions() if callable(predictions) else predictions
    t1 = time.perf_counter()
    if not isinstance(pred, PredictionField):
        raise ValidationError("predictions must be a PredictionField")
    points = scene.points if hasattr(scene, "points") else np.asarray(scene, dtype=np.float64)
    if len(points) != len(pred):
        raise ValidationError(f"{len(points)} points but {len(pred)} predictions")
    scene_id = int(getattr(scene, "scene_id", 0))

    groups = filter_background(pred)
    bg_rows = np.flatnonzero(pred.labels() == pred.n_classes)
    hyps = []
    for class_id, rows in groups.items():
        if class_id not in models:
            raise ValidationError(f"no model for predicted class {class_id}")
        if cfg.filter_background:
            idx, w, retained = rows, None, None
        else:
            idx = np.concatenate([rows, bg_rows])
            w = np.concatenate([np.ones(len(rows)), np.zeros(len(bg_rows))])
            retained = bg_rows
        for h in cluster_instances(points, pred, cfg.center_bandwidth, class_id, idx, w,
                                   cfg.min_cluster_size):
            hyps.append(vote_edge_points(h, points, pred, cfg.edge_bandwidth, retained_rows=retained))
    poses = [estimate_pose(h, models[h.class_id], cfg.weighted_fit) for h in hyps]
    t2 = time.perf_counter()

    timing = TimingBreakdown(1e3 * (t1 - t0), 1e3 * (t2 - t1), 1e3 * (t2 - t0))
    ids = _match_instance_ids(hyps, scene)
    out = [PoseEstimate(scene_id, i, h.class_id, p, h) for i, h, p in zip(ids, hyps, poses)]
    if not groups:
        msg = f"scene {scene_id}: no foreground points, nothing to estimate"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return EstimateResult([], timing, "no-foreground", [msg])
    return EstimateResult(out, timing)


def time_estimate(scene, predictions, models, cfg: PipelineConfig = PipelineConfig(),
                  repeat: int | None = None) -> EstimateResult:
    """run_estimate repeated ``repeat`` times; poses from the first run,
    timing as the per-stage median."""
    repeat = cfg.repeat if repeat is None else repeat
    first = run_estimate(scene, predictions, models, cfg)
    timings = [first.timing]
    for _ in range(repeat - 1):
        timings.append(run_estimate(scene, predictions, models, cfg).timing)
    first.timing = TimingBreakdown.median(timings)
    return first


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class InstanceScore:
    scene_id: int
    instance_id: int
    class_id: int
    add: float
    add_s: float
    add_of: float
    kp_err: float
    matched: bool


def score_instances(results, scenes, max_threshold: float = 0.10) -> list[InstanceScore]:
    """One row per ground-truth instance; a missing estimate scores
    ``max_threshold`` on every distance."""
    by_scene = {}
    for res in results:
        for p in res.poses:
            if p.instance_id >= 0:
                by_scene.setdefault(p.scene_id, {})[p.instance_id] = p
    rows = []
    for sc in scenes:
        est = by_scene.get(sc.scene_id, {})
        for inst in sc.instances:
            p = est.get(inst.instance_id)
            if p is None:
                m = max_threshold
                rows.append(InstanceScore(sc.scene_id, inst.instance_id, inst.class_id, m, m, m, np.nan, False))
                continue
            mdl = inst.model
            kp = np.nan
            if p.hypothesis is not None and p.hypothesis.voted_edge_points is not None:
                kp = keypoint_error(p.hypothesis.voted_edge_points, sc.gt_scene_edge_points(inst.instance_id))
            rows.append(InstanceScore(sc.scene_id, inst.instance_id, inst.class_id,
                                      add(p.pose, inst.gt_pose, mdl), add_s(p.pose, inst.gt_pose, mdl),
                                      add_of(p.pose, inst.gt_pose, mdl), kp, True))
    return rows


def run_eval(results, scenes, models=None, cfg: PipelineConfig = PipelineConfig(),
             predicted_labels=None) -> EvalReport:
    """Per-class AUCs (ADD-S and ADD(S)), ADD(S)-0.1d rate and keypoint error.

    ``predicted_labels`` (one array per scene, background = n_classes) adds
    an mIoU against the ground-truth labels.
    """
    scenes = list(scenes)
    scores = score_instances(results, scenes, cfg.max_threshold)
    diam = {}
    for sc in scenes:
        for inst in sc.instances:
            diam[inst.class_id] = inst.model.diameter
    if models is not None:
        for m in (models.values() if isinstance(models, dict) else models):
            diam.setdefault(m.class_id, m.diameter)
    rows = []
    for c in sorted({s.class_id for s in scores}):
        cs = [s for s in scores if s.class_id == c]
        kp = [s.kp_err for s in cs if not np.isnan(s.kp_err)]
        rows.append(ClassRow(
            c,
            auc([s.add_s for s in cs], cfg.max_threshold),
            auc([s.add_of for s in cs], cfg.max_threshold),
            add01d_rate([s.add_of for s in cs], diam[c]),
            float(np.mean(kp)) if kp else float("nan"),
            len(cs),
        ))
    m_iou = float("nan")
    if predicted_labels is not None:
        m_iou = miou(np.concatenate([np.asarray(p).reshape(-1) for p in predicted_labels]),
                     np.concatenate([sc.prediction_labels() for sc in scenes]))
    timings = [r.timing for r in results]
    timing = {}
    if timings:
        timing = {
            "network_forward_ms": float(np.mean([t.prediction_ms for t in timings])),
            "pose_estimation_ms": float(np.mean([t.pose_estimation_ms for t in timings])),
            "total_ms": float(np.mean([t.total_ms for t in timings])),
        }
    return EvalReport(rows, m_iou, timing)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def _g(x) -> str:
    return format(float(x), ".17g")


def write_poses_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(POSE_COLUMNS)
        for res in results:
            for p in res.poses:
                wr.writerow([p.scene_id, p.instance_id, p.class_id] + [_g(v) for v in p.pose.to_row()])


def read_poses_csv(path) -> list[EstimateResult]:
    """Poses grouped per scene (no hypotheses or timings are stored)."""
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != POSE_COLUMNS:
            raise ValidationError(f"{path}: unexpected pose columns {rd.fieldnames}")
        groups = {}
        for row in rd:
            pose = RigidTransform.from_row([float(row[c]) for c in POSE_COLUMNS[3:]])
            sid = int(row["scene_id"])
            groups.setdefault(sid, []).append(PoseEstimate(sid, int(row["instance_id"]), int(row["class_id"]), pose))
    return [EstimateResult(p, TimingBreakdown()) for _, p in sorted(groups.items())]


def write_eval_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(EVAL_COLUMNS)
        for r in report.rows + [report.all_row()]:
            wr.writerow([r.class_id, _g(r.adds_auc), _g(r.add_s_auc), _g(r.add01d_rate), _g(r.kp_err_m),
                         r.n_instances])


def write_timing_csv(timing: TimingBreakdown, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["stage", "ms_per_frame"])
        for stage, ms in timing.rows():
            wr.writerow([stage, f"{ms:.3f}"])


def write_rows_csv(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_g(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])


def write_svg_plot(path, series: dict, xlabel: str, ylabel: str, title: str = "") -> None:
    """Standalone line plot; the plotted numbers are embedded as CSV in <desc>."""
    W, H, L, R, T, B = 560, 360, 70, 20, 40, 50
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(0.0, min(ys)), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return L + (x - x0) / (x1 - x0) * (W - L - R)

    def sy(y):
        return H - B - (y - y0) / (y1 - y0) * (H - T - B)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    table = ["series,x,y"] + [f"{name},{_g(x)},{_g(y)}" for name, pts in series.items() for x, y in pts]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f"<title>{title}</title>", "<desc>", *table, "</desc>",
           '<rect width="100%" height="100%" fill="white"/>',
           f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{sx(xv):.1f}" y="{H - B + 16}" font-size="11" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{L - 6}" y="{sy(yv) + 4:.1f}" font-size="11" text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{(L + W - R) / 2}" y="{H - 12}" font-size="12" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{(T + H - B) / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {(T + H - B) / 2})">{ylabel}</text>')
    out.append(f'<text x="{W / 2}" y="22" font-size="14" text-anchor="middle">{title}</text>')
    for i, (name, pts) in enumerate(series.items()):
        col = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{col}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{col}"/>')
        out.append(f'<text x="{W - R - 4}" y="{T + 14 * (i + 1)}" font-size="11" fill="{col}" '
                   f'text-anchor="end">{name}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# benchmark suites
# ---------------------------------------------------------------------------

SUITE_DEFAULTS = {
    "seed": 0,
    "n_scenes": 10,
    "n_points": 12000,
    "n_objects": 4,
    "repeat": 3,
    "offset_sigma": [0.0, 0.005, 0.02],
    "m_edge_points": [8],
    "filter_background": [True, False],
    "selectors": ["dks:25", "fps:25"],
    "train_scenes": 4,
    "train_points": 1500,
    "train_epochs": 40,
    "eval_scenes": 4,
}


def _parse_selector(spec: str):
    name, _, k = str(spec).partition(":")
    if name not in ("dks", "fps"):
        raise ConfigurationError(f"selectors: unknown selector {name!r}")
    try:
        k = int(k) if k else 25
    except ValueError:
        raise ConfigurationError(f"selectors: bad keypoint count in {spec!r}") from None
    if k < 0:
        raise ConfigurationError(f"selectors: negative keypoint count in {spec!r}")
    return name, k


def validate_suite(suite: dict) -> dict:
    """Fill defaults and check types; errors name the offending field."""
    if not isinstance(suite, dict):
        raise ConfigurationError("suite must be a JSON object")
    unknown = set(suite) - set(SUITE_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown suite field {sorted(unknown)[0]!r}")
    out = dict(SUITE_DEFAULTS)
    out.update(suite)
    for key in ("seed", "n_scenes", "n_points", "n_objects", "repeat", "train_scenes", "train_points",
                "train_epochs", "eval_scenes"):
        v = out[key]
        if isinstance(v, bool) or not isinstance(v, int) or (v < 1 and key != "seed"):
            raise ConfigurationError(f"{key} must be a positive integer")
    for key, kind in (("offset_sigma", (int, float)), ("m_edge_points", int), ("filter_background", bool),
                      ("selectors", str)):
        v = out[key]
        if not isinstance(v, list) or not v:
            raise ConfigurationError(f"{key} must be a nonempty list")
        for item in v:
            if not isinstance(item, kind) or (kind is not bool and isinstance(item, bool)):
                raise ConfigurationError(f"{key} has an invalid entry {item!r}")
    if any(s < 0 for s in out["offset_sigma"]):
        raise ConfigurationError("offset_sigma entries must be nonnegative")
    if any(m < 3 for m in out["m_edge_points"]):
        raise ConfigurationError("m_edge_points entries must be at least 3")
    for s in out["selectors"]:
        _parse_selector(s)
    return out


def load_suite(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return validate_suite(doc)


def _scene_batch(models, seed, n, n_points, n_objects):
    return [random_scene(models, seed=seed + i, n_objects=n_objects, n_points=n_points) for i in range(n)]


def run_bench(suite: dict, out_dir, log=print) -> dict:
    """Run the sweeps and write their tables and plots into ``out_dir``.

    * noise_sweep.csv / noise_vs_add.svg: ADD(S) statistics per offset sigma and M
    * timing.csv: per-stage ms/frame with background filtering on and off
    * keypoint_error.csv: toy-predictor keypoint error per selector
    """
    suite = validate_suite(suite)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = suite["seed"]
    summary = {}

    noise_rows = []
    for m in suite["m_edge_points"]:
        models = default_models(m=m)
        scenes = _scene_batch(models, seed, suite["n_scenes"], suite["n_points"], suite["n_objects"])
        for sigma in suite["offset_sigma"]:
            cfg = PipelineConfig(m_edge_points=m, offset_sigma=float(sigma), seed=seed,
                                 n_points=suite["n_points"])
            results = [run_estimate(sc, oracle_predictions(sc, cfg.noise), models, cfg) for sc in scenes]
            scores = score_instances(results, scenes, cfg.max_threshold)
            rep = run_eval(results, scenes, models, cfg)
            d = np.array([s.add_of for s in scores])
            allr = rep.all_row()
            noise_rows.append({"m_edge_points": m, "offset_sigma": float(sigma),
                               "median_add_of": float(np.median(d)), "mean_add_of": float(np.mean(d)),
                               "adds_auc": allr.adds_auc, "add_s_auc": allr.add_s_auc,
                               "add01d_rate": allr.add01d_rate, "n_instances": len(d)})
            log(f"noise m={m} sigma={sigma}: median ADD(S) {np.median(d):.3g} m")
    write_rows_csv(noise_rows, ["m_edge_points", "offset_sigma", "median_add_of", "mean_add_of", "adds_auc",
                                "add_s_auc", "add01d_rate", "n_instances"], out / "noise_sweep.csv")
    write_svg_plot(out / "noise_vs_add.svg",
                   {f"M={m}": [(r["offset_sigma"], r["median_add_of"]) for r in noise_rows
                               if r["m_edge_points"] == m] for m in suite["m_edge_points"]},
                   "offset sigma (m)", "median ADD(S) (m)", "Pose error vs offset noise")
    summary["noise_sweep"] = noise_rows

    models = default_models(m=suite["m_edge_points"][0])
    scenes = _scene_batch(models, seed, suite["n_scenes"], suite["n_points"], suite["n_objects"])
    timing_rows = []
    for flt in suite["filter_background"]:
        cfg = PipelineConfig(filter_background=flt, seed=seed, repeat=suite["repeat"])
        per = [time_estimate(sc, (lambda sc=sc: oracle_predictions(sc, cfg.noise)), models, cfg).timing
               for sc in scenes]
        med = TimingBreakdown.median(per)
        timing_rows.append({"filter_background": str(flt).lower(), "network_forward_ms": med.prediction_ms,
                            "pose_estimation_ms": med.pose_estimation_ms, "total_ms": med.total_ms})
        log(f"timing filter={flt}: pose estimation {med.pose_estimation_ms:.1f} ms/frame")
    write_rows_csv(timing_rows, ["filter_background", "network_forward_ms", "pose_estimation_ms", "total_ms"],
                   out / "timing.csv")
    summary["timing"] = timing_rows

    from . import toy  # imported here: training is the slow, optional part of a bench run

    kp_rows = []
    train_set = toy.standard_training_set(seed, suite["train_scenes"], suite["train_points"],
                                          m=suite["m_edge_points"][0])
    eval_set = toy.standard_training_set(seed + 1000, suite["eval_scenes"], suite["train_points"],
                                         m=suite["m_edge_points"][0])
    for spec in suite["selectors"]:
        name, k = _parse_selector(spec)
        tcfg = toy.TrainConfig(epochs=suite["train_epochs"], seed=seed, dks_k=k, selector=name)
        model, hist = toy.train(train_set, tcfg)
        errs = toy_keypoint_errors(model, eval_set)
        kp_rows.append({"selector": name, "k": k, "kp_err_cm": 100 * float(np.mean(errs)),
                        "final_loss": hist[-1]})
        log(f"keypoints {spec}: {100 * np.mean(errs):.2f} cm")
    write_rows_csv(kp_rows, ["selector", "k", "kp_err_cm", "final_loss"], out / "keypoint_error.csv")
    summary["keypoint_error"] = kp_rows
    return summary


def toy_keypoint_errors(model, scenes, bandwidth: float = 0.03) -> list[float]:
    """Keypoint error of edge points voted by a trained toy predictor.

    Each ground-truth instance's own points vote, which isolates offset
    quality from segmentation quality.
    """
    from .toy import featurize, forward

    errs = []
    for sc in scenes:
        pred = forward(model, featurize(sc))
        for inst in sc.instances:
            rows = np.flatnonzero(sc.instance_label == inst.instance_id)
            if len(rows) == 0:
                continue
            h = vote_edge_points(InstanceHypothesis(inst.class_id, rows, np.zeros(3)), sc.points, pred, bandwidth)
            errs.append(keypoint_error(h.voted_edge_points, sc.gt_scene_edge_points(inst.instance_id)))
    return errs
