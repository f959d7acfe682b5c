"""Command-line entry point.

Exit codes: 0 success, 1 other package error, 2 configuration, 3 validation,
4 geometry, 5 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .errors import DksPoseError, ValidationError
from .pipeline import (PipelineConfig, TimingBreakdown, load_suite, read_poses_csv, resolve_config, run_bench,
                       run_eval, time_estimate, write_eval_csv, write_poses_csv, write_timing_csv)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--n-points", type=int)
    p.add_argument("--k-keypoints", type=int)
    p.add_argument("--m-edge-points", type=int)
    p.add_argument("--no-filter-background", action="store_true",
                   help="keep background points (at zero weight) in every voting step")
    p.add_argument("--selector", choices=("dks", "fps"))
    p.add_argument("--offset-sigma", type=float)
    p.add_argument("--repeat", type=int, help="timing repetitions, median reported")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dkspose",
                                 description="6DoF pose estimation by edge-point voting on synthetic scenes.",
                                 epilog="exit codes: 0 ok, 1 other error, 2 configuration, 3 validation, 4 geometry, "
                                        "5 training diverged")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate object models and synthetic scenes")
    _common(p)
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--n-objects", type=int)

    p = sub.add_parser("keypoints", help="select keypoints on the foreground of each scene")
    _common(p)
    p.add_argument("--scenes", type=Path, required=True, help="directory written by gen")
    p.add_argument("--checkpoint", type=Path, help="use a toy model's hidden features for DKS")

    p = sub.add_parser("estimate", help="estimate poses from oracle predictions")
    _common(p)
    p.add_argument("--scenes", type=Path, required=True)

    p = sub.add_parser("eval", help="score a pose file against scene ground truth")
    _common(p)
    p.add_argument("--scenes", type=Path, required=True)
    p.add_argument("--poses", type=Path, required=True)
    p.add_argument("--timing", type=Path, help="timing.csv from estimate, copied into the report")

    p = sub.add_parser("train-toy", help="train the toy predictor")
    _common(p)
    p.add_argument("--scenes", type=Path, help="training scenes (default: built-in standard set)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.003)
    p.add_argument("--batch-points", type=int, default=256)

    p = sub.add_parser("bench", help="run a benchmark suite")
    _common(p)
    p.add_argument("--suite", type=Path, help="JSON suite (default: built-in)")

    p = sub.add_parser("selfcheck", help="run the oracle-equivalence checks")
    _common(p)
    return ap


def _config(args) -> PipelineConfig:
    over = {
        "seed": args.seed, "n_points": args.n_points, "k_keypoints": args.k_keypoints,
        "m_edge_points": args.m_edge_points, "selector": args.selector,
        "offset_sigma": args.offset_sigma, "repeat": args.repeat,
        "n_scenes": getattr(args, "n_scenes", None), "n_objects": getattr(args, "n_objects", None),
    }
    if args.no_filter_background:
        over["filter_background"] = False
    return resolve_config(args.config, over)


def _load_scenes(directory: Path):
    from .synth import load_scene

    files = sorted(Path(directory).glob("scene_*.json"))
    if not files:
        raise ValidationError(f"no scene_*.json files in {directory}")
    return [load_scene(f) for f in files]


def _models_of(scenes):
    models = {}
    for sc in scenes:
        for inst in sc.instances:
            models[inst.class_id] = inst.model
    return models


def cmd_gen(args, cfg: PipelineConfig) -> int:
    from .synth import default_models, random_scene, save_models, save_scene

    out = args.out
    (out / "models").mkdir(parents=True, exist_ok=True)
    models = default_models(m=cfg.m_edge_points, seed=cfg.seed)
    paths = save_models(models, out / "models")
    refs = [str(Path("..") / "models" / Path(p).name) for p in paths]
    (out / "scenes").mkdir(exist_ok=True)
    for i in range(cfg.n_scenes):
        sc = random_scene(models, seed=cfg.seed + i, n_objects=cfg.n_objects, noise=cfg.noise,
                          n_points=cfg.n_points, scene_id=i, model_refs=refs)
        save_scene(sc, out / "scenes" / f"scene_{i:04d}.json")
    print(f"wrote {len(models)} models and {cfg.n_scenes} scenes to {out}")
    return 0


def cmd_keypoints(args, cfg: PipelineConfig) -> int:
    from .keypoints import FeatureMap, select_dynamic_keypoints_per_instance, select_fps
    from .toy import featurize, hidden_features, load_checkpoint

    scenes = _load_scenes(args.scenes)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "keypoints.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["scene_id", "rank", "point_index", "instance_id", "x", "y", "z"])
        for sc in scenes:
            fg = np.flatnonzero(sc.foreground)
            if len(fg) == 0 or cfg.k_keypoints == 0:
                continue
            if cfg.selector == "dks":
                fm = featurize(sc)
                if model is not None:
                    fm = hidden_features(model, fm)
                idx = select_dynamic_keypoints_per_instance(
                    FeatureMap(fm.values[fg], fg), sc.instance_label[fg], cfg.k_keypoints).indices
            else:
                idx = fg[select_fps(sc.points[fg], cfg.k_keypoints)]
            for r, i in enumerate(idx):
                x, y, z = sc.points[i]
                wr.writerow([sc.scene_id, r, int(i), int(sc.instance_label[i]),
                             format(x, ".17g"), format(y, ".17g"), format(z, ".17g")])
    print(f"wrote {args.out / 'keypoints.csv'}")
    return 0


def cmd_estimate(args, cfg: PipelineConfig) -> int:
    from .synth import oracle_predictions

    scenes = _load_scenes(args.scenes)
    models = _models_of(scenes)
    args.out.mkdir(parents=True, exist_ok=True)
    results = []
    for sc in scenes:
        res = time_estimate(sc, lambda sc=sc: oracle_predictions(sc, cfg.noise), models, cfg)
        results.append(res)
        print(f"scene {sc.scene_id}: {len(res.poses)} poses, {res.timing.pose_estimation_ms:.1f} ms "
              f"pose estimation ({res.status})")
    write_poses_csv(results, args.out / "poses.csv")
    write_timing_csv(TimingBreakdown.median(r.timing for r in results), args.out / "timing.csv")
    print(f"wrote {args.out / 'poses.csv'} and {args.out / 'timing.csv'}")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    scenes = _load_scenes(args.scenes)
    results = read_poses_csv(args.poses)
    report = run_eval(results, scenes, _models_of(scenes), cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_eval_csv(report, args.out / "eval.csv")
    if args.timing:
        (args.out / "eval_timing.csv").write_text(Path(args.timing).read_text())
    allr = report.all_row()
    print(f"ADD-S AUC {allr.adds_auc:.2f}  ADD(S) AUC {allr.add_s_auc:.2f}  "
          f"ADD(S)-0.1d {allr.add01d_rate:.1f}%  over {allr.n_instances} instances")
    print(f"wrote {args.out / 'eval.csv'}")
    return 0


def cmd_train_toy(args, cfg: PipelineConfig) -> int:
    from .toy import TrainConfig, save_checkpoint, save_loss_history, standard_training_set, train

    scenes = _load_scenes(args.scenes) if args.scenes else standard_training_set(cfg.seed, m=cfg.m_edge_points)
    tcfg = TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs, batch_points=args.batch_points,
                       seed=cfg.seed, lambdas=cfg.lambdas, role_weights=cfg.point_role_weights,
                       dks_k=cfg.k_keypoints, selector=cfg.selector)

    def log(epoch, loss):
        if epoch == 1 or epoch % 20 == 0 or epoch == tcfg.epochs:
            print(f"epoch {epoch:4d}  loss {loss:.6f}")

    model, hist = train(scenes, tcfg, log=log)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, args.out / "model.bin")
    save_loss_history(hist, args.out / "loss_history.csv")
    print(f"wrote {args.out / 'model.bin'} and {args.out / 'loss_history.csv'}")
    return 0


def cmd_bench(args, cfg: PipelineConfig) -> int:
    suite = load_suite(args.suite) if args.suite else {}
    if args.seed is not None:
        suite["seed"] = args.seed
    if args.repeat is not None:
        suite["repeat"] = args.repeat
    run_bench(suite, args.out)
    print(f"wrote benchmark tables and plots to {args.out}")
    return 0


def cmd_selfcheck(args, cfg: PipelineConfig) -> int:
    from .selfcheck import run_all

    results = run_all(cfg.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {
    "gen": cmd_gen, "keypoints": cmd_keypoints, "estimate": cmd_estimate, "eval": cmd_eval,
    "train-toy": cmd_train_toy, "bench": cmd_bench, "selfcheck": cmd_selfcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except DksPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code if isinstance(exc, KeyError) else 1


if __name__ == "__main__":
    sys.exit(main())
