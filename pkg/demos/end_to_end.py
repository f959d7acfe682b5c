"""From a rendered scene to scored poses.

We render a few four-object scenes, corrupt the oracle predictions with
offset noise, and run the estimator: drop background points, cluster the
center votes into instances, let each instance's points vote for the model
edge points, and fit a rigid transform to those votes. Then we score the
poses and print the per-class table, first at zero noise and then at 5 mm.

    python demos/end_to_end.py
"""

from dkspose.pipeline import PipelineConfig, run_estimate, run_eval
from dkspose.synth import default_models, oracle_predictions, random_scene


def report(sigma, scenes, models):
    cfg = PipelineConfig(offset_sigma=sigma)
    results = [run_estimate(sc, oracle_predictions(sc, cfg.noise), models, cfg) for sc in scenes]
    rep = run_eval(results, scenes, models, cfg)
    print(f"\noffset noise {1000 * sigma:.0f} mm")
    print(f"{'class':>6} {'ADD-S AUC':>10} {'ADD(S) AUC':>11} {'<0.1d %':>8} {'kp err cm':>10}")
    for r in rep.rows + [rep.all_row()]:
        print(f"{r.class_id!s:>6} {r.adds_auc:10.2f} {r.add_s_auc:11.2f} {r.add01d_rate:8.1f} "
              f"{100 * r.kp_err_m:10.3f}")
    print(f"pose estimation {rep.timing['pose_estimation_ms']:.1f} ms/frame")


def main():
    models = default_models(m=8)
    for mdl in models:
        print(f"class {mdl.class_id}: {mdl.name}, diameter {100 * mdl.diameter:.1f} cm, "
              f"{len(mdl.vertices)} vertices, symmetric={mdl.symmetric}")
    scenes = [random_scene(models, seed=s, scene_id=s) for s in range(8)]
    print(f"{len(scenes)} scenes, {len(scenes[0])} points each, "
          f"{sum(sc.foreground.sum() for sc in scenes) / sum(len(sc) for sc in scenes):.1%} on objects")

    # With exact offsets every vote lands on its target and the fit is exact.
    report(0.0, scenes, models)
    # Averaging hundreds of noisy votes keeps the error far below the 0.1d threshold.
    report(0.005, scenes, models)


if __name__ == "__main__":
    main()
