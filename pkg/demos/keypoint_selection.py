"""Where do the dynamic keypoints land?

Every feature channel votes for the point where it peaks; the points with the
most votes become keypoints. We compare that against farthest point sampling
on one scene, first on the hand-crafted features and then on the hidden layer
of a briefly trained toy network, and time the selector at full scale.

    python demos/keypoint_selection.py
"""

import time

import numpy as np

from dkspose.keypoints import FeatureMap, select_dynamic_keypoints, select_dynamic_keypoints_per_instance, select_fps
from dkspose.synth import default_models, random_scene
from dkspose.toy import TrainConfig, featurize, hidden_features, standard_training_set, train


def describe(name, scene, idx):
    inst = scene.instance_label[idx]
    spread = np.linalg.norm(scene.points[idx] - scene.points[idx].mean(0), axis=1).mean()
    counts = {int(i): int(np.sum(inst == i)) for i in np.unique(inst)}
    print(f"{name:>22}: per-instance counts {counts}, mean spread {100 * spread:.1f} cm")


def main():
    sc = random_scene(default_models(m=8), seed=3)
    fg = np.flatnonzero(sc.foreground)
    k = 25

    describe("farthest point", sc, fg[select_fps(sc.points[fg], k)])
    fm = featurize(sc)
    describe("DKS, raw features", sc,
             select_dynamic_keypoints_per_instance(fm.subset(fg), sc.instance_label[fg], k).indices)

    model, hist = train(standard_training_set(0), TrainConfig(epochs=40))
    print(f"toy network: loss {hist[0]:.3f} -> {hist[-1]:.3f} over {len(hist)} epochs")
    hidden = hidden_features(model, fm)
    kp = select_dynamic_keypoints_per_instance(hidden.subset(fg), sc.instance_label[fg], k)
    describe("DKS, hidden layer", sc, kp.indices)
    print(f"win counts of the chosen points: {kp.win_counts.tolist()}")

    big = FeatureMap(np.random.default_rng(0).normal(size=(12000, 128)))
    times = []
    for _ in range(11):
        t0 = time.perf_counter()
        select_dynamic_keypoints(big, k)
        times.append(time.perf_counter() - t0)
    print(f"selection over 12000 points x 128 channels: {1e3 * np.median(times):.1f} ms")


if __name__ == "__main__":
    main()
