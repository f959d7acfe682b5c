"""Pilot run for the toy predictor's training thresholds.

1. 200 epochs on the standard multi-class set: loss ratio final / epoch 1.
2. 200 epochs on the balanced box-vs-background set: mIoU on held-out scenes.
3. Keypoint error on held-out scenes with DKS upweighting (K = 25) against
   no upweighting (K = 0). Reported only; the gap is stochastic.

Writes pilot/toy_training.log.
"""

from pathlib import Path

import numpy as np

from dkspose.metrics import miou
from dkspose.pipeline import toy_keypoint_errors
from dkspose.toy import TrainConfig, featurize, forward, separable_set, standard_training_set, train

OUT = Path(__file__).resolve().parent.parent / "pilot" / "toy_training.log"


def main():
    lines = []
    for seed in range(3):
        _, hist = train(standard_training_set(seed), TrainConfig(epochs=200, seed=seed))
        lines.append(f"standard seed={seed}: epoch1={hist[0]:.4f} epoch200={hist[-1]:.4f} "
                     f"ratio={hist[-1] / hist[0]:.3f}")
        print(lines[-1])

    for seed in range(3):
        model, _ = train(separable_set(seed), TrainConfig(epochs=200, seed=seed))
        held = separable_set(seed + 500)
        pred = np.concatenate([forward(model, featurize(s)).labels() for s in held])
        gt = np.concatenate([s.prediction_labels() for s in held])
        lines.append(f"separable seed={seed}: held-out mIoU={miou(pred, gt):.2f}%")
        print(lines[-1])

    train_set = standard_training_set(0)
    held = standard_training_set(1000)
    for k in (0, 25):
        model, _ = train(train_set, TrainConfig(epochs=200, dks_k=k))
        err = np.mean(toy_keypoint_errors(model, held))
        lines.append(f"keypoint error dks_k={k}: {100 * err:.3f} cm")
        print(lines[-1])
    OUT.parent.mkdir(exist_ok=True)
    OUT.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
