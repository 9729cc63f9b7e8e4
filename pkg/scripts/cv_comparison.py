"""Cross-validated F1 of the random baseline, static SVM, P1 and the adaptive replay.

Runs on the linear-truth dataset (several seeds) and on a simulated prior study.

    python scripts/cv_comparison.py --seeds 5
"""

import argparse

import numpy as np

from receptive_jitai.models import (
    TrainingSet, adaptive_replay_cv, baseline_trainer, logo_cv, lr_trainer, svm_trainer,
)
from receptive_jitai.sim import ExperimentConfig, linear_truth_dataset, simulate_prior_study


def compare(data: TrainingSet, seed: int) -> dict[str, float]:
    return {
        "random": logo_cv(data, 5, baseline_trainer(), seed).f1,
        "static-SVM": logo_cv(data, 5, svm_trainer(), seed).f1,
        "P1-LR": logo_cv(data, 5, lr_trainer(), seed).f1,
        "adaptive": adaptive_replay_cv(data, 5, seed).f1,
    }


def show(title: str, results: list[dict[str, float]]) -> None:
    print(f"\n{title}")
    names = list(results[0])
    print("  " + "".join(f"{n:>12}" for n in names) + f"{'SVM/random':>12}")
    for res in results:
        print("  " + "".join(f"{res[n]:12.3f}" for n in names) + f"{res['static-SVM'] / res['random']:12.2f}")
    mean = {n: np.mean([r[n] for r in results]) for n in names}
    print("  " + "".join(f"{mean[n]:12.3f}" for n in names) + "   (mean)")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    show("linear truth, 100 x 40, prevalence 0.3, 15% label flips",
         [compare(TrainingSet.from_rows(linear_truth_dataset(seed=s)), s) for s in range(args.seeds)])
    prior = TrainingSet.from_rows(simulate_prior_study(ExperimentConfig()))
    show(f"simulated prior study ({len(prior)} rows, prevalence {prior.y.mean():.2f})", [compare(prior, 0)])
