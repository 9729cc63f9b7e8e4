"""How much does the personal model P2 improve delivery timing as data accrues?

For each simulated participant, P2 is refit on the labels the study produced
up to a cut-off day and the dual model is replayed on fresh triggers. The
score is the mean true receptivity at the moments the model chose to deliver.
Reference rows refit P2 on labels drawn directly from the ground truth at
random moments, and on the study contexts relabelled from the ground truth.

    python scripts/personalization_diagnostics.py --preset heterogeneous --participants 40
"""

import argparse
import math
from collections import defaultdict

import numpy as np

from receptive_jitai.delivery import CONTROL, STATIC, run_delivery
from receptive_jitai.features import SECONDS_PER_DAY, ContextSnapshot, encode
from receptive_jitai.models import AdaptiveModel
from receptive_jitai.sim import (
    PRESETS, ContextStream, generate_population, preset, run_experiment, simulate_prior_study,
    train_deployment_models,
)


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def main(name: str, participants: int, triggers: int) -> None:
    cfg = preset(name, n_participants=participants)
    models = train_deployment_models(simulate_prior_study(cfg))
    events = run_experiment(cfg, models)
    labels, deliveries = defaultdict(list), defaultdict(set)
    for ev in events:
        if ev["type"] == "label":
            labels[ev["participant"]].append((encode(ContextSnapshot.from_dict(ev["context"])), ev["label"], ev["ts"]))
        elif ev["type"] == "delivery":
            deliveries[ev["participant"]].add(ev["delivery_ts"])

    rng = np.random.default_rng(0)
    scores, sizes, prevalence = defaultdict(list), defaultdict(list), defaultdict(list)
    for profile in generate_population(cfg):
        pid, stream = profile.participant_id, ContextStream(profile, 1)
        own = labels[pid]
        truth = lambda x: int(rng.random() < sigmoid(profile.true_logit(x, 1, habituated=False)))
        training = {}
        for day in (7, 14, 21):
            kept = [(x, y) for x, y, ts in own if ts < day * SECONDS_PER_DAY]
            training[f"study labels to day {day}"] = kept
        kept = [(x, y) for x, y, ts in own]
        training["study labels, delivery moments only"] = [(x, y) for x, y, ts in own if ts in deliveries[pid]]
        training["study contexts, true labels"] = [(x, truth(x)) for x, _ in kept]
        moments = rng.integers(8 * 3600, 21 * SECONDS_PER_DAY, size=len(kept))
        training["random moments, true labels"] = [(x, truth(x)) for x in (encode(stream(int(t))) for t in moments)]

        dual = {}
        for key, rows in training.items():
            m = AdaptiveModel(models.p1, cfg.p2_params)
            m.ingest_xy([x for x, _ in rows], [y for _, y in rows])
            dual[key] = m
            sizes[key].append(len(rows))
            prevalence[key].append(np.mean([y for _, y in rows]) if rows else np.nan)
        for _ in range(triggers):
            day = int(rng.integers(8, 22))
            t = (day - 1) * SECONDS_PER_DAY + 60 * int(rng.integers(480, 1261))
            for key, m in dual.items():
                rec = run_delivery(pid, day, t, STATIC, stream, lambda c, m=m: m.predict(encode(c))[0])
                if rec.model_attributed != CONTROL:
                    scores[key].append(sigmoid(profile.true_logit(encode(rec.context_at_delivery), day, False)))

    print(f"preset {name}, {participants} participants")
    print(f"  {'P2 training data':<40}{'n/person':>10}{'positives':>11}{'receptivity':>13}{'delivered':>11}")
    for key in training:
        print(f"  {key:<40}{np.mean(sizes[key]):10.1f}{np.nanmean(prevalence[key]):11.2f}"
              f"{np.mean(scores[key]):13.3f}{len(scores[key]):11d}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--preset", choices=sorted(PRESETS), default="heterogeneous")
    ap.add_argument("--participants", type=int, default=40)
    ap.add_argument("--triggers", type=int, default=40)
    args = ap.parse_args()
    main(args.preset, args.participants, args.triggers)
