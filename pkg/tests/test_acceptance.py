"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The simulation-backed criteria (2, 3, 7) take a few minutes in total.
"""

import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from receptive_jitai.cli import main
from receptive_jitai.delivery import (
    ADAPTIVE, CONTROL, STATIC, DeliveryPolicy, record_violations, run_delivery, select_model,
)
from receptive_jitai.evaluation import bh_adjust, compare_rates, daily_series, restrict_days, trend_slope
from receptive_jitai.features import N_FEATURES
from receptive_jitai.labeling import OutcomeRecord, label_outcome
from receptive_jitai.models import (
    AdaptiveModel, LinearModel, TrainingSet, adaptive_predict, baseline_trainer, iht_undersample,
    log_loss, log_loss_grad, logo_cv, predict_proba, svm_trainer,
)
from receptive_jitai.sim import (
    iter_records, linear_truth_dataset, preset, replicate_seed, run_experiment, simulate_prior_study,
    train_deployment_models,
)

from conftest import random_snapshot

REPLICATES = 10
POLICY = DeliveryPolicy()


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return report


def simulate_pooled(cfg):
    models = train_deployment_models(simulate_prior_study(cfg))
    records = []
    for r in range(REPLICATES):
        seed = replicate_seed(cfg.seed, r)
        for d, o in iter_records(run_experiment(cfg, models, seed=seed)):
            records.append((d.__class__(**{**d.__dict__, "participant_id": f"{r}/{d.participant_id}"}), o))
    return records


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_1_baseline_beating_cv(verdict):
    t0 = time.perf_counter()
    ratios = []
    for seed in range(5):
        data = TrainingSet.from_rows(linear_truth_dataset(100, 40, prevalence=0.3, label_noise=0.15, seed=seed))
        svm = logo_cv(data, 5, svm_trainer(), seed)
        base = logo_cv(data, 5, baseline_trainer(), seed)
        ratios.append(svm.f1 / base.f1)
    elapsed = time.perf_counter() - t0
    ok = min(ratios) >= 1.2 and elapsed < 60
    verdict(1, ok, f"SVM/random mean-F1 ratio per seed {[round(r, 2) for r in ratios]} (need >= 1.20), "
                   f"{elapsed:.1f}s (need < 60s)")


# -- 2 ---------------------------------------------------------------------------------

def test_criterion_2_delivery_condition_effect(verdict):
    t0 = time.perf_counter()
    records = simulate_pooled(preset("default"))
    elapsed = time.perf_counter() - t0
    parts, ok = [], elapsed < 300
    for metric in ("jit", "response", "conversation"):
        (row,) = compare_rates(records, metric, CONTROL, (STATIC,), resamples=10_000, seed=0)
        ok &= row.ci_low > 0
        parts.append(f"{metric} {row.formatted} CI [{row.ci_low:.3f}, {row.ci_high:.3f}]")
    verdict(2, ok, "static - control: " + "; ".join(parts) + f"; simulation {elapsed:.0f}s (need < 300s)")


# -- 3 ---------------------------------------------------------------------------------

def _slopes(records):
    series = daily_series(records, "jit")
    out = {}
    for model in (CONTROL, STATIC, ADAPTIVE):
        first = POLICY.warm_up_days + 1 if model == ADAPTIVE else 1
        out[model] = trend_slope(restrict_days(series[model], first, 21), permutations=2000, seed=0)
    return out


def test_criterion_3_adaptive_learning_curve(verdict):
    het = _slopes(simulate_pooled(preset("heterogeneous")))
    null = _slopes(simulate_pooled(preset("null")))
    adaptive_ok = het[ADAPTIVE].slope > 0 and het[ADAPTIVE].p_value < 0.05
    control_ok = het[CONTROL].slope < 0
    null_ok = all(t.p_value >= 0.05 for t in null.values())
    fmt = lambda t: f"{t.slope:+.4f}/day (p={t.p_value:.3f})"
    verdict(3, adaptive_ok and control_ok and null_ok,
            f"heterogeneous: adaptive days 8-21 {fmt(het[ADAPTIVE])} [need > 0, p < 0.05: "
            f"{'ok' if adaptive_ok else 'not met'}], control {fmt(het[CONTROL])} "
            f"[need < 0: {'ok' if control_ok else 'not met'}]; null: "
            + ", ".join(f"{m} {fmt(t)}" for m, t in null.items())
            + f" [need all p >= 0.05: {'ok' if null_ok else 'not met'}]")


# -- 4 ---------------------------------------------------------------------------------

def test_criterion_4_state_machine_invariants(verdict):
    rng = np.random.default_rng(2024)
    allowed = set(POLICY.allowed_offsets)
    violations = Counter()
    triggers = deliveries = 0
    for _ in range(10_000):
        day = int(rng.integers(1, 22))
        trigger = (day - 1) * 86400 + 60 * int(rng.integers(480, 1261))
        model = select_model(day, rng, POLICY)
        p_receptive = rng.random()
        snaps = {}

        def context(t):
            if t not in snaps:
                snaps[t] = random_snapshot(rng)
            return snaps[t]
        clf = None if model == CONTROL else (lambda c: bool(rng.random() < p_receptive))
        triggers += 1
        rec = run_delivery("p", day, trigger, model, context, clf, POLICY)
        deliveries += 1
        if rec.offset not in allowed:
            violations["offset"] += 1
        fallback = rec.offset == POLICY.fallback_offset
        if fallback != (rec.model_attributed == CONTROL and rec.model_selected != CONTROL):
            violations["fallback/attribution"] += 1
        if rec.model_selected == CONTROL and rec.offset != 0:
            violations["control immediate"] += 1
        if day <= POLICY.warm_up_days and rec.model_selected == ADAPTIVE:
            violations["warm-up"] += 1
        for v in record_violations(rec, POLICY):
            violations[v] += 1
    if deliveries != triggers:
        violations["one delivery per trigger"] += 1
    verdict(4, not violations, f"{deliveries} deliveries checked, violations: {dict(violations) or 'none'}")


# -- 5 ---------------------------------------------------------------------------------

def brute_force_labels(d, o):
    if o.first_response_time is None:
        return [(d.context_at_delivery, 0)]
    if o.first_response_time - d.delivery_time <= 600:
        return [(d.context_at_delivery, 1)]
    return [(d.context_at_delivery, 0), (o.context_at_response, 1)]


def test_criterion_5_labeling_oracle(verdict):
    from receptive_jitai.delivery import DeliveryRecord
    rng = np.random.default_rng(5)
    mismatches, cases = 0, Counter()
    for _ in range(1000):
        t = int(rng.integers(0, 21 * 86400))
        d = DeliveryRecord("p", 1, t, STATIC, STATIC, t, 1, random_snapshot(rng))
        kind = rng.integers(3)
        if kind == 2:
            o = OutcomeRecord(t)
        else:
            delay = int(rng.integers(0, 601)) if kind == 0 else int(rng.integers(601, 50_000))
            o = OutcomeRecord(t, t + delay, (t + delay,), random_snapshot(rng))
        got = [(i.snapshot, i.label) for i in label_outcome(d, o)]
        want = brute_force_labels(d, o)
        cases[len(want)] += 1
        mismatches += got != want
    verdict(5, mismatches == 0, f"1000 pairs ({dict(cases)} by label count), mismatches {mismatches}")


# -- 6 ---------------------------------------------------------------------------------

def literal_bh(p):
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    rank = {i: r + 1 for r, i in enumerate(order)}
    return [min(1.0, min(p[j] * m / rank[j] for j in range(m) if rank[j] >= rank[i])) for i in range(m)]


def test_criterion_6_numerical_checks(verdict):
    rng = np.random.default_rng(6)
    worst_grad = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 60))
        X = rng.random((n, N_FEATURES))
        y = rng.integers(0, 2, n).astype(float)
        w, b, l2 = rng.normal(0, 1, N_FEATURES), float(rng.normal()), float(rng.choice([0.0, 1e-3, 0.1]))
        gw, gb = log_loss_grad(w, b, X, y, l2)
        h = 1e-5
        fd = np.array([(log_loss(w + h * e, b, X, y, l2) - log_loss(w - h * e, b, X, y, l2)) / (2 * h)
                       for e in np.eye(N_FEATURES)])
        fd_b = (log_loss(w, b + h, X, y, l2) - log_loss(w, b - h, X, y, l2)) / (2 * h)
        num, ana = np.append(fd, fd_b), np.append(gw, gb)
        worst_grad = max(worst_grad, np.linalg.norm(num - ana) / max(np.linalg.norm(ana), 1e-12))

    unbalanced = 0
    for i in range(100):
        n = int(rng.integers(40, 300))
        X = rng.random((n, N_FEATURES))
        y = (rng.random(n) < rng.uniform(0.1, 0.4)).astype(int)
        if y.sum() < 5:
            y[:5] = 1
        out = iht_undersample(TrainingSet(X, y), folds=5, seed=i)
        unbalanced += out.class_counts()[0] != out.class_counts()[1]

    bh_bad = 0
    for _ in range(1000):
        p = rng.random(int(rng.integers(1, 11))).tolist()
        bh_bad += not np.allclose(bh_adjust(p), literal_bh(p), rtol=0, atol=1e-12)

    p1 = LinearModel(rng.normal(0, 1, N_FEATURES), float(rng.normal()), "lr")
    adaptive_bad = 0
    for _ in range(1000):
        x = rng.random(N_FEATURES)
        _, prob = adaptive_predict(AdaptiveModel(p1), x)
        adaptive_bad += prob != predict_proba(p1, x)

    ok = worst_grad <= 1e-4 and unbalanced == 0 and bh_bad == 0 and adaptive_bad == 0
    verdict(6, ok, f"max gradient rel. error {worst_grad:.2e} (<= 1e-4), unbalanced IHT outputs {unbalanced}/100, "
                   f"BH mismatches {bh_bad}/1000, adaptive != P1 {adaptive_bad}/1000")


# -- 7 ---------------------------------------------------------------------------------

def test_criterion_7_determinism(verdict, tmp_path):
    data = tmp_path / "prior.csv"
    assert main(["make-dataset", "--kind", "prior", "--participants", "60", "--out", str(data)]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_participants": 30, "replicates": 3, "seed": 11}))
    runs = {}
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "3")):
        assert main(["simulate", "--config", str(cfg), "--train-static-from", str(data),
                     "--out", str(tmp_path / name), "--jobs", jobs]) == 0
        runs[name] = {p.name: p.read_bytes() for p in sorted((tmp_path / name).glob("*.jsonl"))}
    same_runs = runs["a"] == runs["b"]
    same_jobs = runs["a"] == runs["c"]
    n_lines = sum(v.count(b"\n") for v in runs["a"].values())
    verdict(7, same_runs and same_jobs and len(runs["a"]) == 3,
            f"{len(runs['a'])} logs, {n_lines} events; identical across runs: {same_runs}; "
            f"--jobs 1 vs --jobs 3: {same_jobs}")
