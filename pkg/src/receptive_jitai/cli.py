"""Command-line entry point.

    receptive-jitai make-dataset --kind prior|linear --out data.csv
    receptive-jitai train-static data.csv --out static.model [--p1-out p1.model]
    receptive-jitai cv data.csv --groups 5 --seed 0 [--out dir]
    receptive-jitai simulate --config cfg.json --train-static-from data.csv --out runs/
    receptive-jitai evaluate runs/ --out report/

Report files written by ``evaluate``:

  table2.csv      static/adaptive minus control, resampling messages
  table3.csv      the same comparisons, resampling participants (paired)
  fig4_<m>.csv    daily rate per model for metric m (columns model, day, rate, n)
  trends.csv      weighted day slope per metric and model with permutation p
  summary.csv     per-model totals (period, model, n, rates, avg delay)

Comparison table columns: metric, comparison, mode, baseline_value,
compared_value, mean_difference, percent_change, formatted, std_error,
ci_low, ci_high (95% percentile bootstrap), p_value, p_adjusted (Benjamini-
Hochberg over the table), n_baseline, n_compared. Undefined cells are "NA".

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant breach.
Set RECEPTIVE_JITAI_LOG=debug|info|warning for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .delivery import ADAPTIVE, CONTROL, MODEL_IDS, STATIC, record_violations
from .evaluation import (
    METRICS, MESSAGE_MODE, PARTICIPANT_MODE, TREND_COLUMNS, adjust_rows, compare_rates,
    daily_series, restrict_days, trend_slope, write_daily, write_table,
)
from .features import DatasetError, read_dataset, write_dataset
from .metrics import SUMMARY_COLUMNS, summarize, summary_row
from .models import (
    DegenerateTrainingSetError, TrainingSet, adaptive_replay_cv, baseline_trainer, load_model,
    logo_cv, lr_trainer, save_model, svm_trainer,
)
from .sim import (
    ConfigError, ExperimentConfig, PretrainedModels, dump_events, iter_records, linear_truth_dataset,
    replicate_seed, run_experiment, simulate_prior_study, train_deployment_models,
)

log = logging.getLogger("receptive_jitai")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


class DataError(Exception):
    """Bad input files or input values; exit code 3."""


class InvariantError(Exception):
    """The engine produced something it promises never to produce; exit code 4."""


# ---------------------------------------------------------------------------
# manifests


@dataclasses.dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    version: str = __version__
    timings: dict = dataclasses.field(default_factory=dict)
    outputs: list = dataclasses.field(default_factory=list)

    def write(self, path: Path) -> None:
        """Atomic: written to a temp file in the same directory, then renamed."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


class _Timer:
    def __init__(self, timings: dict, stage: str):
        self.timings, self.stage = timings, stage

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.stage] = round(time.perf_counter() - self.t0, 4)


# ---------------------------------------------------------------------------
# config


def load_config(path: str | None, seed: int | None = None) -> tuple[ExperimentConfig, str]:
    """Config plus the sha256 of the bytes it came from (of ``{}`` when no file)."""
    raw = b"{}" if path is None else Path(path).read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: line {e.lineno}: invalid JSON ({e.msg})") from None
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a JSON object")
    cfg = ExperimentConfig.from_dict(data)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg, sha256_bytes(raw)


def _load_rows(path):
    rows = read_dataset(path)
    if not rows:
        raise DataError(f"{path}: dataset has no rows")
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_make_dataset(args) -> int:
    out = Path(args.out)
    timings = {}
    with _Timer(timings, "generate"):
        if args.kind == "linear":
            rows = linear_truth_dataset(args.participants or 100, args.per_participant, seed=args.seed)
            cfg_hash = sha256_bytes(json.dumps(
                {"kind": "linear", "participants": args.participants or 100,
                 "per_participant": args.per_participant}, sort_keys=True).encode())
        else:
            cfg, cfg_hash = load_config(args.config, args.seed)
            if args.participants:
                cfg = dataclasses.replace(cfg, prior_participants=args.participants)
            rows = simulate_prior_study(cfg)
    write_dataset(out, rows)
    RunManifest("make-dataset", cfg_hash, args.seed, timings=timings, outputs=[out.name]).write(
        out.with_name(out.name + ".manifest.json"))
    print(f"wrote {len(rows)} rows to {out} (prevalence {sum(r.label for r in rows) / len(rows):.3f})")
    return EXIT_OK


def cmd_train_static(args) -> int:
    timings = {}
    rows = _load_rows(args.dataset)
    with _Timer(timings, "train"):
        models = train_deployment_models(rows, seed=args.seed)
    out = Path(args.out)
    save_model(models.static, out)
    outputs = [out.name]
    if args.p1_out:
        save_model(models.p1, args.p1_out)
        outputs.append(Path(args.p1_out).name)
    RunManifest("train-static", file_hash(args.dataset), args.seed, timings=timings,
                outputs=outputs).write(out.with_name(out.name + ".manifest.json"))
    print(f"static model written to {out}")
    return EXIT_OK


CV_COLUMNS = ("model", "fold", "precision", "recall", "f1", "n_test", "test_prevalence")


def cmd_cv(args) -> int:
    rows = _load_rows(args.dataset)
    data = TrainingSet.from_rows(rows)
    n_groups = len(set(data.groups.tolist()))
    if n_groups < args.groups:
        raise DataError(f"{args.dataset}: {n_groups} participants, need at least {args.groups} groups")
    timings, reports = {}, {}
    # display order: baseline first, then the deployed models
    runs = [
        ("random", lambda: logo_cv(data, args.groups, baseline_trainer(), args.seed)),
        ("static-SVM", lambda: logo_cv(data, args.groups, svm_trainer(), args.seed)),
        ("P1-LR", lambda: logo_cv(data, args.groups, lr_trainer(), args.seed)),
        ("adaptive", lambda: adaptive_replay_cv(data, args.groups, args.seed)),
    ]
    for name, run in runs:
        with _Timer(timings, name):
            reports[name] = run()
    lines = [f"{'model':<12} {'precision':>9} {'recall':>9} {'f1':>9}"]
    for name, rep in reports.items():
        lines.append(f"{name:<12} {rep.precision:9.3f} {rep.recall:9.3f} {rep.f1:9.3f}")
    base = reports["random"].f1
    if base > 0:
        lines.append("relative F1 gain over random: " + ", ".join(
            f"{n} {100 * (r.f1 / base - 1):+.1f}%" for n, r in reports.items() if n != "random"))
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "cv.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CV_COLUMNS)
            for name, rep in reports.items():
                for i, f in enumerate(rep.folds):
                    w.writerow([name, i, f"{f.report.precision:.6f}", f"{f.report.recall:.6f}",
                                f"{f.report.f1:.6f}", f.n_test, f"{f.test_prevalence:.6f}"])
                w.writerow([name, "mean", f"{rep.precision:.6f}", f"{rep.recall:.6f}", f"{rep.f1:.6f}",
                            len(data), f"{data.y.mean():.6f}"])
        RunManifest("cv", file_hash(args.dataset), args.seed, timings=timings,
                    outputs=["cv.csv"]).write(out / "manifest.json")
    return EXIT_OK


def _resolve_models(cfg: ExperimentConfig, train_from: str | None, seed: int) -> PretrainedModels:
    if train_from:
        return train_deployment_models(_load_rows(train_from), seed=seed)
    if cfg.static_model and cfg.p1_model:
        return PretrainedModels(load_model(cfg.static_model), load_model(cfg.p1_model))
    raise ConfigError(
        "no pre-trained static model: set static_model and p1_model in the config "
        "or pass --train-static-from DATASET")


def _simulate_replicate(job):
    cfg, models, r = job
    return dump_events(run_experiment(cfg, models, seed=replicate_seed(cfg.seed, r)))


def cmd_simulate(args) -> int:
    cfg, cfg_hash = load_config(args.config, args.seed)
    timings = {}
    with _Timer(timings, "models"):
        models = _resolve_models(cfg, args.train_static_from, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, min(args.jobs or os.cpu_count() or 1, cfg.replicates))
    work = [(cfg, models, r) for r in range(cfg.replicates)]
    with _Timer(timings, "simulate"):
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                logs = list(pool.map(_simulate_replicate, work))
        else:
            logs = [_simulate_replicate(w) for w in work]
    outputs = []
    for r, text in enumerate(logs):
        name = f"events_rep{r:03d}.jsonl"
        (out / name).write_text(text)
        outputs.append(name)
        log.info("replicate %d: %d events", r, text.count("\n"))
    RunManifest("simulate", cfg_hash, cfg.seed, timings=timings, outputs=outputs).write(out / "manifest.json")
    print(f"wrote {len(outputs)} event log(s) to {out}")
    return EXIT_OK


def read_event_logs(log_dir: str | Path) -> list[tuple[str, list[dict]]]:
    """(file stem, events) for every ``*.jsonl`` file, in name order."""
    log_dir = Path(log_dir)
    if not log_dir.is_dir():
        raise DataError(f"{log_dir}: not a directory")
    logs = []
    for path in sorted(log_dir.glob("*.jsonl")):
        events = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    ev = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}:{lineno}: corrupt event line ({e.msg})") from None
                if not isinstance(ev, dict) or "type" not in ev:
                    raise DataError(f"{path}:{lineno}: event without a type")
                events.append(ev)
        logs.append((path.stem, events))
    if not any(events for _, events in logs):
        raise DataError(f"{log_dir}: no events")
    return logs


def collect_records(logs) -> list[tuple]:
    """Delivery/outcome pairs across logs; participant ids are prefixed by the log stem."""
    records = []
    for stem, events in logs:
        n_delivery = sum(ev["type"] == "delivery" for ev in events)
        try:
            pairs = list(iter_records(events))
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"{stem}: malformed delivery or outcome event ({e})") from None
        if len(pairs) != n_delivery:
            raise InvariantError(f"{stem}: {n_delivery} deliveries but {len(pairs)} outcomes")
        for d, o in pairs:
            bad = record_violations(d)
            if bad:
                raise InvariantError(f"{stem}: delivery at {d.trigger_time} for {d.participant_id}: {bad[0]}")
            records.append((dataclasses.replace(d, participant_id=f"{stem}/{d.participant_id}"), o))
    return records


def cmd_evaluate(args) -> int:
    timings = {}
    with _Timer(timings, "read"):
        logs = read_event_logs(args.logs)
        records = collect_records(logs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    with _Timer(timings, "compare"):
        for name, mode in (("table2.csv", MESSAGE_MODE), ("table3.csv", PARTICIPANT_MODE)):
            rows = []
            for metric in METRICS:
                rows += compare_rates(records, metric, CONTROL, (STATIC, ADAPTIVE), args.resamples, args.seed, mode)
            write_table(adjust_rows(rows), out / name)
            outputs.append(name)
    with _Timer(timings, "trends"):
        trend_rows = []
        for metric in METRICS:
            series = daily_series(records, metric)
            name = f"fig4_{metric}.csv"
            write_daily(series, out / name)
            outputs.append(name)
            for model in MODEL_IDS:
                first = args.warm_up_days + 1 if model == ADAPTIVE else 1
                pts = restrict_days(series.get(model, []), first, 10**6)
                if len(pts) < 3:
                    trend_rows.append([metric, model, first, "NA", "NA", "NA", "NA", len(pts)])
                    continue
                tr = trend_slope(pts, args.permutations, args.seed)
                trend_rows.append([metric, model, first, pts[-1].day, f"{tr.slope:.6g}",
                                   f"{tr.intercept:.6g}", f"{tr.p_value:.6g}", tr.n_days])
        with open(out / "trends.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TREND_COLUMNS)
            w.writerows(trend_rows)
        outputs.append("trends.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow(summary_row("all", "all", summarize(records)))
        for model in MODEL_IDS:
            w.writerow(summary_row("all", model, summarize(records, lambda d, o, m=model: d.model_attributed == m)))
    outputs.append("summary.csv")
    hasher = hashlib.sha256()
    for stem, events in logs:
        hasher.update(stem.encode())
        hasher.update(str(len(events)).encode())
    RunManifest("evaluate", hasher.hexdigest(), args.seed, timings=timings, outputs=outputs).write(
        out / "manifest.json")

    counts = {m: sum(d.model_attributed == m for d, _ in records) for m in MODEL_IDS}
    empty = [m for m, n in counts.items() if n == 0]
    print(f"evaluated {len(records)} messages ({', '.join(f'{m} {n}' for m, n in counts.items())})")
    if empty:
        print(f"error: no messages attributed to {', '.join(empty)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="receptive-jitai", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-dataset", help="write a synthetic labelled context CSV")
    s.add_argument("--kind", choices=("prior", "linear"), default="prior",
                   help="prior: immediate-delivery study from the simulator; linear: shared linear truth")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="JSON experiment config (prior kind)")
    s.add_argument("--participants", type=int)
    s.add_argument("--per-participant", type=int, default=40, help="instances per participant (linear kind)")
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("train-static", help="train the static SVM (and optionally P1) from a dataset CSV")
    s.add_argument("dataset")
    s.add_argument("--out", required=True, help="static model file")
    s.add_argument("--p1-out", help="also write the P1 logistic model here")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_static)

    s = sub.add_parser("cv", help="leave-groups-out cross-validation of all classifiers")
    s.add_argument("dataset")
    s.add_argument("--groups", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for cv.csv and a manifest")
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("simulate", help="run the field-study simulation")
    s.add_argument("--config", help="JSON experiment config; keys are ExperimentConfig fields")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--jobs", type=int, help="replicates run in parallel (default: available CPUs)")
    s.add_argument("--train-static-from", help="dataset CSV to train the static and P1 models on")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("evaluate", help="compare delivery models from simulation logs")
    s.add_argument("logs", help="directory of *.jsonl event logs")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resamples", type=int, default=10_000)
    s.add_argument("--permutations", type=int, default=2000)
    s.add_argument("--warm-up-days", type=int, default=7)
    s.set_defaults(func=cmd_evaluate)
    return p


def _setup_logging() -> None:
    level = os.environ.get("RECEPTIVE_JITAI_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE if "unknown config key" in str(e) else EXIT_DATA
    except (DataError, DatasetError, DegenerateTrainingSetError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
