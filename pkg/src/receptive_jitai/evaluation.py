"""Post-hoc comparison of delivery models.

Rate differences against control come with percentile-bootstrap intervals,
either resampling messages (population view) or resampling participants with
all their messages (within-participant view). Trends over study days are
weighted least-squares slopes with a day-label permutation test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .delivery import ADAPTIVE, CONTROL, STATIC
from .metrics import message_metrics

METRICS = ("jit", "response", "conversation", "delay")
METRIC_LABELS = {
    "jit": "Just-in-time response",
    "response": "Overall response",
    "conversation": "Conversation engagement",
    "delay": "Response delay (s)",
}
MESSAGE_MODE, PARTICIPANT_MODE = "message", "participant"


def metric_value(outcome, metric: str) -> float | None:
    """Per-message value of ``metric``; None when the message does not count (delay without reply)."""
    jit, responded, conv, delay = message_metrics(outcome)
    if metric == "jit":
        return float(jit)
    if metric == "response":
        return float(responded)
    if metric == "conversation":
        return float(conv)
    if metric == "delay":
        return None if delay is None else float(delay)
    raise ValueError(f"unknown metric {metric!r}")


def _observations(records, metric):
    """(participant, model_attributed, day, value) for every message the metric covers."""
    out = []
    for d, o in records:
        v = metric_value(o, metric)
        if v is not None:
            out.append((d.participant_id, d.model_attributed, d.day, v))
    return out


@dataclass
class ComparisonRow:
    metric: str
    comparison: str
    mode: str
    n_baseline: int
    n_compared: int
    baseline_value: float | None = None
    compared_value: float | None = None
    mean_difference: float | None = None
    percent_change: float | None = None
    std_error: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    p_value: float | None = None
    p_adjusted: float | None = None

    @property
    def defined(self) -> bool:
        return self.mean_difference is not None

    @property
    def formatted(self) -> str:
        if not self.defined:
            return "NA"
        return format_difference(self.mean_difference, self.percent_change)


def format_difference(mean_difference: float, percent_change: float | None, digits: int = 3) -> str:
    """Render like ``+0.108 (+38.02%)``."""
    head = f"{mean_difference:+.{digits}f}"
    if percent_change is None:
        return head
    return f"{head} ({percent_change:+.2f}%)"


def _bootstrap_p(diffs: np.ndarray) -> float:
    b = len(diffs)
    below = (np.sum(diffs <= 0) + 1) / (b + 1)
    above = (np.sum(diffs >= 0) + 1) / (b + 1)
    return float(min(1.0, 2 * min(below, above)))


def _resampled_means(values: np.ndarray, resamples: int, rng: np.random.Generator, chunk: int = 500) -> np.ndarray:
    n = len(values)
    out = np.empty(resamples)
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        idx = rng.integers(0, n, size=(k, n))
        out[start:start + k] = values[idx].mean(axis=1)
    return out


def _finish(row: ComparisonRow, point: float, base: float, comp: float, diffs: np.ndarray) -> ComparisonRow:
    diffs = diffs[np.isfinite(diffs)]
    row.baseline_value = base
    row.compared_value = comp
    row.mean_difference = point
    row.percent_change = 100.0 * point / base if base else None
    row.std_error = float(np.std(diffs, ddof=1))
    row.ci_low, row.ci_high = (float(q) for q in np.percentile(diffs, [2.5, 97.5]))
    row.p_value = _bootstrap_p(diffs)
    return row


def compare_rates(
    records: Sequence,
    metric: str = "jit",
    baseline: str = CONTROL,
    compared: Sequence[str] = (STATIC, ADAPTIVE),
    resamples: int = 10_000,
    seed=0,
    mode: str = MESSAGE_MODE,
) -> list[ComparisonRow]:
    """Bootstrap the difference of each compared model's rate against ``baseline``.

    Rows come back with ``p_adjusted`` unset; apply ``bh_adjust`` across the
    full family of hypotheses being reported.
    """
    if mode not in (MESSAGE_MODE, PARTICIPANT_MODE):
        raise ValueError(f"unknown mode {mode!r}")
    obs = _observations(records, metric)
    rows = []
    for i, model in enumerate(compared):
        rng = np.random.default_rng([int(seed), i, METRICS.index(metric) if metric in METRICS else 99])
        label = f"{model} - {baseline}"
        if mode == MESSAGE_MODE:
            a = np.array([v for _, m, _, v in obs if m == baseline])
            b = np.array([v for _, m, _, v in obs if m == model])
            row = ComparisonRow(metric, label, mode, len(a), len(b))
            if len(a) == 0 or len(b) == 0:
                rows.append(row)
                continue
            diffs = _resampled_means(b, resamples, rng) - _resampled_means(a, resamples, rng)
            rows.append(_finish(row, float(b.mean() - a.mean()), float(a.mean()), float(b.mean()), diffs))
        else:
            rows.append(_cluster_compare(obs, metric, baseline, model, label, resamples, rng))
    return rows


def _cluster_compare(obs, metric, baseline, model, label, resamples, rng) -> ComparisonRow:
    sums: dict[str, list[float]] = {}
    for pid, m, _, v in obs:
        if m in (baseline, model):
            s = sums.setdefault(pid, [0.0, 0, 0.0, 0])
            k = 0 if m == baseline else 2
            s[k] += v
            s[k + 1] += 1
    # participants who received both kinds of message
    kept = sorted(pid for pid, s in sums.items() if s[1] > 0 and s[3] > 0)
    table = np.array([sums[pid] for pid in kept], dtype=float).reshape(-1, 4)
    row = ComparisonRow(metric, label, PARTICIPANT_MODE, int(table[:, 1].sum()), int(table[:, 3].sum()))
    if len(kept) == 0:
        return row
    base = table[:, 0].sum() / table[:, 1].sum()
    comp = table[:, 2].sum() / table[:, 3].sum()
    n = len(kept)
    diffs = np.empty(resamples)
    chunk = 1000
    for start in range(0, resamples, chunk):
        k = min(chunk, resamples - start)
        counts = np.zeros((k, n))
        draws = rng.integers(0, n, size=(k, n))
        np.add.at(counts, (np.repeat(np.arange(k), n), draws.ravel()), 1)
        tot = counts @ table
        with np.errstate(invalid="ignore", divide="ignore"):
            diffs[start:start + k] = tot[:, 2] / tot[:, 3] - tot[:, 0] / tot[:, 1]
    return _finish(row, float(comp - base), float(base), float(comp), diffs)


def bh_adjust(p_values: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return []
    if np.any((p < 0) | (p > 1)) or np.any(~np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(m)
    out[order] = adjusted
    return out.tolist()


def adjust_rows(rows: Iterable[ComparisonRow]) -> list[ComparisonRow]:
    """Fill ``p_adjusted`` over all defined rows as one family."""
    rows = list(rows)
    defined = [r for r in rows if r.defined]
    for r, adj in zip(defined, bh_adjust([r.p_value for r in defined])):
        r.p_adjusted = adj
    return rows


# ---------------------------------------------------------------------------
# trends over study days


@dataclass(frozen=True)
class DailyPoint:
    day: int
    rate: float
    n: int


def daily_series(records: Sequence, metric: str = "jit") -> dict[str, list[DailyPoint]]:
    """Per attributed model, the metric's pooled rate for every day that model delivered."""
    acc: dict[str, dict[int, list[float]]] = {}
    for _, model, day, v in _observations(records, metric):
        s = acc.setdefault(model, {}).setdefault(day, [0.0, 0])
        s[0] += v
        s[1] += 1
    return {
        model: [DailyPoint(day, s[0] / s[1], s[1]) for day, s in sorted(days.items())]
        for model, days in sorted(acc.items())
    }


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    p_value: float
    n_days: int


def _weighted_slopes(days: np.ndarray, rates: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted OLS slope of each row of ``days`` against ``rates``."""
    wsum = w.sum()
    ybar = (w * rates).sum() / wsum
    xbar = (days * w).sum(axis=-1, keepdims=True) / wsum
    dx = days - xbar
    return (w * dx * (rates - ybar)).sum(axis=-1) / (w * dx * dx).sum(axis=-1)


def trend_slope(series: Sequence[DailyPoint], permutations: int = 2000, seed=0) -> TrendResult:
    """Slope of rate on day weighted by daily n, with a two-sided permutation p-value."""
    pts = [p for p in series if p.n > 0]
    if len(pts) < 3:
        raise ValueError(f"trend needs at least 3 days with data, got {len(pts)}")
    days = np.array([p.day for p in pts], dtype=float)
    rates = np.array([p.rate for p in pts], dtype=float)
    w = np.array([p.n for p in pts], dtype=float)
    slope = float(_weighted_slopes(days, rates, w))
    if abs(slope) < 1e-15:
        slope = 0.0
    intercept = float((w * rates).sum() / w.sum() - slope * (w * days).sum() / w.sum())
    rng = np.random.default_rng(seed)
    # each (rate, n) pair keeps its weight; only the day labels are shuffled
    idx = rng.permuted(np.tile(np.arange(len(pts)), (permutations, 1)), axis=1)
    perm = _weighted_slopes(days[idx], rates, w)
    hits = np.sum(np.abs(perm) >= abs(slope) - 1e-12)
    return TrendResult(slope, intercept, float((hits + 1) / (permutations + 1)), len(pts))


def restrict_days(series: Sequence[DailyPoint], first: int, last: int) -> list[DailyPoint]:
    return [p for p in series if first <= p.day <= last]


# ---------------------------------------------------------------------------
# report files

TABLE_COLUMNS = (
    "metric", "comparison", "mode", "baseline_value", "compared_value", "mean_difference",
    "percent_change", "formatted", "std_error", "ci_low", "ci_high", "p_value", "p_adjusted",
    "n_baseline", "n_compared",
)
DAILY_COLUMNS = ("model", "day", "rate", "n")
TREND_COLUMNS = ("metric", "model", "first_day", "last_day", "slope", "intercept", "p_value", "n_days")


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_table(rows: Iterable[ComparisonRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in TABLE_COLUMNS])


def write_daily(series: dict[str, list[DailyPoint]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DAILY_COLUMNS)
        for model in (CONTROL, STATIC, ADAPTIVE):
            for p in series.get(model, []):
                w.writerow([model, p.day, f"{p.rate:.6f}", p.n])
