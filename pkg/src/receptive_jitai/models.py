"""Linear receptivity classifiers and the evaluation harness around them.

Everything here works on encoded feature vectors (see ``features.encode``).
Training is deterministic: full-batch gradient descent for logistic regression,
full-batch subgradient descent for the linear SVM, both from a zero start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .features import N_FEATURES, ContextSnapshot, encode

MODEL_FORMAT_VERSION = 1

LR_DEFAULTS = {"l2": 1e-2, "iterations": 300, "learning_rate": 0.5}
SVM_DEFAULTS = {"positive_class_weight": 3.0, "l2": 1e-3, "iterations": 2000, "learning_rate": 2.0}


class DegenerateTrainingSetError(ValueError):
    """Training data holds a single class (or nothing at all)."""


@dataclass(eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float = 0.0
    kind: str = "lr"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = float(self.bias)
        if self.weights.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} weights, got shape {self.weights.shape}")
        if self.kind not in ("lr", "svm"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")

    @classmethod
    def zeros(cls, kind: str = "lr") -> "LinearModel":
        return cls(np.zeros(N_FEATURES), 0.0, kind)

    def decision(self, X) -> np.ndarray | float:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != N_FEATURES:
            raise ValueError(f"feature dimension {X.shape[-1]} != {N_FEATURES}")
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        """Receptive iff the decision value is strictly positive."""
        return (np.atleast_1d(self.decision(X)) > 0).astype(int)

    def same_as(self, other: "LinearModel") -> bool:
        return (
            self.kind == other.kind
            and self.bias == other.bias
            and np.array_equal(self.weights, other.weights)
        )


class LabeledInstance(NamedTuple):
    snapshot: ContextSnapshot
    label: int
    ts: int = 0

    @property
    def x(self) -> np.ndarray:
        return encode(self.snapshot)


@dataclass(eq=False)
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, N_FEATURES)
        self.y = np.asarray(self.y, dtype=int).reshape(-1)
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.groups is not None:
            self.groups = np.asarray(self.groups).reshape(-1)
            if len(self.groups) != len(self.y):
                raise ValueError("groups and y lengths differ")

    def __len__(self):
        return len(self.y)

    @classmethod
    def from_instances(cls, instances: Sequence[LabeledInstance], groups=None) -> "TrainingSet":
        X = np.array([inst.x for inst in instances]).reshape(-1, N_FEATURES)
        y = np.array([inst.label for inst in instances], dtype=int)
        return cls(X, y, groups)

    @classmethod
    def from_rows(cls, rows) -> "TrainingSet":
        """Build from ``features.read_dataset`` output."""
        X = np.array([encode(r.snapshot) for r in rows]).reshape(-1, N_FEATURES)
        return cls(X, [r.label for r in rows], np.array([r.participant for r in rows]))

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        groups = None if self.groups is None else self.groups[idx]
        return TrainingSet(self.X[idx], self.y[idx], groups)

    def class_counts(self) -> tuple[int, int]:
        pos = int(self.y.sum())
        return len(self.y) - pos, pos


def _require_both_classes(data: TrainingSet) -> None:
    neg, pos = data.class_counts()
    if neg == 0 or pos == 0:
        raise DegenerateTrainingSetError(
            f"degenerate training set: {neg} negatives, {pos} positives"
        )


def sigmoid(z):
    # tanh form avoids overflow warnings for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def predict_proba(model: LinearModel, x) -> float | np.ndarray:
    """Probability of receptivity, sigmoid(w.x + b). Vectorised over rows of ``x``."""
    p = sigmoid(model.decision(x))
    return float(p) if np.ndim(p) == 0 else p


# ---------------------------------------------------------------------------
# logistic regression


def log_loss(weights, bias, X, y, l2) -> float:
    """Mean log-loss plus (l2/2)*|w|^2; the bias is not penalised."""
    z = X @ weights + bias
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * weights @ weights)


def log_loss_grad(weights, bias, X, y, l2):
    """Analytic gradient of ``log_loss`` as (grad_w, grad_b)."""
    r = (sigmoid(X @ weights + bias) - y) / len(y)
    return X.T @ r + l2 * weights, float(r.sum())


def train_logistic(
    data: TrainingSet,
    l2: float = LR_DEFAULTS["l2"],
    iterations: int = LR_DEFAULTS["iterations"],
    learning_rate: float = LR_DEFAULTS["learning_rate"],
) -> LinearModel:
    if len(data) == 0:
        raise DegenerateTrainingSetError("degenerate training set: no instances")
    _require_both_classes(data)
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    X, y = data.X, data.y.astype(float)
    w = np.zeros(N_FEATURES)
    b = 0.0
    for _ in range(iterations):
        grad_w, grad_b = log_loss_grad(w, b, X, y, l2)
        w = w - learning_rate * grad_w
        b = b - learning_rate * grad_b
    return LinearModel(w, b, "lr")


# ---------------------------------------------------------------------------
# linear SVM


def train_linear_svm(
    data: TrainingSet,
    positive_class_weight: float = SVM_DEFAULTS["positive_class_weight"],
    l2: float = SVM_DEFAULTS["l2"],
    iterations: int = SVM_DEFAULTS["iterations"],
    learning_rate: float = SVM_DEFAULTS["learning_rate"],
) -> LinearModel:
    """Class-weighted hinge loss with L2, minimised by subgradient descent.

    Step size decays as ``learning_rate / sqrt(t)``; the returned model is the
    average of the iterates from the second half of the run, which is what
    makes plain subgradient descent converge.
    """
    if len(data) == 0:
        raise DegenerateTrainingSetError("degenerate training set: no instances")
    _require_both_classes(data)
    if positive_class_weight < 1:
        raise ValueError("positive_class_weight must be >= 1")
    X = data.X
    s = np.where(data.y == 1, 1.0, -1.0)
    c = np.where(data.y == 1, positive_class_weight, 1.0)
    c = c / c.sum()
    w = np.zeros(N_FEATURES)
    b = 0.0
    w_sum = np.zeros(N_FEATURES)
    b_sum = 0.0
    n_avg = 0
    start_avg = iterations // 2
    for t in range(1, iterations + 1):
        margin = s * (X @ w + b)
        active = c * s * (margin < 1.0)
        grad_w = l2 * w - X.T @ active
        grad_b = -active.sum()
        eta = learning_rate / math.sqrt(t)
        w = w - eta * grad_w
        b = b - eta * grad_b
        if t > start_avg:
            w_sum += w
            b_sum += b
            n_avg += 1
    if n_avg:
        w, b = w_sum / n_avg, b_sum / n_avg
    return LinearModel(w, b, "svm")


# ---------------------------------------------------------------------------
# reports


@dataclass
class ClassifierReport:
    precision: float
    recall: float
    f1: float
    folds: list["FoldResult"] = field(default_factory=list)


@dataclass
class FoldResult:
    train_groups: frozenset
    test_groups: frozenset
    report: ClassifierReport
    n_test: int
    test_prevalence: float


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def prf(predictions, labels) -> ClassifierReport:
    pred = np.asarray(predictions, dtype=int).reshape(-1)
    lab = np.asarray(labels, dtype=int).reshape(-1)
    if len(pred) != len(lab):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(lab)} labels")
    if len(pred) == 0:
        raise ValueError("prf needs at least one instance")
    tp = int(np.sum((pred == 1) & (lab == 1)))
    fp = int(np.sum((pred == 1) & (lab == 0)))
    fn = int(np.sum((pred == 0) & (lab == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return ClassifierReport(precision, recall, f1_score(precision, recall))


# ---------------------------------------------------------------------------
# baseline


class BiasedRandomClassifier:
    """Predicts receptive with probability ``prevalence``, independently per instance."""

    def __init__(self, prevalence: float, seed=None):
        if not 0.0 <= prevalence <= 1.0:
            raise ValueError("prevalence must lie in [0, 1]")
        self.prevalence = float(prevalence)
        self._rng = np.random.default_rng(seed)

    def predict(self, X) -> np.ndarray:
        n = len(np.atleast_2d(X))
        return (self._rng.random(n) < self.prevalence).astype(int)

    __call__ = predict


def biased_random_baseline(prevalence: float, seed=None) -> BiasedRandomClassifier:
    return BiasedRandomClassifier(prevalence, seed)


# ---------------------------------------------------------------------------
# instance hardness threshold undersampling


def _kfold_assignment(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(n)
    assign = np.empty(n, dtype=int)
    for k, chunk in enumerate(np.array_split(order, folds)):
        assign[chunk] = k
    return assign


def instance_hardness(data: TrainingSet, folds: int = 5, seed=0, max_redraws: int = 10) -> np.ndarray:
    """1 - cross-validated probability of each instance's own label (LR estimator)."""
    rng = np.random.default_rng(seed)
    for _ in range(max_redraws):
        assign = _kfold_assignment(len(data), folds, rng)
        if all(len(set(data.y[assign != k])) == 2 for k in range(folds)):
            break
    else:
        raise DegenerateTrainingSetError(
            f"could not draw {folds} folds with both classes in every training split "
            f"after {max_redraws} attempts"
        )
    proba = np.empty(len(data))
    for k in range(folds):
        test = assign == k
        model = train_logistic(data.subset(np.flatnonzero(~test)))
        proba[test] = predict_proba(model, data.X[test])
    p_true = np.where(data.y == 1, proba, 1.0 - proba)
    return 1.0 - p_true


def iht_undersample(data: TrainingSet, folds: int = 5, seed=0) -> TrainingSet:
    """Drop the hardest majority-class instances until the classes balance.

    Kept instances retain their original order; the minority class is untouched.
    """
    _require_both_classes(data)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    neg, pos = data.class_counts()
    if folds > min(neg, pos):
        raise ValueError(f"folds={folds} exceeds smaller class size {min(neg, pos)}")
    if neg == pos:
        return data.subset(np.arange(len(data)))
    majority = 0 if neg > pos else 1
    excess = abs(neg - pos)
    hardness = instance_hardness(data, folds, seed)
    maj_idx = np.flatnonzero(data.y == majority)
    # stable sort: ties removed in index order
    order = maj_idx[np.argsort(-hardness[maj_idx], kind="stable")]
    keep = np.ones(len(data), dtype=bool)
    keep[order[:excess]] = False
    return data.subset(np.flatnonzero(keep))


# ---------------------------------------------------------------------------
# leave-one-group-out cross-validation

Predictor = Callable[[np.ndarray], np.ndarray]
Trainer = Callable[[TrainingSet, np.random.Generator], Predictor]


def partition_groups(group_ids, n_groups: int, seed=0) -> list[np.ndarray]:
    """Shuffle distinct ids with ``seed`` and split into ``n_groups`` near-equal parts."""
    ids = np.array(sorted(set(np.asarray(group_ids).tolist())))
    if len(ids) < n_groups:
        raise ValueError(f"need at least {n_groups} distinct groups, found {len(ids)}")
    rng = np.random.default_rng(seed)
    return [np.sort(part) for part in np.array_split(ids[rng.permutation(len(ids))], n_groups)]


def logo_folds(data: TrainingSet, n_groups: int = 5, seed=0):
    """Yield (train_idx, test_idx, test_ids) for each held-out group of participants."""
    if data.groups is None:
        raise ValueError("cross-validation needs group ids")
    for part in partition_groups(data.groups, n_groups, seed):
        test = np.isin(data.groups, part)
        yield np.flatnonzero(~test), np.flatnonzero(test), part


def logo_cv(data: TrainingSet, n_groups: int = 5, trainer: Trainer | None = None, seed=0) -> ClassifierReport:
    """Group-wise cross-validation; the aggregate P/R/F1 are means over folds."""
    trainer = trainer or svm_trainer()
    fold_rng = np.random.default_rng(seed)
    folds = []
    for train_idx, test_idx, part in logo_folds(data, n_groups, seed):
        train, test = data.subset(train_idx), data.subset(test_idx)
        predictor = trainer(train, np.random.default_rng(fold_rng.integers(2**63)))
        rep = prf(predictor(test.X), test.y)
        folds.append(FoldResult(
            frozenset(train.groups.tolist()), frozenset(part.tolist()), rep,
            len(test), float(test.y.mean()),
        ))
    return ClassifierReport(
        float(np.mean([f.report.precision for f in folds])),
        float(np.mean([f.report.recall for f in folds])),
        float(np.mean([f.report.f1 for f in folds])),
        folds,
    )


def svm_trainer(**kwargs) -> Trainer:
    def fit(train: TrainingSet, rng):
        return train_linear_svm(train, **kwargs).predict
    return fit


def lr_trainer(undersample: bool = True, iht_folds: int = 5, **kwargs) -> Trainer:
    """P1-style trainer: optional IHT balancing, then logistic regression."""
    def fit(train: TrainingSet, rng):
        if undersample:
            train = iht_undersample(train, iht_folds, seed=int(rng.integers(2**31)))
        model = train_logistic(train, **kwargs)
        return lambda X: (np.atleast_1d(predict_proba(model, X)) > 0.5).astype(int)
    return fit


def baseline_trainer() -> Trainer:
    def fit(train: TrainingSet, rng):
        return biased_random_baseline(float(train.y.mean()), rng).predict
    return fit


def adaptive_replay_cv(
    data: TrainingSet, n_groups: int = 5, seed=0, iht_folds: int = 5, p2_params: dict | None = None,
) -> ClassifierReport:
    """Cross-validate the dual model by replaying each held-out participant in row order.

    P1 is trained (IHT + LR) on the training groups. Each held-out instance is
    predicted with the participant's history so far, then its true label is ingested.
    """
    fold_rng = np.random.default_rng(seed)
    folds = []
    for train_idx, test_idx, part in logo_folds(data, n_groups, seed):
        rng = np.random.default_rng(fold_rng.integers(2**63))
        train = iht_undersample(data.subset(train_idx), iht_folds, seed=int(rng.integers(2**31)))
        p1 = train_logistic(train)
        preds = np.empty(len(test_idx), dtype=int)
        for gid in part:
            members = np.flatnonzero(data.groups[test_idx] == gid)
            m = AdaptiveModel(p1, p2_params=p2_params)
            for j in members:
                x = data.X[test_idx[j]]
                preds[j] = int(m.predict(x)[0])
                m.ingest_xy([x], [data.y[test_idx[j]]])
        test_y = data.y[test_idx]
        folds.append(FoldResult(
            frozenset(data.groups[train_idx].tolist()), frozenset(part.tolist()),
            prf(preds, test_y), len(test_idx), float(test_y.mean()),
        ))
    return ClassifierReport(
        float(np.mean([f.report.precision for f in folds])),
        float(np.mean([f.report.recall for f in folds])),
        float(np.mean([f.report.f1 for f in folds])),
        folds,
    )


# ---------------------------------------------------------------------------
# dual-model adaptive predictor

RECEPTIVE_THRESHOLD = 0.5


class AdaptiveModel:
    """Population model P1 averaged with a personal model P2.

    P2 is retrained lazily: ``ingest`` only marks the model dirty and the next
    ``predict`` refits P2 on all personal data, provided both labels occur.
    """

    def __init__(self, p1: LinearModel, p2_params: dict | None = None):
        self.p1 = p1
        self.p2: LinearModel | None = None
        self.p2_params = dict(p2_params or {})
        self._X: list[np.ndarray] = []
        self._y: list[int] = []
        self.dirty = False
        self.retrain_count = 0

    @property
    def personal_data(self) -> TrainingSet:
        return TrainingSet(np.array(self._X).reshape(-1, N_FEATURES), np.array(self._y, dtype=int))

    def __len__(self):
        return len(self._y)

    def ingest_xy(self, xs, ys) -> "AdaptiveModel":
        xs = list(xs)
        if not xs:
            return self
        for x, y in zip(xs, ys):
            self._X.append(np.asarray(x, dtype=float))
            self._y.append(int(y))
        self.dirty = True
        return self

    def ingest(self, instances: Sequence[LabeledInstance]) -> "AdaptiveModel":
        return self.ingest_xy([i.x for i in instances], [i.label for i in instances])

    def refresh(self) -> None:
        if not self.dirty:
            return
        self.dirty = False
        if 0 < sum(self._y) < len(self._y):
            self.p2 = train_logistic(self.personal_data, **self.p2_params)
            self.retrain_count += 1
        else:
            self.p2 = None

    def probability(self, x) -> float:
        self.refresh()
        p1 = predict_proba(self.p1, x)
        if self.p2 is None:
            return p1
        return 0.5 * p1 + 0.5 * predict_proba(self.p2, x)

    def predict(self, x) -> tuple[bool, float]:
        p = self.probability(x)
        return bool(p > RECEPTIVE_THRESHOLD), p


def adaptive_predict(m: AdaptiveModel, x) -> tuple[bool, float]:
    return m.predict(x)


def adaptive_ingest(m: AdaptiveModel, instances: Sequence[LabeledInstance]) -> AdaptiveModel:
    return m.ingest(instances)


# ---------------------------------------------------------------------------
# serialisation


def format_model(model: LinearModel) -> str:
    parts = [str(MODEL_FORMAT_VERSION), model.kind, repr(float(model.bias))]
    parts += [repr(float(w)) for w in model.weights]
    return ",".join(parts)


def parse_model(text: str) -> LinearModel:
    fields = [f.strip() for f in text.strip().split(",")]
    if len(fields) != 3 + N_FEATURES:
        raise ValueError(f"model record has {len(fields)} fields, expected {3 + N_FEATURES}")
    if fields[0] != str(MODEL_FORMAT_VERSION):
        raise ValueError(f"unsupported model format version {fields[0]!r}")
    return LinearModel(np.array([float(f) for f in fields[3:]]), float(fields[2]), fields[1])


def save_model(model: LinearModel, path: str | Path) -> None:
    Path(path).write_text(format_model(model) + "\n")


def load_model(path: str | Path) -> LinearModel:
    return parse_model(Path(path).read_text())
