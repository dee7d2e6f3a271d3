"""Confusion matrices, IDS recall/precision, repeated k-fold CV and t intervals.

Two recall/precision conventions are supported:

``binary``
    positive = abnormal; the usual TP/FN/FP/TN.
``multi``
    TP counts intrusions assigned their exact intrusion type, FN intrusions
    predicted normal, FP normal traffic flagged *plus* intrusions given the
    wrong intrusion type, TN normal predicted normal.

Undefined ratios (0/0) are reported as ``None``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import betaincinv

from .data import DataError, Dataset, LabelSpace

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows = actual, cols = predicted
    labels: LabelSpace
    normal: int = 0

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if self.labels != other.labels or self.normal != other.normal:
            raise ValueError("cannot add confusion matrices over different label spaces")
        return ConfusionMatrix(self.counts + other.counts, self.labels, self.normal)

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.labels == other.labels
                and self.normal == other.normal and np.array_equal(self.counts, other.counts))

    def format(self) -> str:
        names = self.labels.names
        width = max(8, max(map(len, names)) + 1, len(str(self.total)) + 1)
        rows = ["actual\\pred".ljust(width) + "".join(n.rjust(width) for n in names)
                + "recall".rjust(width)]
        rp = recall_precision(self, "multi" if self.labels.k > 2 else "binary")
        for i, n in enumerate(names):
            r = rp.per_class_recall[i]
            rows.append(n.ljust(width) + "".join(str(v).rjust(width) for v in self.counts[i])
                        + (f"{r:.3f}" if r is not None else "-").rjust(width))
        rows.append("precision".ljust(width) + "".join(
            (f"{p:.3f}" if p is not None else "-").rjust(width) for p in rp.per_class_precision))
        return "\n".join(rows)


def confusion(actual: Sequence[int], predicted: Sequence[int], labels: LabelSpace,
              normal: int = 0) -> ConfusionMatrix:
    a = np.asarray(actual, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    if a.shape != p.shape:
        raise DataError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    k = labels.k
    if a.size and (min(a.min(), p.min()) < 0 or max(a.max(), p.max()) >= k):
        raise DataError("label index out of range")
    counts = np.bincount(a * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, labels, normal)


def _ratio(num, den):
    return None if den == 0 else num / den


@dataclass(frozen=True)
class RecallPrecision:
    recall: float | None
    precision: float | None
    per_class_recall: tuple[float | None, ...]
    per_class_precision: tuple[float | None, ...]
    tp: int
    fn: int
    fp: int
    tn: int


def recall_precision(cm: ConfusionMatrix, mode: str = "multi") -> RecallPrecision:
    c = cm.counts
    k = c.shape[0]
    nrm = cm.normal
    if mode == "binary":
        if k != 2:
            raise ValueError("binary mode needs a 2x2 matrix")
        pos = 1 - nrm
        tp, fn, fp, tn = c[pos, pos], c[pos, nrm], c[nrm, pos], c[nrm, nrm]
    elif mode == "multi":
        intr = [i for i in range(k) if i != nrm]
        tp = int(sum(c[i, i] for i in intr))
        fn = int(sum(c[i, nrm] for i in intr))
        misassigned = int(sum(c[i, j] for i in intr for j in intr if j != i))
        fp = int(c[nrm, intr].sum()) + misassigned
        tn = int(c[nrm, nrm])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    diag = np.diag(c)
    per_r = tuple(_ratio(int(diag[i]), int(c[i].sum())) for i in range(k))
    per_p = tuple(_ratio(int(diag[i]), int(c[:, i].sum())) for i in range(k))
    tp, fn, fp, tn = int(tp), int(fn), int(fp), int(tn)
    return RecallPrecision(_ratio(tp, tp + fn), _ratio(tp, tp + fp), per_r, per_p,
                           tp, fn, fp, tn)


def error_rate(actual, predicted) -> float:
    """Fraction of misclassified samples (E_in on training data, E_out on test)."""
    a = np.asarray(actual).reshape(-1)
    p = np.asarray(predicted).reshape(-1)
    if a.size == 0:
        raise DataError("error rate of an empty sample")
    if a.shape != p.shape:
        raise DataError("length mismatch")
    return float(np.mean(a != p))


# ---------------------------------------------------------------------------
# confidence intervals


def t_quantile(p: float, dof: float) -> float:
    """Inverse CDF of Student's t, via the inverse regularized incomplete beta."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if p == 0.5:
        return 0.0
    tail = min(p, 1 - p)
    x = betaincinv(dof / 2.0, 0.5, 2.0 * tail)
    t = math.sqrt(dof * (1.0 / x - 1.0))
    return t if p > 0.5 else -t


def confidence_interval(samples, confidence: float = 0.95) -> tuple[float, float]:
    """``mean +/- t_{alpha/2}(n-1) * s / sqrt(n)`` with ``s`` using divisor n-1."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 2:
        raise ValueError("a confidence interval needs at least two samples")
    if np.all(x == x[0]):
        # np.mean of equal values can miss x[0] by an ulp
        return float(x[0]), float(x[0])
    mean = float(x.mean())
    s = float(x.std(ddof=1))
    if s == 0.0:
        return mean, mean
    half = t_quantile(0.5 + confidence / 2.0, n - 1) * s / math.sqrt(n)
    return mean - half, mean + half


# ---------------------------------------------------------------------------
# cross validation


def stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per sample.

    Each class is shuffled and dealt round-robin, continuing the deal from
    where the previous class stopped, so every class is spread over the folds
    and fold sizes differ by at most one.
    """
    y = np.asarray(y)
    fold = np.empty(y.size, dtype=np.int64)
    pos = 0
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        fold[idx] = (pos + np.arange(idx.size)) % folds
        pos += idx.size
    return fold


@dataclass
class CVResult:
    per_run_recall: list[float | None]
    per_run_precision: list[float | None]
    n: int
    mean_r: float | None
    mean_p: float | None
    ci_r: tuple[float, float] | None
    ci_p: tuple[float, float] | None
    confidence: float = 0.95
    skipped_r: int = 0
    skipped_p: int = 0
    confusion: ConfusionMatrix | None = None
    runs: list[ConfusionMatrix] = field(default_factory=list, repr=False)

    def csv_row(self, feature_set: str) -> list:
        def f(v):
            return "" if v is None else repr(float(v))
        lo_r, hi_r = self.ci_r or (None, None)
        lo_p, hi_p = self.ci_p or (None, None)
        return [feature_set, self.n, f(self.mean_r), f(lo_r), f(hi_r),
                f(self.mean_p), f(lo_p), f(hi_p)]


CV_HEADER = ["feature_set", "n", "mean_r", "ci_r_low", "ci_r_high",
             "mean_p", "ci_p_low", "ci_p_high"]


def write_cv_csv(rows: list[list], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CV_HEADER)
        w.writerows(rows)


def _summary(values: list[float | None], confidence: float):
    present = [v for v in values if v is not None]
    skipped = len(values) - len(present)
    if not present:
        return None, None, skipped
    mean = float(np.mean(present))
    ci = confidence_interval(present, confidence) if len(present) >= 2 else (mean, mean)
    return mean, ci, skipped


Trainer = Callable[[Dataset], object]


def cross_validate(ds: Dataset, trainer: Trainer, repeats: int = 10, folds: int = 10,
                   seed: int = 0, mode: str | None = None, normal: int = 0,
                   confidence: float = 0.95) -> CVResult:
    """Repeated stratified k-fold CV of recall and precision.

    ``trainer(train_ds)`` must return an object with ``predict(X)``.
    """
    if ds.y is None:
        raise DataError("cross validation needs labels")
    if ds.n < folds:
        raise DataError(f"need at least {folds} samples for {folds}-fold CV, have {ds.n}")
    mode = mode or ("binary" if ds.labels.k == 2 else "multi")
    rng = np.random.default_rng(seed)
    recalls, precisions, runs = [], [], []
    for _ in range(repeats):
        fold = stratified_folds(ds.y, folds, rng)
        for f in range(folds):
            test = fold == f
            model = trainer(ds.subset(np.flatnonzero(~test)))
            held = ds.subset(np.flatnonzero(test))
            cm = confusion(held.y, model.predict(held.X), ds.labels, normal)
            rp = recall_precision(cm, mode)
            recalls.append(rp.recall)
            precisions.append(rp.precision)
            runs.append(cm)
    mean_r, ci_r, sk_r = _summary(recalls, confidence)
    mean_p, ci_p, sk_p = _summary(precisions, confidence)
    total = runs[0]
    for cm in runs[1:]:
        total = total + cm
    return CVResult(recalls, precisions, len(runs), mean_r, mean_p, ci_r, ci_p,
                    confidence, sk_r, sk_p, total, runs)


__all__ = ["CVResult", "CV_HEADER", "ConfusionMatrix", "RecallPrecision", "confidence_interval",
           "confusion", "cross_validate", "error_rate", "recall_precision", "stratified_folds",
           "t_quantile", "write_cv_csv"]
