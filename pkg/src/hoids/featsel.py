"""Feature ranking by information gain, correlated-feature pruning, and PCA."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import ColumnMeta, DataError, Dataset


@dataclass(frozen=True)
class Binning:
    """Discretization policy for information gain.

    Columns with at most ``max_distinct`` distinct values are used as-is;
    wider columns are cut into ``n_bins`` equal-width bins over their range.
    """

    max_distinct: int = 32
    n_bins: int = 10

    def codes(self, col: np.ndarray) -> tuple[np.ndarray, str]:
        values, codes = np.unique(col, return_inverse=True)
        if values.size <= self.max_distinct:
            return codes.reshape(-1), f"{values.size} distinct values"
        lo, hi = float(col.min()), float(col.max())
        edges = np.linspace(lo, hi, self.n_bins + 1)
        codes = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, self.n_bins - 1)
        return codes, f"{self.n_bins} equal-width bins on [{lo:g}, {hi:g}]"


DEFAULT_BINNING = Binning()


def _log(base: float):
    if base == math.e:
        return np.log
    if base == 2:
        return np.log2
    return lambda p: np.log(p) / math.log(base)


def entropy_from_counts(counts, base: float = math.e) -> float:
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * _log(base)(p)).sum())


def _labels_of(ds_or_y):
    if isinstance(ds_or_y, Dataset):
        if ds_or_y.y is None:
            raise DataError("entropy needs labels")
        return ds_or_y.y, ds_or_y.labels.k
    y = np.asarray(ds_or_y)
    _, y = np.unique(y, return_inverse=True)
    return y.reshape(-1), int(y.max()) + 1 if y.size else 0


def label_entropy(ds, base: float = math.e) -> float:
    """Shannon entropy of the class distribution (nats by default)."""
    y, k = _labels_of(ds)
    if y.size == 0:
        raise DataError("entropy of an empty label set")
    return entropy_from_counts(np.bincount(y, minlength=k), base)


def _conditional_entropy(codes: np.ndarray, y: np.ndarray, k: int, base: float) -> float:
    n = y.size
    table = np.zeros((int(codes.max()) + 1, k))
    np.add.at(table, (codes, y), 1.0)
    h = 0.0
    for row in table:
        s = row.sum()
        if s:
            h += s / n * entropy_from_counts(row, base)
    return h


def information_gain(ds: Dataset, feature: int | str, binning: Binning = DEFAULT_BINNING,
                     base: float = math.e) -> float:
    """Reduction in label entropy from partitioning on one (discretized) feature."""
    j = ds.names.index(feature) if isinstance(feature, str) else int(feature)
    if not 0 <= j < ds.m:
        raise DataError(f"feature index {j} out of range")
    y, k = _labels_of(ds)
    codes, _ = binning.codes(ds.X[:, j])
    h = entropy_from_counts(np.bincount(y, minlength=k), base)
    return max(0.0, h - _conditional_entropy(codes, y, k, base))


@dataclass(frozen=True)
class IGReport:
    label_entropy: float
    gains: tuple[float, ...]
    names: tuple[str, ...]
    base: float
    binning: tuple[str, ...]

    @property
    def order(self) -> list[int]:
        """Feature indices by descending gain; ties keep column order."""
        return sorted(range(len(self.gains)), key=lambda j: (-self.gains[j], j))

    def top(self, k: int) -> list[int]:
        return sorted(self.order[:k])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "feature", "information_gain", "binning"])
            for r, j in enumerate(self.order, start=1):
                w.writerow([r, self.names[j], repr(self.gains[j]), self.binning[j]])


def rank_features(ds: Dataset, binning: Binning = DEFAULT_BINNING,
                  base: float = math.e) -> IGReport:
    y, k = _labels_of(ds)
    h = entropy_from_counts(np.bincount(y, minlength=k), base)
    gains, desc = [], []
    for j in range(ds.m):
        codes, d = binning.codes(ds.X[:, j])
        gains.append(max(0.0, h - _conditional_entropy(codes, y, k, base)))
        desc.append(d)
    return IGReport(h, tuple(gains), tuple(ds.names), base, tuple(desc))


@dataclass(frozen=True)
class PruneReport:
    constant: tuple[str, ...]
    groups: tuple[tuple[str, ...], ...]  # first name of each group is the survivor
    kept: tuple[str, ...]


def prune_correlated(ds: Dataset, threshold: float = 0.99,
                     binning: Binning = DEFAULT_BINNING,
                     base: float = math.e) -> tuple[Dataset, PruneReport]:
    """Drop constant columns, then collapse groups of highly correlated columns.

    Columns are visited in descending information gain; each surviving column
    absorbs every not-yet-visited column whose absolute Pearson correlation
    with it is at least ``threshold``.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    names = ds.names
    const = [j for j in range(ds.m) if np.all(ds.X[:, j] == ds.X[0, j])]
    live = [j for j in range(ds.m) if j not in const]
    if not live:
        raise DataError("every column is constant")
    corr = np.abs(np.corrcoef(ds.X[:, live], rowvar=False)) if len(live) > 1 else np.ones((1, 1))
    corr = np.atleast_2d(corr)
    report = rank_features(ds, binning, base)
    order = sorted(range(len(live)), key=lambda i: (-report.gains[live[i]], live[i]))
    taken = set()
    kept, groups = [], []
    for i in order:
        if i in taken:
            continue
        taken.add(i)
        group = [i] + [o for o in order if o not in taken and corr[i, o] >= threshold]
        taken.update(group)
        kept.append(live[i])
        groups.append(tuple(names[live[g]] for g in group))
    kept.sort()
    out = ds.select_columns(kept)
    return out, PruneReport(tuple(names[j] for j in const),
                            tuple(g for g in groups if len(g) > 1),
                            tuple(names[j] for j in kept))


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True, eq=False)
class PCARecipe:
    mean: np.ndarray
    components: np.ndarray  # M x k, orthonormal columns
    eigenvalues: np.ndarray  # full spectrum, descending
    k: int
    rho: float

    def __post_init__(self):
        for name in ("mean", "components", "eigenvalues"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def explained_ratio(self) -> np.ndarray:
        ev = np.clip(self.eigenvalues, 0.0, None)
        total = ev.sum()
        return np.cumsum(ev) / total if total > 0 else np.ones_like(ev)

    def project(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.size:
            raise DataError(f"expected {self.mean.size} features, got {X.shape[-1]}")
        D = np.atleast_2d(X - self.mean)
        # elementwise product + row sum: batch-size independent rounding
        Z = (D[:, :, None] * self.components[None, :, :]).sum(axis=1)
        return Z[0] if X.ndim == 1 else Z

    def truncated(self, k: int) -> PCARecipe:
        full = self.components
        if k > full.shape[1]:
            raise ValueError(f"recipe keeps only {full.shape[1]} components")
        return PCARecipe(self.mean, full[:, :k], self.eigenvalues, k, self.rho)

    def component_columns(self) -> list[ColumnMeta]:
        return [ColumnMeta(f"pc{i + 1}") for i in range(self.k)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "eigenvalue", "cumulative_variance_ratio"])
            for i, (ev, r) in enumerate(zip(self.eigenvalues, self.explained_ratio), 1):
                w.writerow([i, repr(float(ev)), repr(float(r))])

    def to_payload(self) -> dict:
        return {"mean": list(map(float, self.mean)),
                "components": [list(map(float, row)) for row in self.components],
                "eigenvalues": list(map(float, self.eigenvalues)),
                "k": self.k, "rho": float(self.rho)}

    @classmethod
    def from_payload(cls, d) -> PCARecipe:
        comps = np.array(d["components"], dtype=np.float64).reshape(len(d["mean"]), d["k"])
        return cls(np.array(d["mean"], dtype=np.float64), comps,
                   np.array(d["eigenvalues"], dtype=np.float64), int(d["k"]), float(d["rho"]))

    def __eq__(self, other):
        if not isinstance(other, PCARecipe):
            return NotImplemented
        return (self.k == other.k and self.rho == other.rho
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.components, other.components)
                and np.array_equal(self.eigenvalues, other.eigenvalues))


def covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    D = X - mean
    return mean, D.T @ D / (X.shape[0] - 1)


def components_for(eigenvalues: np.ndarray, rho: float) -> int:
    """Smallest k whose leading eigenvalues hold at least ``rho`` of the total.

    At ``rho = 1`` numerically-zero trailing eigenvalues are not required, so
    rank-deficient data keeps only its rank.
    """
    ev = np.clip(eigenvalues, 0.0, None)
    total = ev.sum()
    if total <= 0:
        return 1
    ratio = np.cumsum(ev) / total
    # absorbs rounding in the cumulative sum
    return int(np.argmax(ratio >= rho - 1e-12)) + 1


def pca_fit(ds: Dataset | np.ndarray, rho: float = 0.95, k: int | None = None) -> PCARecipe:
    """Eigendecomposition of the sample covariance (divisor N-1).

    The retained count is the smallest k meeting ``rho`` unless ``k`` is given.
    Each eigenvector is signed so that its largest-magnitude entry is positive.
    """
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError("PCA needs at least two rows")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    mean, C = covariance(X)
    ev, U = np.linalg.eigh(C)
    order = np.argsort(ev)[::-1]
    ev, U = ev[order], U[:, order]
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    U = U * np.where(signs == 0, 1.0, signs)
    kk = components_for(ev, rho) if k is None else int(k)
    if not 1 <= kk <= X.shape[1]:
        raise ValueError(f"k={kk} outside 1..{X.shape[1]}")
    return PCARecipe(mean, U[:, :kk], ev, kk, rho)


def pca_project(recipe: PCARecipe, x) -> np.ndarray:
    return recipe.project(x)


__all__ = ["Binning", "DEFAULT_BINNING", "IGReport", "PCARecipe", "PruneReport",
           "components_for", "covariance", "entropy_from_counts", "information_gain",
           "label_entropy", "pca_fit", "pca_project", "prune_correlated", "rank_features"]
