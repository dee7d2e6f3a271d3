"""Feature-reduction sweeps and the scripted reproduction workflows.

Every workflow runs on user-supplied data files when they are present and
can fall back to the synthetic surrogates in :mod:`hoids.synthetic`.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import DataError, Dataset, get_schema, load_csv, stratified_sample
from .evaluation import (CV_HEADER, CVResult, confusion, cross_validate, error_rate,
                         recall_precision)
from .featsel import prune_correlated, rank_features
from .model import train
from .optimizer import QNConfig
from .synthetic import (ICS_CLASSES, KDD_SAMPLED_TEST, KDD_SAMPLED_TRAIN, ics_command_injection,
                        kdd_sampled_surrogate)

DATA_DIR_ENV = "HOIDS_DATA_DIR"

# expected data files and their row counts
KDD_TRAIN_FILE = "kddcup.data_10_percent"
KDD_TEST_FILE = "corrected"
ICS_FILE = "ics-command-injection.csv"
EXPECTED_ROWS = {KDD_TRAIN_FILE: 494_021, KDD_TEST_FILE: 311_029, ICS_FILE: 28_344}
DOWNLOAD_HINT = {
    KDD_TRAIN_FILE: "download kddcup.data_10_percent.gz from the UCI KDD archive and gunzip it",
    KDD_TEST_FILE: "download corrected.gz from the UCI KDD archive and gunzip it",
    ICS_FILE: ("export the multi-class command injection subset of the gas pipeline ICS "
               "dataset to CSV with the columns of the ics-multi schema"),
}

ORDERS = ("low-ig", "high-ig", "random", "pca")
EXPERIMENTS = ("kdd-table1", "kdd-sampled", "ics-igcurves", "ics-perclass")


class MissingData(DataError):
    pass


def data_dir(arg: str | None = None) -> Path:
    return Path(arg or os.environ.get(DATA_DIR_ENV, "."))


def count_rows(path: Path, comments: tuple[str, ...] = (), header: bool = False) -> int:
    prefixes = tuple(c.encode() for c in comments)
    n = 0
    with open(path, "rb") as fh:
        for line in fh:
            s = line.strip()
            if s and not (prefixes and s.startswith(prefixes)):
                n += 1
    return n - int(header and n > 0)


def require(directory: Path, name: str, schema: str) -> Path:
    """Locate a data file and check its row count before any heavy work."""
    path = directory / name
    if not path.exists():
        raise MissingData(f"{path} not found; {DOWNLOAD_HINT[name]}")
    sch = get_schema(schema)
    rows = count_rows(path, sch.comment_prefixes, sch.header)
    if rows != EXPECTED_ROWS[name]:
        raise MissingData(f"{path} has {rows} data rows, expected {EXPECTED_ROWS[name]}; "
                          f"{DOWNLOAD_HINT[name]}")
    return path


# ---------------------------------------------------------------------------
# feature-reduction sweeps


@dataclass
class SweepRow:
    order: str
    n_features: int
    features: tuple[str, ...]
    result: CVResult

    def csv_row(self) -> list:
        return [self.order, self.n_features, ";".join(self.features),
                *self.result.csv_row(f"{self.order}:{self.n_features}")[1:]]


SWEEP_HEADER = ["order", "n_features", "features", *CV_HEADER[1:]]


def model_trainer(mode: str, cfg: QNConfig, **kw) -> Callable[[Dataset], object]:
    def fit(d: Dataset):
        return train(d, mode, cfg, **kw)[0]
    return fit


def reduction_sequence(ds: Dataset, order: str, seed: int = 0) -> list[int]:
    """Column indices in the order they are removed."""
    if order == "low-ig":
        return list(reversed(rank_features(ds).order))
    if order == "high-ig":
        return rank_features(ds).order
    if order == "random":
        return [int(j) for j in np.random.default_rng(seed).permutation(ds.m)]
    raise ValueError(f"unknown reduction order {order!r}; choose from {', '.join(ORDERS)}")


def reduction_sweep(ds: Dataset, order: str, *, min_features: int = 1, repeats: int = 10,
                    folds: int = 10, seed: int = 0, mode: str = "multi",
                    cfg: QNConfig = QNConfig(), counts: list[int] | None = None) -> list[SweepRow]:
    """CV at each feature count from ``ds.m`` down to ``min_features``.

    ``low-ig`` drops the least informative feature first, ``high-ig`` the most
    informative, ``random`` a seeded permutation; ``pca`` instead keeps the
    first k principal components of the standardized features.
    """
    counts = counts or list(range(ds.m, min_features - 1, -1))
    rows = []
    if order == "pca":
        for k in counts:
            res = cross_validate(ds, model_trainer(mode, cfg, pca_k=k), repeats, folds, seed)
            rows.append(SweepRow(order, k, tuple(f"pc{i + 1}" for i in range(k)), res))
        return rows
    removal = reduction_sequence(ds, order, seed)
    for k in counts:
        keep = sorted(removal[ds.m - k:])
        sub = ds.select_columns(keep)
        res = cross_validate(sub, model_trainer(mode, cfg), repeats, folds, seed)
        rows.append(SweepRow(order, k, tuple(sub.names), res))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        w.writerows(r.csv_row() for r in rows)


# ---------------------------------------------------------------------------
# reproduction workflows


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


@dataclass
class ReproResult:
    experiment: str
    source: str  # "data" or "synthetic"
    text: str
    table: list[list]
    header: list[str]
    seconds: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerows(self.table)


def kdd_sampled(directory: Path | None, seed: int = 0, synthetic: bool = False,
                cfg: QNConfig = QNConfig()) -> ReproResult:
    t0 = time.perf_counter()
    bayes = None
    if synthetic:
        tr, te, sur = kdd_sampled_surrogate(seed)
        bayes = error_rate(te.y, sur.bayes_predict(te.X))
        source = "synthetic"
    else:
        train_path = require(directory, KDD_TRAIN_FILE, "kdd-4class")
        test_path = require(directory, KDD_TEST_FILE, "kdd-4class")
        tr = stratified_sample(load_csv(train_path, "kdd-4class"), KDD_SAMPLED_TRAIN, seed)
        te = stratified_sample(load_csv(test_path, "kdd-4class"), KDD_SAMPLED_TEST, seed + 1)
        source = "data"
    header = ["mode", "E_in", "E_out"]
    table = []
    for mode in ("ova", "multi"):
        model = train(tr, mode, cfg)[0]
        table.append([mode, repr(error_rate(tr.y, model.predict(tr.X))),
                      repr(error_rate(te.y, model.predict(te.X)))])
    lines = [f"{'':<8}{'ova':>10}{'multi':>10}",
             f"{'E_in':<8}{float(table[0][1]):>10.4f}{float(table[1][1]):>10.4f}",
             f"{'E_out':<8}{float(table[0][2]):>10.4f}{float(table[1][2]):>10.4f}"]
    if bayes is not None:
        lines.append(f"Bayes-optimal E_out on the surrogate test set: {bayes:.4f}")
        table.append(["bayes", "", repr(bayes)])
    return ReproResult("kdd-sampled", source, "\n".join(lines), table, header,
                       time.perf_counter() - t0)


def kdd_table1(directory: Path, seed: int = 0, cfg: QNConfig = QNConfig()) -> ReproResult:
    t0 = time.perf_counter()
    tr = load_csv(require(directory, KDD_TRAIN_FILE, "kdd-5class"), "kdd-5class")
    te = load_csv(require(directory, KDD_TEST_FILE, "kdd-5class"), "kdd-5class")
    model = train(tr, "multi", cfg)[0]
    cm = confusion(te.y, model.predict(te.X), te.labels)
    rp = recall_precision(cm)
    header = ["class", "recall", "precision", "support"]
    table = [[name, _fmt(rp.per_class_recall[i]), _fmt(rp.per_class_precision[i]),
              int(cm.counts[i].sum())] for i, name in enumerate(te.labels.names)]
    text = cm.format() + f"\noverall recall {_fmt(rp.recall)}, precision {_fmt(rp.precision)}"
    return ReproResult("kdd-table1", "data", text, table, header, time.perf_counter() - t0)


def load_ics(directory: Path | None, seed: int = 0, synthetic: bool = False,
             with_address: bool = False) -> tuple[Dataset, str]:
    if synthetic:
        return ics_command_injection(seed, with_address=with_address), "synthetic"
    ds = load_csv(require(directory, ICS_FILE, "ics-multi"), "ics-multi")
    if not with_address and "address" in ds.names:
        ds = ds.select_columns([n for n in ds.names if n != "address"])
    return ds, "data"


def ics_igcurves(directory: Path | None, seed: int = 0, synthetic: bool = False,
                 repeats: int = 10, folds: int = 10, cfg: QNConfig = QNConfig()) -> ReproResult:
    t0 = time.perf_counter()
    ds, source = load_ics(directory, seed, synthetic)
    pruned, prune = prune_correlated(ds)
    rows = []
    for order in ("low-ig", "high-ig", "random"):
        rows += reduction_sweep(pruned, order, repeats=repeats, folds=folds, seed=seed, cfg=cfg)
    ig = rank_features(pruned, base=2)
    text = [f"pruned to {pruned.m} features: {', '.join(pruned.names)}",
            f"label entropy {ig.label_entropy:.4f} bits",
            f"{'order':<8}{'k':>3}{'mean_r':>9}{'mean_p':>9}"]
    text += [f"{r.order:<8}{r.n_features:>3}{_fmt(r.result.mean_r):>9}{_fmt(r.result.mean_p):>9}"
             for r in rows]
    return ReproResult("ics-igcurves", source, "\n".join(text),
                       [r.csv_row() for r in rows], SWEEP_HEADER, time.perf_counter() - t0)


def ics_perclass(directory: Path | None, seed: int = 0, synthetic: bool = False,
                 repeats: int = 10, folds: int = 10, cfg: QNConfig = QNConfig()) -> ReproResult:
    t0 = time.perf_counter()
    ds, source = load_ics(directory, seed, synthetic, with_address=True)
    without = ds.select_columns([n for n in ds.names if n != "address"])
    pruned, _ = prune_correlated(without)
    variants = [
        (f"{pruned.m}-feature", pruned, {}),
        ("pca-6", pruned, {"pca_k": min(6, pruned.m)}),
        (f"{pruned.m + 1}-feature+address", ds.select_columns(["address", *pruned.names]), {}),
    ]
    header = ["variant", "class", "recall", "precision"]
    table, text = [], []
    for name, d, kw in variants:
        res = cross_validate(d, model_trainer("multi", cfg, **kw), repeats, folds, seed)
        rp = recall_precision(res.confusion)
        text.append(f"{name}: overall r={_fmt(res.mean_r)} p={_fmt(res.mean_p)}")
        for i, cls in enumerate(d.labels.names):
            table.append([name, cls, _fmt(rp.per_class_recall[i]), _fmt(rp.per_class_precision[i])])
            text.append(f"  {cls:<18} r={_fmt(rp.per_class_recall[i])} "
                        f"p={_fmt(rp.per_class_precision[i])}")
    return ReproResult("ics-perclass", source, "\n".join(text), table, header,
                       time.perf_counter() - t0)


def run(experiment: str, directory: Path | None, seed: int = 0, synthetic: bool = False,
        **kw) -> ReproResult:
    if experiment == "kdd-sampled":
        return kdd_sampled(directory, seed, synthetic, **kw)
    if experiment == "kdd-table1":
        if synthetic:
            raise MissingData("kdd-table1 has no synthetic variant; it needs the KDD99 files")
        return kdd_table1(directory, seed, **kw)
    if experiment == "ics-igcurves":
        return ics_igcurves(directory, seed, synthetic, **kw)
    if experiment == "ics-perclass":
        return ics_perclass(directory, seed, synthetic, **kw)
    raise ValueError(f"unknown experiment {experiment!r}; valid: {', '.join(EXPERIMENTS)}")


__all__ = ["DATA_DIR_ENV", "EXPECTED_ROWS", "EXPERIMENTS", "ICS_CLASSES", "MissingData", "ORDERS",
           "ReproResult", "SWEEP_HEADER", "SweepRow", "count_rows", "data_dir", "reduction_sweep",
           "reduction_sequence", "run", "write_sweep_csv"]
