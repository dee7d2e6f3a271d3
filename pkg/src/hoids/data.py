"""Dataset ingestion, encoding, standardization and stratified sampling.

Datasets are immutable: every operation returns a new :class:`Dataset`.
Feature matrices are stored as read-only ``float64`` arrays of shape
``(N, M)``; labels as an ``int64`` array of class indices (or ``None`` for
unlabeled replay streams).
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
NOMINAL = "nominal-encoded"
CONSTANT = "constant"


class DataError(ValueError):
    """Raised for unreadable or inconsistent input data."""


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str = NUMERIC
    mean: float | None = None
    stddev: float | None = None


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    positive: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise DataError("a label space needs at least two classes")
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate class names in {self.names}")
        if self.positive is not None:
            if len(self.names) != 2:
                raise DataError("a positive class is only meaningful for K=2")
            if not 0 <= self.positive < 2:
                raise DataError("positive index out of range")

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown class {name!r}; known: {self.names}") from None

    def to_payload(self) -> dict:
        return {"names": list(self.names), "positive": self.positive}

    @classmethod
    def from_payload(cls, d: Mapping) -> LabelSpace:
        return cls(tuple(d["names"]), d.get("positive"))


@dataclass(frozen=True)
class ConnectionRecord:
    features: np.ndarray
    label: int | None = None


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray | None
    columns: tuple[ColumnMeta, ...]
    labels: LabelSpace
    rejected: int = 0

    def __post_init__(self):
        X = _frozen(self.X, np.float64)
        if X.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "columns", tuple(self.columns))
        if len(self.columns) != X.shape[1]:
            raise DataError(f"{len(self.columns)} column descriptors for {X.shape[1]} features")
        if not np.isfinite(X).all():
            raise DataError("feature matrix contains NaN or Inf")
        if self.y is not None:
            y = _frozen(self.y, np.int64)
            if y.shape != (X.shape[0],):
                raise DataError("label vector length does not match row count")
            if y.size and (y.min() < 0 or y.max() >= self.labels.k):
                raise DataError("label index outside the label space")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def records(self) -> Iterator[ConnectionRecord]:
        for i in range(self.n):
            yield ConnectionRecord(self.X[i], None if self.y is None else int(self.y[i]))

    def class_counts(self) -> dict[str, int]:
        if self.y is None:
            return {}
        counts = np.bincount(self.y, minlength=self.labels.k)
        return {name: int(c) for name, c in zip(self.labels.names, counts)}

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(self.X[rows], None if self.y is None else self.y[rows],
                       self.columns, self.labels)

    def select_columns(self, cols: Sequence[int | str]) -> Dataset:
        idx = [self.names.index(c) if isinstance(c, str) else int(c) for c in cols]
        return Dataset(self.X[:, idx], self.y, [self.columns[i] for i in idx], self.labels)

    def with_features(self, X, columns) -> Dataset:
        return Dataset(X, self.y, columns, self.labels)

    @classmethod
    def from_arrays(cls, X, y=None, class_names=None, feature_names=None,
                    positive=None) -> Dataset:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if feature_names is None:
            feature_names = [f"f{j}" for j in range(X.shape[1])]
        if class_names is None:
            k = 2 if y is None or len(y) == 0 else max(2, int(np.max(y)) + 1)
            class_names = [str(i) for i in range(k)]
        return cls(X, y, [ColumnMeta(n) for n in feature_names],
                   LabelSpace(tuple(class_names), positive))


# ---------------------------------------------------------------------------
# schemas


@dataclass
class ColumnSpec:
    name: str
    kind: str  # numeric | drop | ordinal | onehot | label
    levels: tuple[str, ...] = ()


@dataclass
class Schema:
    """Declarative description of a CSV/ARFF layout.

    Stored on disk as an INI file::

        [schema]
        name = kdd-binary
        header = no            ; first data line is a header row
        skip_until = @data     ; ignore everything up to and including this line
        comment = % #          ; space-separated line-comment prefixes
        label_strip = .
        classes = normal, abnormal
        positive = abnormal

        [columns]              ; in file order
        duration = numeric
        protocol_type = drop
        address = ordinal      ; or  onehot:a,b,c  / ordinal:a,b,c
        label = label

        [labels]               ; raw label value -> class name, * is a fallback
        normal = normal
        * = abnormal
    """

    name: str
    columns: list[ColumnSpec]
    classes: tuple[str, ...]
    label_map: dict[str, str] = field(default_factory=dict)
    positive: str | None = None
    header: bool = False
    skip_until: str | None = None
    comment: str | None = None

    @property
    def comment_prefixes(self) -> tuple[str, ...]:
        return tuple(self.comment.split()) if self.comment else ()
    label_strip: str = ""

    @property
    def label_column(self) -> int | None:
        for i, c in enumerate(self.columns):
            if c.kind == "label":
                return i
        return None

    @classmethod
    def parse(cls, text: str) -> Schema:
        cp = configparser.ConfigParser(delimiters=("=",), inline_comment_prefixes=(";",),
                                       interpolation=None, allow_no_value=True)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise DataError(f"malformed schema: {exc}") from exc
        for section in ("schema", "columns"):
            if not cp.has_section(section):
                raise DataError(f"schema is missing the [{section}] section")
        head = cp["schema"]
        columns = []
        for name, spec in cp["columns"].items():
            kind, _, levels = (spec or "numeric").partition(":")
            kind = kind.strip()
            if kind not in ("numeric", "drop", "ordinal", "onehot", "label"):
                raise DataError(f"column {name!r}: unknown kind {kind!r}")
            lv = tuple(s.strip() for s in levels.split(",") if s.strip())
            columns.append(ColumnSpec(name, kind, lv))
        classes = tuple(s.strip() for s in head.get("classes", "").split(",") if s.strip())
        label_map = dict(cp["labels"].items()) if cp.has_section("labels") else {}
        label_map = {k: v.strip() for k, v in label_map.items()}
        if not classes:
            classes = tuple(dict.fromkeys(label_map.values()))
        for target in label_map.values():
            if target not in classes:
                raise DataError(f"label mapping targets unknown class {target!r}")
        schema = cls(
            name=head.get("name", "custom"),
            columns=columns,
            classes=classes,
            label_map=label_map,
            positive=head.get("positive") or None,
            header=head.getboolean("header", fallback=False),
            skip_until=head.get("skip_until") or None,
            comment=head.get("comment") or None,
            label_strip=head.get("label_strip", ""),
        )
        if sum(c.kind == "label" for c in columns) > 1:
            raise DataError("schema declares more than one label column")
        return schema

    @classmethod
    def load(cls, path) -> Schema:
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def builtin_schemas() -> list[str]:
    root = resources.files("hoids") / "schemas"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def get_schema(schema: Schema | str | Path) -> Schema:
    """Resolve a schema object, a built-in schema name, or an INI path."""
    if isinstance(schema, Schema):
        return schema
    p = Path(schema)
    if p.suffix == ".ini" and p.exists():
        return Schema.load(p)
    res = resources.files("hoids") / "schemas" / f"{schema}.ini"
    if res.is_file():
        return Schema.parse(res.read_text(encoding="utf-8"))
    raise DataError(f"unknown schema {schema!r}; built-ins: {', '.join(builtin_schemas())}")


# ---------------------------------------------------------------------------
# loading


def _data_lines(text_stream, schema: Schema) -> Iterator[tuple[int, str]]:
    waiting = schema.skip_until is not None
    for lineno, line in enumerate(text_stream, start=1):
        stripped = line.strip()
        if waiting:
            if stripped.lower() == schema.skip_until.lower():
                waiting = False
            continue
        if not stripped:
            continue
        if schema.comment and stripped.startswith(schema.comment_prefixes):
            continue
        yield lineno, line


def _to_float(values: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Parse strings to floats; returns (values, bad-row mask)."""
    try:
        out = np.array(values, dtype=np.float64)
        bad = ~np.isfinite(out)
        return out, bad
    except ValueError:
        out = np.empty(len(values))
        bad = np.zeros(len(values), dtype=bool)
        for i, v in enumerate(values):
            try:
                out[i] = float(v)
            except ValueError:
                out[i] = np.nan
                bad[i] = True
        bad |= ~np.isfinite(out)
        return out, bad


def load_csv(path, schema: Schema | str | Path) -> Dataset:
    """Read a CSV (or ARFF data section) into a :class:`Dataset`.

    Rows with missing or non-numeric feature values are rejected and counted
    in ``Dataset.rejected``; an unknown label value or a row with the wrong
    number of fields is an error that reports the offending line.
    """
    schema = get_schema(schema)
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = list(_data_lines(fh, schema))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if schema.header and lines:
        lines = lines[1:]
    if not lines:
        raise DataError(f"{path}: no data rows")

    width = len(schema.columns)
    linenos = [ln for ln, _ in lines]
    rows = list(csv.reader(io.StringIO("".join(l if l.endswith("\n") else l + "\n"
                                               for _, l in lines)), skipinitialspace=True))
    for ln, row in zip(linenos, rows):
        if len(row) != width:
            raise DataError(f"{path}:{ln}: expected {width} fields, found {len(row)}")
    cols = list(zip(*rows))
    n = len(rows)

    bad = np.zeros(n, dtype=bool)
    blocks: list[np.ndarray] = []
    metas: list[ColumnMeta] = []
    for spec, raw in zip(schema.columns, cols):
        if spec.kind in ("drop", "label"):
            continue
        if spec.kind == "numeric":
            vals, b = _to_float(list(raw))
            bad |= b
            blocks.append(vals[:, None])
            metas.append(ColumnMeta(spec.name, NUMERIC))
            continue
        raw = [v.strip() for v in raw]
        levels = spec.levels or tuple(sorted(set(raw) - {"?", ""}))
        lookup = {v: i for i, v in enumerate(levels)}
        codes = np.array([lookup.get(v, -1) for v in raw])
        bad |= codes < 0
        if spec.kind == "ordinal":
            blocks.append(codes[:, None].astype(np.float64))
            metas.append(ColumnMeta(spec.name, NOMINAL))
        else:
            onehot = (codes[:, None] == np.arange(len(levels))[None, :]).astype(np.float64)
            blocks.append(onehot)
            metas.extend(ColumnMeta(f"{spec.name}={lv}", NOMINAL) for lv in levels)

    X = np.hstack(blocks) if blocks else np.empty((n, 0))
    y = None
    labels = LabelSpace(schema.classes, _positive_index(schema))
    lc = schema.label_column
    if lc is not None:
        y = np.empty(n, dtype=np.int64)
        cache: dict[str, int] = {}
        for i, value in enumerate(cols[lc]):
            if value not in cache:
                key = value.strip().rstrip(schema.label_strip) if schema.label_strip else value.strip()
                target = schema.label_map.get(key, schema.label_map.get("*"))
                if target is None:
                    if key in schema.classes and not schema.label_map:
                        target = key
                    else:
                        raise DataError(f"{path}:{linenos[i]}: unknown label value {value!r}")
                cache[value] = labels.index(target)
            y[i] = cache[value]

    n_bad = int(bad.sum())
    if n_bad:
        logger.warning("%s: rejected %d rows with missing/non-numeric values", path, n_bad)
        keep = ~bad
        X = X[keep]
        y = None if y is None else y[keep]
    if X.shape[0] == 0:
        raise DataError(f"{path}: every row was rejected")
    return Dataset(X, y, metas, labels, rejected=n_bad)


def _positive_index(schema: Schema) -> int | None:
    if schema.positive is None:
        return None
    return schema.classes.index(schema.positive)


def write_csv(ds: Dataset, path) -> None:
    """Export with a header row; labels are written as class names.

    A leading ``# classes:`` line records the class order (and the positive
    class, if any) so :func:`read_exported_csv` restores the same indices.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if ds.y is not None:
            pos = ("" if ds.labels.positive is None
                   else f" positive={ds.labels.names[ds.labels.positive]}")
            fh.write(f"# classes: {','.join(ds.labels.names)}{pos}\n")
        w = csv.writer(fh)
        header = ds.names + (["label"] if ds.y is not None else [])
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]]
            if ds.y is not None:
                row.append(ds.labels.names[ds.y[i]])
            w.writerow(row)


def read_exported_csv(path, classes: Sequence[str] | None = None, positive=None) -> Dataset:
    """Inverse of :func:`write_csv` (header row, optional trailing ``label``)."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    meta = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.reader(ln for ln in lines if ln and not ln.startswith("#")))
    for ln in meta:
        if ln.startswith("# classes:") and classes is None:
            spec = ln[len("# classes:"):].split()
            classes = spec[0].split(",") if spec else None
            for extra in spec[1:]:
                if extra.startswith("positive=") and positive is None:
                    positive = extra[len("positive="):]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    has_label = header[-1] == "label"
    names = header[:-1] if has_label else header
    X = np.array([[float(v) for v in r[:len(names)]] for r in body], dtype=np.float64).reshape(len(body), len(names))
    y = None
    if has_label:
        raw = [r[-1] for r in body]
        if classes is None:
            classes = list(dict.fromkeys(raw))
            if len(classes) < 2:
                classes = classes + ["other"]
        lookup = {c: i for i, c in enumerate(classes)}
        try:
            y = np.array([lookup[v] for v in raw], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"{path}: unknown label {exc.args[0]!r}") from None
    pos = classes.index(positive) if (positive is not None and classes) else None
    return Dataset(X, y, [ColumnMeta(n) for n in names],
                   LabelSpace(tuple(classes or ("0", "1")), pos))


def load_table(path, schema: Schema | str | Path | None = None,
               classes: Sequence[str] | None = None) -> Dataset:
    """``load_csv`` when a schema is given, otherwise :func:`read_exported_csv`."""
    if schema:
        return load_csv(path, schema)
    try:
        return read_exported_csv(path, classes)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True, eq=False)
class StandardizationRecipe:
    columns: tuple[ColumnMeta, ...]

    @property
    def mean(self) -> np.ndarray:
        return np.array([c.mean for c in self.columns], dtype=np.float64)

    @property
    def stddev(self) -> np.ndarray:
        return np.array([c.stddev for c in self.columns], dtype=np.float64)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self):
        return len(self.columns)

    def __eq__(self, other):
        if not isinstance(other, StandardizationRecipe):
            return NotImplemented
        return self.columns == other.columns

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.columns):
            raise DataError(f"expected {len(self.columns)} features, got {X.shape[-1]}")
        sd = self.stddev
        scale = np.where(sd > 0, sd, 1.0)
        out = (X - self.mean) / scale
        out[..., sd == 0] = 0.0
        return out

    def to_payload(self) -> dict:
        return {"names": self.names, "kinds": [c.kind for c in self.columns],
                "mean": [c.mean for c in self.columns],
                "stddev": [c.stddev for c in self.columns]}

    @classmethod
    def from_payload(cls, d: Mapping) -> StandardizationRecipe:
        return cls(tuple(ColumnMeta(n, k, float(mu), float(sd)) for n, k, mu, sd
                         in zip(d["names"], d["kinds"], d["mean"], d["stddev"])))

    @classmethod
    def identity(cls, names: Sequence[str]) -> StandardizationRecipe:
        return cls(tuple(ColumnMeta(n, NUMERIC, 0.0, 1.0) for n in names))


def standardize_fit(train: Dataset) -> StandardizationRecipe:
    if train.n < 2:
        raise DataError("standardization needs at least two rows")
    mean = train.X.mean(axis=0)
    sd = train.X.std(axis=0, ddof=1)
    cols = []
    for meta, mu, s in zip(train.columns, mean, sd):
        # exact constancy check; std of identical floats can come out as ~1e-17
        s = 0.0 if np.all(train.X[:, len(cols)] == train.X[0, len(cols)]) else float(s)
        kind = CONSTANT if s == 0.0 else (meta.kind if meta.kind != CONSTANT else NUMERIC)
        cols.append(ColumnMeta(meta.name, kind, float(mu), s))
    return StandardizationRecipe(tuple(cols))


def standardize_apply(ds: Dataset, recipe: StandardizationRecipe) -> Dataset:
    if ds.m != len(recipe):
        raise DataError(f"dataset has {ds.m} columns, recipe expects {len(recipe)}")
    return Dataset(recipe.transform(ds.X), ds.y, recipe.columns, ds.labels)


# ---------------------------------------------------------------------------
# sampling and relabeling


def stratified_sample(ds: Dataset, per_class_counts: Mapping[str | int, int],
                      seed: int = 0) -> Dataset:
    """Draw exactly ``count`` rows of each listed class without replacement."""
    if ds.y is None:
        raise DataError("stratified sampling needs labels")
    rng = np.random.default_rng(seed)
    picks = []
    for cls, count in per_class_counts.items():
        k = ds.labels.index(cls) if isinstance(cls, str) else int(cls)
        pool = np.flatnonzero(ds.y == k)
        if count > pool.size:
            raise DataError(f"class {ds.labels.names[k]!r}: requested {count}, "
                            f"only {pool.size} available")
        picks.append(rng.choice(pool, size=count, replace=False))
    rows = rng.permutation(np.concatenate(picks)) if picks else np.array([], dtype=int)
    return ds.subset(rows)


def relabel(ds: Dataset, mapping: Mapping[str, str], classes: Sequence[str] | None = None,
            positive: str | None = None) -> Dataset:
    """Map every old class name to a new class name.

    ``classes`` fixes the order of the new label space (default: first
    appearance in ``mapping``).  ``"*"`` in ``mapping`` catches the rest.
    """
    if ds.y is None:
        raise DataError("relabel needs labels")
    if classes is None:
        classes = list(dict.fromkeys(mapping[k] for k in mapping))
    new = LabelSpace(tuple(classes), None if positive is None else list(classes).index(positive))
    table = np.empty(ds.labels.k, dtype=np.int64)
    for i, old in enumerate(ds.labels.names):
        target = mapping.get(old, mapping.get("*"))
        if target is None:
            raise DataError(f"class {old!r} is not covered by the mapping")
        table[i] = new.index(target)
    return Dataset(ds.X, table[ds.y], ds.columns, new)


def one_vs_rest(ds: Dataset, cls: str | int) -> Dataset:
    """Binary view: ``cls`` becomes the positive class, everything else ``not-cls``."""
    name = ds.labels.names[cls] if isinstance(cls, (int, np.integer)) else cls
    k = ds.labels.index(name)
    y = (ds.y == k).astype(np.int64)
    return Dataset(ds.X, y, ds.columns, LabelSpace((f"not-{name}", name), positive=1))


def normal_abnormal(ds: Dataset, normal: str | int = 0) -> Dataset:
    """Collapse a multi-class dataset to normal (index 0) vs abnormal (index 1, positive)."""
    name = ds.labels.names[normal] if isinstance(normal, (int, np.integer)) else normal
    mapping = {c: ("normal" if c == name else "abnormal") for c in ds.labels.names}
    return relabel(ds, mapping, classes=["normal", "abnormal"], positive="abnormal")


def as_float_vector(x, m: int) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.size != m:
        raise DataError(f"expected {m} features, got {v.size}")
    if not np.isfinite(v).all():
        raise DataError("feature vector contains NaN or Inf")
    return v


__all__ = [
    "ColumnMeta", "ConnectionRecord", "DataError", "Dataset", "LabelSpace", "Schema",
    "StandardizationRecipe", "as_float_vector", "builtin_schemas", "get_schema", "load_csv",
    "load_table", "normal_abnormal", "one_vs_rest", "read_exported_csv", "relabel", "standardize_apply",
    "standardize_fit", "stratified_sample", "write_csv",
]
