"""Binary and multinomial logistic regression trained with BFGS.

Binary labels follow the +1 (abnormal) / -1 (normal) convention: the label
space's ``positive`` index maps to +1.  Multinomial weights form an
``(M+1) x (K-1)`` matrix; the last class is the reference class whose logit
is fixed at zero.

Every model carries the preprocessing needed to apply it to raw records: a
standardization recipe and, optionally, a PCA projection applied after
standardization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (DataError, Dataset, LabelSpace, StandardizationRecipe, as_float_vector,
                   one_vs_rest, standardize_apply, standardize_fit)
from .featsel import PCARecipe, pca_fit
from .optimizer import Objective, QNConfig, QNTrace, minimize

MODEL_FORMAT = "hoids-model"
MODEL_VERSION = 1

_CHUNK = 4096


class TrainingError(RuntimeError):
    pass


def sigmoid(z):
    """Logistic function, overflow-free for any real input."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _rowdot(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W`` with a per-row summation order independent of the batch size.

    Scores produced for one record and for the same record inside a batch
    are bit-identical, which BLAS does not promise.
    """
    X = np.atleast_2d(X)
    out = np.empty((X.shape[0], W.shape[1]))
    for s in range(0, X.shape[0], _CHUNK):
        blk = X[s:s + _CHUNK]
        out[s:s + _CHUNK] = (blk[:, :, None] * W[None, :, :]).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# objectives


def binary_objective(ds: Dataset) -> Objective:
    """Mean logistic loss ``(1/N) sum ln(1 + exp(-y_i x_i.w))`` over ``ds``.

    ``ds`` should already be standardized; the bias column is added here.
    """
    if ds.y is None or ds.labels.k != 2:
        raise TrainingError("binary objective needs a labeled two-class dataset")
    pos = 1 if ds.labels.positive is None else ds.labels.positive
    Xb = _with_bias(ds.X)
    y = np.where(ds.y == pos, 1.0, -1.0)
    n = Xb.shape[0]

    def fg(w):
        m = -y * (Xb @ w)
        value = float(np.logaddexp(0.0, m).sum() / n)
        grad = -(Xb.T @ (y * sigmoid(m))) / n
        return value, grad

    return Objective(Xb.shape[1], fg)


def softmax_with_reference(logits: np.ndarray) -> np.ndarray:
    """Class probabilities from ``K-1`` logits plus a zero reference logit."""
    Z = np.atleast_2d(logits)
    full = np.hstack([Z, np.zeros((Z.shape[0], 1))])
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def multi_objective(ds: Dataset) -> Objective:
    """Mean negative log-likelihood of the multinomial model.

    Weights are passed flattened, row-major, from the ``(M+1, K-1)`` matrix.
    """
    if ds.y is None:
        raise TrainingError("multinomial objective needs labels")
    K = ds.labels.k
    Xb = _with_bias(ds.X)
    n, d = Xb.shape
    # class-major layout: reductions over classes run across contiguous rows
    onehot = np.zeros((K - 1, n))
    mask = ds.y < K - 1
    rows = np.flatnonzero(mask)
    onehot[ds.y[mask], rows] = 1.0
    ref = np.flatnonzero(~mask)

    def fg(wflat):
        W = wflat.reshape(d, K - 1)
        Z = W.T @ Xb.T
        top = np.maximum(Z.max(axis=0), 0.0)
        E = np.exp(Z - top)
        total = E.sum(axis=0) + np.exp(-top)
        lse = top + np.log(total)
        picked = (Z[ds.y[rows], rows]).sum()
        value = float((lse.sum() - picked) / n)
        E /= total
        E -= onehot
        grad = Xb.T @ E.T / n
        return value, grad.ravel()

    return Objective(d * (K - 1), fg)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Prediction:
    cls: int
    probabilities: np.ndarray
    score: float

    @property
    def label(self) -> int:
        return self.cls


@dataclass(frozen=True, eq=False)
class _Base:
    recipe: StandardizationRecipe
    labels: LabelSpace
    pca: PCARecipe | None

    @property
    def n_inputs(self) -> int:
        return len(self.recipe)

    @property
    def feature_names(self) -> list[str]:
        return self.recipe.names

    def features(self, X) -> np.ndarray:
        """Raw records -> standardized (and projected) model inputs."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_inputs:
            raise DataError(f"expected {self.n_inputs} features, got {X.shape[1]}")
        if not np.isfinite(X).all():
            raise DataError("feature vector contains NaN or Inf")
        Z = self.recipe.transform(X)
        if self.pca is not None:
            Z = self.pca.project(Z)
        return Z

    def _eq_base(self, other) -> bool:
        return (type(self) is type(other) and self.recipe == other.recipe
                and self.labels == other.labels and self.pca == other.pca)


@dataclass(frozen=True, eq=False)
class BinaryModel(_Base):
    w: np.ndarray = field(default_factory=lambda: np.zeros(1))

    kind = "binary"

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if self.labels.k != 2:
            raise DataError("binary model needs a two-class label space")
        if not np.isfinite(w).all():
            raise DataError("non-finite weights")
        width = self.pca.k if self.pca is not None else len(self.recipe)
        if w.size != width + 1:
            raise DataError(f"weight vector has length {w.size}, expected {width + 1}")

    @property
    def positive(self) -> int:
        return 1 if self.labels.positive is None else self.labels.positive

    def scores(self, X) -> np.ndarray:
        Z = self.features(X)
        return _rowdot(Z, self.w[1:, None])[:, 0] + self.w[0]

    def predict(self, X) -> np.ndarray:
        s = self.scores(X)
        return np.where(s > 0, self.positive, 1 - self.positive)

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.scores(X))
        out = np.empty((p.size, 2))
        out[:, self.positive] = p
        out[:, 1 - self.positive] = 1.0 - p
        return out

    def __eq__(self, other):
        return self._eq_base(other) and np.array_equal(self.w, other.w)


@dataclass(frozen=True, eq=False)
class MultiModel(_Base):
    W: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    kind = "multi"

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        width = self.pca.k if self.pca is not None else len(self.recipe)
        if W.shape != (width + 1, self.labels.k - 1):
            raise DataError(f"weight matrix has shape {W.shape}, "
                            f"expected {(width + 1, self.labels.k - 1)}")
        if not np.isfinite(W).all():
            raise DataError("non-finite weights")

    def logits(self, X) -> np.ndarray:
        Z = self.features(X)
        return _rowdot(Z, self.W[1:]) + self.W[0]

    def predict_proba(self, X) -> np.ndarray:
        return softmax_with_reference(self.logits(X))

    def predict(self, X) -> np.ndarray:
        L = self.logits(X)
        full = np.hstack([L, np.zeros((L.shape[0], 1))])
        # argmax picks the lowest index on ties
        return np.argmax(full, axis=1)

    def scores(self, X) -> np.ndarray:
        L = self.logits(X)
        full = np.hstack([L, np.zeros((L.shape[0], 1))])
        return full.max(axis=1)

    def __eq__(self, other):
        return self._eq_base(other) and np.array_equal(self.W, other.W)


@dataclass(frozen=True, eq=False)
class OVAModel:
    """K one-vs-rest binary models combined by the highest score."""

    models: tuple[BinaryModel, ...]
    labels: LabelSpace

    kind = "ova"

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if len(self.models) != self.labels.k:
            raise DataError("need one binary model per class")

    @property
    def n_inputs(self) -> int:
        return self.models[0].n_inputs

    @property
    def feature_names(self) -> list[str]:
        return self.models[0].feature_names

    def score_matrix(self, X) -> np.ndarray:
        return np.column_stack([m.scores(X) for m in self.models])

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.score_matrix(X), axis=1)

    def scores(self, X) -> np.ndarray:
        return self.score_matrix(X).max(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        # normalized per-task probabilities; informational only
        P = sigmoid(self.score_matrix(X))
        return P / P.sum(axis=1, keepdims=True)

    def __eq__(self, other):
        return (isinstance(other, OVAModel) and self.labels == other.labels
                and self.models == other.models)


Model = BinaryModel | MultiModel | OVAModel


def predict_binary(m: BinaryModel, x) -> Prediction:
    x = as_float_vector(x, m.n_inputs)
    score = float(m.scores(x)[0])
    cls = m.positive if score > 0 else 1 - m.positive
    return Prediction(cls, m.predict_proba(x)[0], score)


def predict_multi(m: MultiModel, x) -> Prediction:
    x = as_float_vector(x, m.n_inputs)
    logits = m.logits(x)[0]
    full = np.append(logits, 0.0)
    cls = int(np.argmax(full))
    return Prediction(cls, softmax_with_reference(logits)[0], float(full[cls]))


def predict_ova(m: OVAModel, x) -> Prediction:
    x = as_float_vector(x, m.n_inputs)
    s = m.score_matrix(x)[0]
    cls = int(np.argmax(s))
    return Prediction(cls, m.predict_proba(x)[0], float(s[cls]))


def predict(m: Model, x) -> Prediction:
    if isinstance(m, BinaryModel):
        return predict_binary(m, x)
    if isinstance(m, MultiModel):
        return predict_multi(m, x)
    return predict_ova(m, x)


# ---------------------------------------------------------------------------
# training


def _prepare(ds: Dataset, pca_rho: float | None, pca_k: int | None):
    if ds.y is None:
        raise TrainingError("training needs labels")
    if ds.n < 2:
        raise TrainingError("training needs at least two rows")
    if np.unique(ds.y).size < 2:
        raise TrainingError("all training labels are identical; the objective is unbounded")
    recipe = standardize_fit(ds)
    z = standardize_apply(ds, recipe)
    pca = None
    if pca_rho is not None or pca_k is not None:
        pca = pca_fit(z, rho=1.0 if pca_rho is None else pca_rho, k=pca_k)
        z = z.with_features(pca.project(z.X), pca.component_columns())
    return recipe, pca, z


def train_binary(ds: Dataset, cfg: QNConfig = QNConfig(), *, pca_rho: float | None = None,
                 pca_k: int | None = None) -> tuple[BinaryModel, QNTrace]:
    if ds.labels.k != 2:
        raise TrainingError(f"binary training needs K=2, got K={ds.labels.k}")
    recipe, pca, z = _prepare(ds, pca_rho, pca_k)
    obj = binary_objective(z)
    w, trace = minimize(obj, np.zeros(obj.dim), cfg)
    return BinaryModel(recipe, ds.labels, pca, w), trace


def train_multi(ds: Dataset, cfg: QNConfig = QNConfig(), *, pca_rho: float | None = None,
                pca_k: int | None = None) -> tuple[MultiModel, QNTrace]:
    recipe, pca, z = _prepare(ds, pca_rho, pca_k)
    obj = multi_objective(z)
    w, trace = minimize(obj, np.zeros(obj.dim), cfg)
    return MultiModel(recipe, ds.labels, pca, w.reshape(z.m + 1, ds.labels.k - 1)), trace


def one_vs_all_train(ds: Dataset, cfg: QNConfig = QNConfig(), *, pca_rho: float | None = None,
                     pca_k: int | None = None) -> tuple[OVAModel, list[QNTrace]]:
    models, traces = [], []
    for a, name in enumerate(ds.labels.names):
        try:
            m, tr = train_binary(one_vs_rest(ds, a), cfg, pca_rho=pca_rho, pca_k=pca_k)
        except (TrainingError, DataError) as exc:
            raise TrainingError(f"one-vs-all task {name!r}: {exc}") from exc
        models.append(m)
        traces.append(tr)
    return OVAModel(tuple(models), ds.labels), traces


def train(ds: Dataset, mode: str = "multi", cfg: QNConfig = QNConfig(), **kw):
    """Dispatch on ``mode`` in {binary, multi, ova}."""
    if mode == "binary":
        return train_binary(ds, cfg, **kw)
    if mode == "multi":
        return train_multi(ds, cfg, **kw)
    if mode == "ova":
        return one_vs_all_train(ds, cfg, **kw)
    raise ValueError(f"unknown training mode {mode!r}")


# ---------------------------------------------------------------------------
# serialization


def model_to_payload(m: Model) -> dict:
    if isinstance(m, OVAModel):
        return {"type": "ova", "labels": m.labels.to_payload(),
                "models": [model_to_payload(b) for b in m.models]}
    weights = m.w[:, None] if isinstance(m, BinaryModel) else m.W
    return {
        "type": m.kind,
        "labels": m.labels.to_payload(),
        "recipe": m.recipe.to_payload(),
        "pca": None if m.pca is None else m.pca.to_payload(),
        "weights": {"rows": int(weights.shape[0]), "cols": int(weights.shape[1]),
                    "values": [float(v) for v in weights.ravel()]},
    }


def model_from_payload(d: dict) -> Model:
    labels = LabelSpace.from_payload(d["labels"])
    kind = d.get("type")
    if kind == "ova":
        return OVAModel(tuple(model_from_payload(b) for b in d["models"]), labels)
    if kind not in ("binary", "multi"):
        raise DataError(f"unknown model type {kind!r}")
    recipe = StandardizationRecipe.from_payload(d["recipe"])
    pca = None if d.get("pca") is None else PCARecipe.from_payload(d["pca"])
    wt = d["weights"]
    values = np.array([float(v) for v in wt["values"]], dtype=np.float64)
    if values.size != wt["rows"] * wt["cols"]:
        raise DataError("weight payload size does not match its declared shape")
    W = values.reshape(wt["rows"], wt["cols"])
    if kind == "binary":
        return BinaryModel(recipe, labels, pca, W[:, 0])
    return MultiModel(recipe, labels, pca, W)


def save_model(m: Model, path) -> None:
    from . import _textcodec

    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "model": model_to_payload(m)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_textcodec.dumps(doc))
        fh.write("\n")


def load_model(path) -> Model:
    from . import _textcodec

    with open(path, encoding="utf-8") as fh:
        doc = _textcodec.loads(fh.read())
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {doc.get('version')}")
    return model_from_payload(doc["model"])
