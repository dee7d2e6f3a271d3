"""Seeded builders for random models and wire messages."""

import numpy as np

from hoids.data import Dataset, LabelSpace, StandardizationRecipe, standardize_fit
from hoids.featsel import pca_fit
from hoids.model import BinaryModel, MultiModel
from hoids.protocol import (Alert, ErrorBody, FeatureReportBody, Heartbeat, Hello, Message,
                            PrincipleAck, PrinciplePacket, ReportRecord)

NAMES = ["alpha", "beta", "gamma", "delta", "eps"]


def _float(rng):
    r = rng.random()
    if r < 0.1:
        return float(rng.choice([1e300, -1e300, 0.0, -0.0, 2.2250738585072014e-308]))
    return float(rng.normal(0, 10.0 ** rng.integers(-3, 4)))


def random_model(rng, m=None, with_pca=None):
    m = m or int(rng.integers(1, 6))
    names = [f"f{j}" for j in range(m)]
    X = rng.standard_normal((max(3, m + 2), m)) * rng.uniform(0.1, 10, m) + rng.normal(0, 5, m)
    std = standardize_fit(Dataset.from_arrays(X, feature_names=names))
    if rng.random() < 0.2:
        std = StandardizationRecipe.identity(names)
    pca = None
    if with_pca or (with_pca is None and rng.random() < 0.3):
        pca = pca_fit(std.transform(X), k=int(rng.integers(1, m + 1)))
    dim = pca.k if pca is not None else m
    if rng.random() < 0.4:
        return BinaryModel(std, LabelSpace(("normal", "abnormal"), positive=1), pca,
                           rng.standard_normal(dim + 1) * 3)
    k = int(rng.integers(3, 6))
    return MultiModel(std, LabelSpace(tuple(NAMES[:k])), pca,
                      rng.standard_normal((dim + 1, k - 1)) * 3)


def random_message(rng, seq=None):
    kind = rng.choice(["Hello", "PrinciplePush", "PrincipleAck", "FeatureReport", "Alert",
                       "Heartbeat", "Error"])
    cid = "c" + str(int(rng.integers(0, 1000)))
    seq = int(rng.integers(0, 2**40)) if seq is None else seq
    if kind == "Hello":
        body = Hello(str(rng.choice(["control-centre", "field", "hmi", "ünïcode"])))
    elif kind == "PrinciplePush":
        model = random_model(rng)
        body = PrinciplePacket(model, model.feature_names, _float(rng),
                               f"lvl-{int(rng.integers(0, 99999)):05d}", "field")
    elif kind == "PrincipleAck":
        body = PrincipleAck("p-1", bool(rng.random() < 0.5), str(rng.choice(["", "stale"])))
    elif kind == "FeatureReport":
        recs = tuple(ReportRecord(tuple(_float(rng) for _ in range(int(rng.integers(0, 4)))),
                                  int(rng.integers(0, 5)), _float(rng), abs(_float(rng)))
                     for _ in range(int(rng.integers(0, 5))))
        body = FeatureReportBody("p-2", recs)
    elif kind == "Alert":
        body = Alert("p-3", int(rng.integers(0, 5)), "dos", _float(rng), _float(rng))
    elif kind == "Heartbeat":
        body = Heartbeat(_float(rng))
    else:
        body = ErrorBody("MalformedFrame", "detail \"quoted\"\n", 1)
    return Message(str(kind), cid, seq, body)


def blobs(rng, n=300, k=3, m=4, sep=4.0):
    """Well-separated Gaussian classes; class 0 is the largest."""
    sizes = [n // 2] + [(n - n // 2) // (k - 1)] * (k - 1)
    centers = rng.normal(0, sep, (k, m))
    X = np.vstack([rng.standard_normal((s, m)) + centers[c] for c, s in enumerate(sizes)])
    y = np.repeat(np.arange(k), sizes)
    perm = rng.permutation(y.size)
    names = ["normal"] + [f"attack{i}" for i in range(1, k)]
    return Dataset.from_arrays(X[perm], y[perm], names)


def ics_scenario(ics, n_clients=3, pipeline="full+multi", records_per_tick=500):
    """One control-centre level bootstrapped on ``ics``; replay split across clients."""
    from hoids.runtime import ClientSpec, LevelConfig, Scenario, ServerConfig
    cfg = ServerConfig(levels={"control-centre": LevelConfig(
        pipeline, push_period=1e9, retrain_period=1e9)})
    parts = np.array_split(np.arange(ics.n), n_clients)
    clients = [ClientSpec(f"c{i}", "control-centre", ics.subset(idx))
               for i, idx in enumerate(parts)]
    return Scenario(cfg, {"control-centre": ics}, clients, records_per_tick=records_per_tick)
