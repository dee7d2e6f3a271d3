"""Per-level training pipelines: feature reduction followed by a detector.

A pipeline is written ``<selection>+<model>``:

* selection: ``full``, ``ig:<k>`` (top-k by information gain) or
  ``pca:<rho>`` (principal components keeping ``rho`` of the variance)
* model: ``multi``, ``ova`` or ``binary`` (normal vs abnormal)

e.g. ``ig:4+multi`` or ``pca:0.95+binary``.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..data import Dataset, normal_abnormal
from ..featsel import rank_features
from ..model import train
from ..optimizer import QNConfig
from ..protocol import PrinciplePacket

DEFAULT_PIPELINES = {
    "control-centre": "full+multi",
    "substation": "ig:4+multi",
    "field": "pca:0.95+binary",
}


@dataclass(frozen=True)
class Pipeline:
    selection: str  # full | ig | pca
    param: float | None
    mode: str

    @classmethod
    def parse(cls, text: str) -> Pipeline:
        try:
            sel, mode = text.strip().split("+")
        except ValueError:
            raise ValueError(f"pipeline {text!r} is not of the form <selection>+<model>") from None
        name, _, arg = sel.partition(":")
        if mode not in ("multi", "ova", "binary"):
            raise ValueError(f"unknown model {mode!r} in pipeline {text!r}")
        if name == "full" and not arg:
            return cls("full", None, mode)
        if name == "ig" and arg:
            return cls("ig", int(arg), mode)
        if name == "pca" and arg:
            rho = float(arg)
            if not 0 < rho <= 1:
                raise ValueError("pca rho must lie in (0, 1]")
            return cls("pca", rho, mode)
        raise ValueError(f"unknown feature selection {sel!r} in pipeline {text!r}")

    def __str__(self):
        sel = self.selection if self.param is None else f"{self.selection}:{self.param:g}"
        return f"{sel}+{self.mode}"


def build_principle(ds: Dataset, pipeline: Pipeline | str, *, principle_id: str,
                    generated_at: float, level: str = "", normal: int = 0,
                    cfg: QNConfig = QNConfig()) -> PrinciplePacket:
    """Train one detection principle from labeled data."""
    if isinstance(pipeline, str):
        pipeline = Pipeline.parse(pipeline)
    if pipeline.selection == "ig":
        report = rank_features(ds)
        k = min(int(pipeline.param), ds.m)
        ds = ds.select_columns(report.top(k))
    if pipeline.mode == "binary" and ds.labels.k > 2:
        ds = normal_abnormal(ds, normal)
    kw = {"pca_rho": pipeline.param} if pipeline.selection == "pca" else {}
    result = train(ds, pipeline.mode, cfg, **kw)
    return PrinciplePacket(result[0], tuple(ds.names), generated_at, principle_id, level)
