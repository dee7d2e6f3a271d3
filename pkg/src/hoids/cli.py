"""``hoids`` command-line entry point.

Every subcommand echoes its effective configuration as one JSON line on
stderr, writes reports atomically, and exits 0 only when the requested
artifact was fully produced.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .data import (DataError, Dataset, builtin_schemas, load_table, normal_abnormal,
                   standardize_apply, standardize_fit)
from .evaluation import confusion, cross_validate, error_rate, recall_precision, write_cv_csv
from .featsel import Binning, pca_fit, prune_correlated, rank_features
from .model import BinaryModel, TrainingError, load_model, save_model, train
from .optimizer import OptimizerError, QNConfig
from .protocol import ProtocolError


class CLIError(Exception):
    pass


@contextlib.contextmanager
def atomic_output(path):
    """Yield a temp path that replaces ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _echo(args) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("# effective config: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _load(path: str, schema: str | None, classes: list[str] | None = None) -> Dataset:
    return load_table(path, schema, classes)


def _qn(args) -> QNConfig:
    return QNConfig(epsilon=args.epsilon, max_iters=args.max_iters)


def _traces(result):
    tr = result[1]
    return tr if isinstance(tr, list) else [tr]


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> None:
    ds = _load(args.data, args.schema)
    if args.mode == "binary" and ds.labels.k > 2:
        ds = normal_abnormal(ds, args.normal)
    kw = {}
    if args.pca_rho is not None:
        kw["pca_rho"] = args.pca_rho
    if args.pca_k is not None:
        kw["pca_k"] = args.pca_k
    result = train(ds, args.mode, _qn(args), **kw)
    model = result[0]
    e_in = error_rate(ds.y, model.predict(ds.X))
    trace_path = args.trace or str(Path(args.out).with_suffix(".trace.csv"))
    with atomic_output(args.out) as tmp_model, atomic_output(trace_path) as tmp_trace:
        save_model(model, tmp_model)
        with open(tmp_trace, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", "iteration", "objective", "step_norm"])
            for t, tr in enumerate(_traces(result)):
                for i, (v, s) in enumerate(zip(tr.values, tr.step_norms)):
                    w.writerow([t, i, repr(float(v)), repr(float(s))])
    for t, tr in enumerate(_traces(result)):
        state = "converged" if tr.converged else f"stopped ({tr.message})"
        print(f"task {t}: {tr.iterations} iterations, {state}")
    print(f"E_in = {e_in:.3f}  ({ds.n} rows, {len(model.feature_names)} features, "
          f"mode {args.mode})")
    print(f"model written to {args.out}; trace to {trace_path}")


def _model_inputs(model, ds: Dataset) -> np.ndarray:
    names = list(model.feature_names)
    if ds.m != len(names):
        if set(names) <= set(ds.names):
            return ds.select_columns(names).X
        raise CLIError(f"arity mismatch: model expects {len(names)} features, data has {ds.m}")
    return ds.X


def cmd_predict(args) -> None:
    model = load_model(args.model)
    ds = _load(args.data, args.schema, list(model.labels.names))
    X = _model_inputs(model, ds)
    pred = model.predict(X)
    scores = model.scores(X)
    if scores.ndim > 1:
        scores = scores[np.arange(len(pred)), pred] if scores.shape[1] > 1 else scores[:, 0]
    with atomic_output(args.out) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "predicted", "score"])
            for i, (p, s) in enumerate(zip(pred, scores)):
                w.writerow([i, model.labels.names[p], repr(float(s))])
    print(f"{len(pred)} predictions written to {args.out}")


def cmd_eval(args) -> None:
    model = load_model(args.model)
    ds = _load(args.data, args.schema, list(model.labels.names))
    X = _model_inputs(model, ds)
    y = ds.y
    if ds.labels != model.labels:
        if isinstance(model, BinaryModel) and ds.labels.k > 2:
            y = np.where(ds.y == args.normal, 1 - model.positive, model.positive)
        elif ds.labels.names != model.labels.names:
            raise CLIError(f"data classes {ds.labels.names} differ from model classes "
                           f"{model.labels.names}")
    pred = model.predict(X)
    normal = 1 - model.positive if isinstance(model, BinaryModel) else args.normal
    cm = confusion(y, pred, model.labels, normal)
    mode = "binary" if model.labels.k == 2 else "multi"
    rp = recall_precision(cm, mode)
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(cm.format())
    print(f"error rate {error_rate(y, pred):.4f}  recall {fmt(rp.recall)}  "
          f"precision {fmt(rp.precision)}")
    if args.out:
        with atomic_output(args.out) as tmp:
            with open(tmp, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["class", "recall", "precision", "support"])
                for i, name in enumerate(model.labels.names):
                    w.writerow([name, fmt(rp.per_class_recall[i]),
                                fmt(rp.per_class_precision[i]), int(cm.counts[i].sum())])
                w.writerow(["overall", fmt(rp.recall), fmt(rp.precision), cm.total])


def cmd_ig(args) -> None:
    ds = _load(args.data, args.schema)
    base = 2.0 if args.base == "2" else math.e
    report = rank_features(ds, Binning(args.max_distinct, args.bins), base)
    unit = "bits" if args.base == "2" else "nats"
    print(f"label entropy = {report.label_entropy:.4f} {unit}")
    for r, j in enumerate(report.order, start=1):
        print(f"{r:>3}  {report.names[j]:<32} {report.gains[j]:.6f}")
    if args.out:
        with atomic_output(args.out) as tmp:
            report.write_csv(tmp)


def cmd_pca(args) -> None:
    ds = _load(args.data, args.schema)
    z = standardize_apply(ds, standardize_fit(ds)) if args.standardize else ds
    recipe = pca_fit(z, rho=args.rho, k=args.k)
    ratio = recipe.explained_ratio
    print(f"k = {recipe.k} of {ds.m} components (rho = {args.rho})")
    for i, (lam, r) in enumerate(zip(recipe.eigenvalues, np.cumsum(ratio)), start=1):
        print(f"pc{i:<3} eigenvalue {lam:.6g}  cumulative {r:.4f}")
    if args.out:
        with atomic_output(args.out) as tmp:
            recipe.write_csv(tmp)


def cmd_cv(args) -> None:
    ds = _load(args.data, args.schema)
    if args.prune:
        ds, rep = prune_correlated(ds, args.prune)
        print(f"pruned to {ds.m} features: {', '.join(rep.kept)}")
    cfg = _qn(args)
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    if args.order:
        rows = ex.reduction_sweep(ds, args.order, min_features=args.min_features,
                                  repeats=args.repeats, folds=args.folds, seed=args.seed,
                                  mode=args.mode, cfg=cfg)
        for r in rows:
            print(f"{r.order:<8}{r.n_features:>4}  mean_r {fmt(r.result.mean_r)}  "
                  f"mean_p {fmt(r.result.mean_p)}")
        if args.out:
            with atomic_output(args.out) as tmp:
                ex.write_sweep_csv(rows, tmp)
        return
    res = cross_validate(ds, ex.model_trainer(args.mode, cfg), args.repeats, args.folds,
                         args.seed)
    print(f"{res.n} runs  mean_r {fmt(res.mean_r)} CI {res.ci_r}  "
          f"mean_p {fmt(res.mean_p)} CI {res.ci_p}")
    if args.out:
        with atomic_output(args.out) as tmp:
            write_cv_csv([res.csv_row(f"all:{ds.m}")], tmp)


def cmd_serve(args) -> None:
    from .runtime.server import ServerConfig, serve
    cfg = ServerConfig.from_ini(args.config)
    if args.port is not None:
        cfg.port = args.port
    print("# server config: " + json.dumps(cfg.effective(), sort_keys=True), file=sys.stderr)
    serve(cfg, block=True)


def cmd_client(args) -> None:
    from .runtime.client import ClientConfig, ClientCore, TCPClient
    cfg = ClientConfig.from_ini(args.config)
    if args.replay:
        cfg.replay = args.replay
    print("# client config: " + json.dumps(cfg.effective(), sort_keys=True, default=str),
          file=sys.stderr)
    if not cfg.replay:
        raise CLIError("client needs a replay file (config key 'replay' or --replay)")
    ds = _load(cfg.replay, cfg.schema)
    sink = open(cfg.alert_log, "a", encoding="utf-8") if cfg.alert_log else sys.stdout
    try:
        core = ClientCore(cfg.client_id, cfg.level, batch_size=cfg.batch_size,
                          batch_timeout=cfg.batch_timeout, buffer_cap=cfg.buffer_cap,
                          normal_class=cfg.normal_class, source_names=ds.names, alert_sink=sink)
        records = ((ds.X[i], None if ds.y is None else int(ds.y[i])) for i in range(ds.n))
        c = TCPClient(cfg, core).run(records, wait_for_principle=args.wait)
    finally:
        if sink is not sys.stdout:
            sink.close()
    print(f"records_in {c.records_in}  classified {c.classified}  dropped {c.dropped}  "
          f"rejected {c.rejected}  alerts {c.alerts}", file=sys.stderr)


def cmd_simulate(args) -> None:
    from .runtime.simulate import Scenario, simulate
    t0 = time.perf_counter()
    report = simulate(Scenario.from_ini(args.scenario))
    print(report.summary(), end="")
    print(f"simulated in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    if args.out:
        with atomic_output(args.out) as tmp:
            Path(tmp).write_text(report.to_text(), encoding="utf-8")
    if args.alerts:
        with atomic_output(args.alerts) as tmp:
            Path(tmp).write_text("".join(line + "\n" for line in report.alert_lines), encoding="utf-8")


def cmd_repro(args) -> None:
    if args.experiment not in ex.EXPERIMENTS:
        raise CLIError(f"unknown experiment {args.experiment!r}; valid ids: "
                       f"{', '.join(ex.EXPERIMENTS)}")
    kw = {"cfg": _qn(args)}
    if args.experiment.startswith("ics-"):
        kw.update(repeats=args.repeats, folds=args.folds)
    res = ex.run(args.experiment, ex.data_dir(args.data_dir), args.seed, args.synthetic, **kw)
    print(f"[{res.experiment}] source: {res.source}")
    print(res.text)
    print(f"elapsed {res.seconds:.1f}s", file=sys.stderr)
    if args.out:
        with atomic_output(args.out) as tmp:
            res.write_csv(tmp)


# ---------------------------------------------------------------------------
# parser


def _data_flags(p, required=True):
    p.add_argument("--data", required=required, help="input CSV/ARFF file")
    p.add_argument("--schema", help="schema name (%s) or path to a schema .ini; omit for CSVs "
                   "with a header row and trailing 'label' column" % ", ".join(builtin_schemas()))


def _opt_flags(p):
    p.add_argument("--epsilon", type=float, default=1e-5, help="stop when the step norm drops "
                   "below this (default 1e-5)")
    p.add_argument("--max-iters", type=int, default=500, help="BFGS iteration cap (default 500)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hoids", description="Hierarchical online intrusion "
                                "detection: training, evaluation, and the server/client runtime.")
    p.add_argument("--version", action="version", version=f"hoids {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv: debug)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("train", help="train a model")
    _data_flags(s)
    s.add_argument("--mode", choices=("binary", "multi", "ova"), default="multi",
                   help="binary (normal vs abnormal), multinomial, or one-vs-all")
    s.add_argument("--out", required=True, help="model file to write")
    s.add_argument("--trace", help="objective trace CSV (default: <out>.trace.csv)")
    s.add_argument("--pca-rho", type=float, help="apply PCA keeping this variance fraction")
    s.add_argument("--pca-k", type=int, help="apply PCA keeping this many components")
    s.add_argument("--normal", type=int, default=0, help="index of the normal class")
    _opt_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="classify records with a saved model")
    s.add_argument("--model", required=True, help="model file")
    _data_flags(s)
    s.add_argument("--out", required=True, help="predictions CSV to write")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="confusion matrix and recall/precision of a saved model")
    s.add_argument("--model", required=True, help="model file")
    _data_flags(s)
    s.add_argument("--normal", type=int, default=0, help="index of the normal class")
    s.add_argument("--out", help="per-class report CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ig", help="information gain of every feature")
    _data_flags(s)
    s.add_argument("--base", choices=("e", "2"), default="e", help="log base (default e)")
    s.add_argument("--max-distinct", type=int, default=32,
                   help="columns with at most this many values are used as-is (default 32)")
    s.add_argument("--bins", type=int, default=10, help="equal-width bins otherwise (default 10)")
    s.add_argument("--out", help="ranking CSV")
    s.set_defaults(func=cmd_ig)

    s = sub.add_parser("pca", help="principal component analysis")
    _data_flags(s)
    s.add_argument("--rho", type=float, default=0.95, help="variance fraction to keep")
    s.add_argument("--k", type=int, help="number of components (overrides --rho)")
    s.add_argument("--no-standardize", dest="standardize", action="store_false",
                   help="fit on raw rather than standardized features")
    s.add_argument("--out", help="components CSV")
    s.set_defaults(func=cmd_pca)

    s = sub.add_parser("cv", help="repeated stratified cross validation, optionally a "
                       "feature-reduction sweep")
    _data_flags(s)
    s.add_argument("--mode", choices=("binary", "multi", "ova"), default="multi")
    s.add_argument("--repeats", type=int, default=10, help="CV repetitions (default 10)")
    s.add_argument("--folds", type=int, default=10, help="folds per repetition (default 10)")
    s.add_argument("--order", choices=ex.ORDERS,
                   help="feature-reduction sweep order; omit for a single CV")
    s.add_argument("--min-features", type=int, default=1, help="smallest feature count swept")
    s.add_argument("--prune", type=float, metavar="THRESHOLD",
                   help="drop constant columns and collapse groups with |corr| >= THRESHOLD")
    s.add_argument("--out", help="CV report CSV")
    _opt_flags(s)
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("serve", help="run the IDS server")
    s.add_argument("--config", required=True, help="server .ini")
    s.add_argument("--port", type=int, help="override the configured port")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("client", help="run an IDS client replaying a feature file")
    s.add_argument("--config", required=True, help="client .ini")
    s.add_argument("--replay", help="override the configured replay file")
    s.add_argument("--wait", type=float, default=10.0,
                   help="seconds to wait for the first principle (default 10)")
    s.set_defaults(func=cmd_client)

    s = sub.add_parser("simulate", help="run a server and clients in-process")
    s.add_argument("--scenario", required=True, help="scenario .ini")
    s.add_argument("--out", help="structured report file")
    s.add_argument("--alerts", help="alert log file")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("repro", help="scripted experiment reproduction")
    s.add_argument("--experiment", required=True, help="one of: " + ", ".join(ex.EXPERIMENTS))
    s.add_argument("--data-dir", help=f"data directory (default ${ex.DATA_DIR_ENV} or .)")
    s.add_argument("--synthetic", action="store_true",
                   help="use the synthetic surrogate instead of data files")
    s.add_argument("--repeats", type=int, default=10, help="CV repetitions for ics-* runs")
    s.add_argument("--folds", type=int, default=10, help="CV folds for ics-* runs")
    s.add_argument("--out", help="report CSV")
    _opt_flags(s)
    s.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    _echo(args)
    try:
        args.func(args)
    except (CLIError, DataError, TrainingError, OptimizerError, ProtocolError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
