"""Single-process simulation of one server and several clients.

Messages travel as encoded byte frames through in-memory pipes and are
reassembled by :class:`~hoids.protocol.FrameDecoder`, so the simulation
exercises the same wire format as the TCP transport.  Time is virtual.

Scenario file format (INI)::

    [scenario]
    tick = 1.0               ; virtual seconds per step
    records_per_tick = 100   ; records each client replays per step
    store_cap = 100000
    weak_labels = no

    [level:control-centre]
    pipeline = full+multi
    bootstrap = train.csv
    ; schema = ics-multi   (omit for exported CSVs with a classes line)
    push_period = 60
    retrain_period = 600

    [client:cc-1]
    level = control-centre
    replay = part1.csv
    batch_size = 256
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import Dataset, LabelSpace, load_table
from ..evaluation import ConfusionMatrix, confusion, recall_precision
from ..model import BinaryModel
from ..protocol import FrameDecoder, Message, PrinciplePacket, encode
from .client import ClientCore
from .server import LevelConfig, ServerConfig, ServerCore


class ScenarioError(ValueError):
    pass


@dataclass
class ClientSpec:
    client_id: str
    level: str
    replay: Dataset
    batch_size: int = 256
    batch_timeout: float = 5.0
    buffer_cap: int = 10_000


@dataclass
class Scenario:
    server: ServerConfig
    bootstrap: dict[str, Dataset]
    clients: list[ClientSpec]
    tick: float = 1.0
    records_per_tick: int = 100
    max_ticks: int = 1_000_000

    @classmethod
    def from_ini(cls, path) -> Scenario:
        path = Path(path)
        cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
        try:
            if not cp.read(path, encoding="utf-8"):
                raise ScenarioError(f"scenario file {path} not found")
        except configparser.Error as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        base = path.parent

        def resolve(p: str) -> Path:
            q = Path(p)
            return q if q.is_absolute() else base / q

        sc = cp["scenario"] if cp.has_section("scenario") else {}
        try:
            scfg = ServerConfig.from_parser(cp, base)
            if cp.has_section("scenario"):
                scfg.store_cap = sc.getint("store_cap", scfg.store_cap)
                scfg.weak_labels = sc.getboolean("weak_labels", scfg.weak_labels)
                scfg.normal_class = sc.getint("normal_class", scfg.normal_class)
                scfg.max_iters = sc.getint("max_iters", scfg.max_iters)
            if not scfg.levels:
                raise ScenarioError("scenario defines no [level:<name>] sections")
            boot = {}
            for lv, lc in scfg.levels.items():
                if not lc.bootstrap:
                    raise ScenarioError(f"level {lv!r} has no bootstrap file")
                boot[lv] = load_table(lc.bootstrap, lc.schema)
            clients = []
            for sec in cp.sections():
                if not sec.startswith("client:"):
                    continue
                c = cp[sec]
                level = c.get("level")
                if level not in scfg.levels:
                    raise ScenarioError(f"{sec}: level {level!r} is not defined")
                if "replay" not in c:
                    raise ScenarioError(f"{sec}: missing replay file")
                schema = c.get("schema", scfg.levels[level].schema)
                clients.append(ClientSpec(sec.split(":", 1)[1], level,
                                          load_table(resolve(c["replay"]), schema),
                                          batch_size=c.getint("batch_size", 256),
                                          batch_timeout=c.getfloat("batch_timeout", 5.0),
                                          buffer_cap=c.getint("buffer_cap", 10_000)))
            tick = float(sc.get("tick", 1.0)) if sc else 1.0
            rpt = int(sc.get("records_per_tick", 100)) if sc else 100
        except (KeyError, ValueError, configparser.Error) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{path}: {exc}") from exc
        if not clients:
            raise ScenarioError("scenario defines no [client:<id>] sections")
        if tick <= 0 or rpt < 1:
            raise ScenarioError("tick must be > 0 and records_per_tick >= 1")
        return cls(scfg, boot, clients, tick, rpt)


@dataclass
class ClientReport:
    client_id: str
    level: str
    records_in: int
    classified: int
    dropped: int
    rejected: int
    alerts: int
    per_principle: dict[str, int]
    pushes: int
    confusion: ConfusionMatrix | None


@dataclass
class SimulationReport:
    clients: dict[str, ClientReport]
    aggregate: dict[str, ConfusionMatrix] = field(default_factory=dict)  # by level
    timeline: list[tuple[float, str, str, str]] = field(default_factory=list)
    retrains: int = 0
    retrain_failures: int = 0
    ticks: int = 0
    alert_lines: list[str] = field(default_factory=list)
    principles: dict[str, PrinciplePacket] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        def cm(c):
            return None if c is None else {"labels": list(c.labels.names),
                                           "counts": c.counts.tolist()}

        def rp(c):
            if c is None:
                return None
            r = recall_precision(c, "binary" if c.labels.k == 2 else "multi")
            return {"recall": r.recall, "precision": r.precision}

        return {
            "clients": {cid: {"level": r.level, "records_in": r.records_in,
                              "classified": r.classified, "dropped": r.dropped,
                              "rejected": r.rejected, "alerts": r.alerts,
                              "per_principle": dict(sorted(r.per_principle.items())),
                              "pushes": r.pushes, "confusion": cm(r.confusion),
                              "recall_precision": rp(r.confusion)}
                        for cid, r in sorted(self.clients.items())},
            "aggregate": {lv: {"confusion": cm(c), "recall_precision": rp(c)}
                          for lv, c in sorted(self.aggregate.items())},
            "timeline": [{"t": t, "event": e, "client_id": c, "principle_id": p}
                         for t, e, c, p in self.timeline],
            "retrains": self.retrains,
            "retrain_failures": self.retrain_failures,
            "ticks": self.ticks,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"{'client':<16}{'level':<16}{'in':>8}{'class.':>8}{'drop':>6}"
                 f"{'rej':>6}{'alerts':>8}{'pushes':>8}"]
        for cid, r in sorted(self.clients.items()):
            lines.append(f"{cid:<16}{r.level:<16}{r.records_in:>8}{r.classified:>8}"
                         f"{r.dropped:>6}{r.rejected:>6}{r.alerts:>8}{r.pushes:>8}")
        lines.append(f"retrains: {self.retrains} (failed {self.retrain_failures}), "
                     f"ticks: {self.ticks}")
        for lv, c in sorted(self.aggregate.items()):
            lines.append(f"aggregate confusion, level {lv}:")
            lines.append(c.format())
        return "\n".join(lines) + "\n"


class _Pipe:
    """One direction of an in-memory connection carrying raw frame bytes."""

    def __init__(self):
        self._bytes = bytearray()
        self._decoder = FrameDecoder()
        self.frames = 0

    def send(self, msgs: list[Message]) -> None:
        for m in msgs:
            self._bytes += encode(m)
            self.frames += 1

    def receive(self) -> list[Message]:
        data, self._bytes = bytes(self._bytes), bytearray()
        return self._decoder.feed(data) if data else []


def _truth_for(model, replay: LabelSpace, y: np.ndarray, normal: int):
    """Ground truth in the model's label space, or None if not comparable."""
    if model.labels == replay:
        return y
    if isinstance(model, BinaryModel):
        return np.where(y == normal, 1 - model.positive, model.positive)
    return None


def simulate(scenario: Scenario) -> SimulationReport:
    clock = [0.0]
    server = ServerCore(scenario.server, scenario.bootstrap, clock=lambda: clock[0])
    normal = scenario.server.normal_class
    cores: dict[str, ClientCore] = {}
    up: dict[str, _Pipe] = {}
    down: dict[str, _Pipe] = {}
    for spec in scenario.clients:
        if spec.client_id in cores:
            raise ScenarioError(f"duplicate client id {spec.client_id!r}")
        cores[spec.client_id] = ClientCore(
            spec.client_id, spec.level, batch_size=spec.batch_size,
            batch_timeout=spec.batch_timeout, buffer_cap=spec.buffer_cap,
            normal_class=normal, source_names=spec.replay.names)
        up[spec.client_id], down[spec.client_id] = _Pipe(), _Pipe()
        server.connect(spec.client_id)
        up[spec.client_id].send([cores[spec.client_id].hello()])

    def settle():
        # deliver until no frames remain in flight in either direction
        busy = True
        while busy:
            busy = False
            for cid in cores:
                for msg in up[cid].receive():
                    busy = True
                    for target, reply in server.handle(cid, msg):
                        down[target].send([reply])
                for msg in down[cid].receive():
                    busy = True
                    up[cid].send(cores[cid].on_message(msg, clock[0]))

    settle()
    cursor = {s.client_id: 0 for s in scenario.clients}
    ticks = 0
    while any(cursor[s.client_id] < s.replay.n for s in scenario.clients):
        if ticks >= scenario.max_ticks:
            raise ScenarioError(f"replay not finished after {scenario.max_ticks} ticks")
        for spec in scenario.clients:
            cid, core = spec.client_id, cores[spec.client_id]
            lo = cursor[cid]
            hi = min(lo + scenario.records_per_tick, spec.replay.n)
            for i in range(lo, hi):
                label = None if spec.replay.y is None else int(spec.replay.y[i])
                up[cid].send(core.process(spec.replay.X[i], clock[0], label))
            cursor[cid] = hi
            up[cid].send(core.poll(clock[0]))
        settle()
        clock[0] += scenario.tick
        ticks += 1
        for target, msg in server.tick(clock[0]):
            down[target].send([msg])
        settle()
    for cid, core in cores.items():
        up[cid].send(core.close(clock[0]))
    settle()
    for cid in cores:
        server.disconnect(cid)

    report = SimulationReport({}, timeline=list(server.timeline), retrains=server.retrains,
                              retrain_failures=server.retrain_failures, ticks=ticks,
                              principles={lv: server.active(lv) for lv in scenario.server.levels
                                          if server.active(lv) is not None})
    for spec in scenario.clients:
        core = cores[spec.client_id]
        c = core.counters
        cm = None
        if core.principle is not None and core.outcomes and len(c.per_principle) == 1:
            model = core.principle.model
            pred = np.array([p for p, _ in core.outcomes])
            truth = _truth_for(model, spec.replay.labels,
                               np.array([t for _, t in core.outcomes]), normal)
            if truth is not None:
                n_idx = 1 - model.positive if isinstance(model, BinaryModel) else normal
                cm = confusion(truth, pred, model.labels, normal=n_idx)
        pushes = sum(1 for _, e, who, _ in server.timeline if e == "push" and who == spec.client_id)
        report.clients[spec.client_id] = ClientReport(
            spec.client_id, spec.level, c.records_in, c.classified, c.dropped, c.rejected,
            c.alerts, dict(c.per_principle), pushes, cm)
        report.alert_lines.extend(core.alert_lines)
        if cm is not None:
            prev = report.aggregate.get(spec.level)
            report.aggregate[spec.level] = cm if prev is None else prev + cm
    return report


def run_scenario_file(path) -> SimulationReport:
    return simulate(Scenario.from_ini(path))


__all__ = ["ClientReport", "ClientSpec", "LevelConfig", "Scenario", "ScenarioError",
           "SimulationReport", "run_scenario_file", "simulate"]
