"""IDS server: feature engine (training store + retraining) and principle engine.

:class:`ServerCore` holds all server logic and never touches sockets; it is
driven by :func:`serve` over TCP and by the in-process simulator.
"""

from __future__ import annotations

import configparser
import itertools
import json
import logging
import os
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import _textcodec
from ..data import Dataset, load_table
from ..optimizer import QNConfig
from ..protocol import (ErrorBody, FeatureReportBody, FrameDecoder, Message, PrinciplePacket,
                        ProtocolError, Sequencer, encode, error_reply)
from .pipeline import DEFAULT_PIPELINES, Pipeline, build_principle

logger = logging.getLogger(__name__)

LEVELS = ("control-centre", "substation", "field")


@dataclass
class LevelConfig:
    pipeline: str
    push_period: float = 60.0
    retrain_period: float = 600.0
    bootstrap: str | None = None
    schema: str | None = None


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 7878
    levels: dict[str, LevelConfig] = field(default_factory=dict)
    store_cap: int = 100_000
    weak_labels: bool = False
    state_dir: str | None = None
    normal_class: int = 0
    max_iters: int = 500

    @classmethod
    def from_ini(cls, path) -> ServerConfig:
        """``[server]`` section plus one ``[level:<name>]`` section per level."""
        cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        return cls.from_parser(cp, Path(path).parent)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser, base: Path = Path(".")) -> ServerConfig:
        s = cp["server"] if cp.has_section("server") else {}
        get = s.get if s else (lambda k, d=None: d)
        levels = {}
        for sec in cp.sections():
            if not sec.startswith("level:"):
                continue
            name = sec.split(":", 1)[1]
            lv = cp[sec]
            boot = lv.get("bootstrap")
            if boot and not Path(boot).is_absolute():
                boot = str(base / boot)
            levels[name] = LevelConfig(
                pipeline=lv.get("pipeline", DEFAULT_PIPELINES.get(name, "full+multi")),
                push_period=lv.getfloat("push_period", float(get("push_period", 60))),
                retrain_period=lv.getfloat("retrain_period", float(get("retrain_period", 600))),
                bootstrap=boot, schema=lv.get("schema"))
        return cls(host=get("host", "127.0.0.1"), port=int(get("port", 7878)), levels=levels,
                   store_cap=int(get("store_cap", 100_000)),
                   weak_labels=str(get("weak_labels", "no")).lower() in ("1", "yes", "true", "on"),
                   state_dir=get("state_dir"), normal_class=int(get("normal_class", 0)),
                   max_iters=int(get("max_iters", 500)))

    def effective(self) -> dict:
        return {"host": self.host, "port": self.port, "store_cap": self.store_cap,
                "weak_labels": self.weak_labels, "state_dir": self.state_dir,
                "levels": {k: vars(v) for k, v in self.levels.items()}}


@dataclass
class _Conn:
    client_id: str = ""
    level: str | None = None
    seq: Sequencer = field(default_factory=Sequencer)
    last_seen: float = 0.0


@dataclass
class _Stored:
    names: tuple[str, ...]
    x: np.ndarray
    label: int
    weak: bool


class ServerCore:
    """Transport-free server state machine.

    ``handle`` consumes one inbound message and ``tick`` runs the schedule;
    both return ``(conn_id, Message)`` pairs for the transport to deliver.
    """

    def __init__(self, cfg: ServerConfig, bootstrap: dict[str, Dataset],
                 clock: Callable[[], float] = time.time,
                 on_alert: Callable[[str, Message], None] | None = None):
        missing = set(cfg.levels) - set(bootstrap)
        if missing:
            raise ValueError(f"no bootstrap data for levels {sorted(missing)}")
        self.cfg = cfg
        self.bootstrap = dict(bootstrap)
        self.clock = clock
        self.on_alert = on_alert
        self._lock = threading.RLock()
        self._active: dict[str, PrinciplePacket] = {}
        self._store: dict[str, deque[_Stored]] = {lv: deque(maxlen=cfg.store_cap)
                                                  for lv in cfg.levels}
        self._conns: dict[object, _Conn] = {}
        self._counter = itertools.count(1)
        self.audit: list[dict] = []
        self.alerts: list[Message] = []
        self.timeline: list[tuple[float, str, str, str]] = []
        self.retrains = 0
        self.retrain_failures = 0
        now = clock()
        self._next_push = {lv: now + c.push_period for lv, c in cfg.levels.items()}
        self._next_retrain = {lv: now + c.retrain_period for lv, c in cfg.levels.items()}
        self._qn = QNConfig(max_iters=cfg.max_iters)
        restored = self._restore()
        if restored:
            # keep principle ids unique across restarts
            last = max(int(self._active[lv].principle_id.rsplit("-", 1)[1]) for lv in restored)
            self._counter = itertools.count(last + 1)
        for lv in cfg.levels:
            if lv not in restored:
                self.retrain(lv)

    # -- persistence ------------------------------------------------------

    def _state_path(self, name: str) -> Path | None:
        if not self.cfg.state_dir:
            return None
        d = Path(self.cfg.state_dir)
        d.mkdir(parents=True, exist_ok=True)
        return d / name

    def _log(self, event: str, **fields) -> None:
        entry = {"t": float(self.clock()), "event": event, **fields}
        self.audit.append(entry)
        path = self._state_path("audit.log")
        if path is not None:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _persist(self, level: str, packet: PrinciplePacket) -> None:
        path = self._state_path(f"principle-{level}.json")
        if path is None:
            return
        tmp = path.with_suffix(".tmp")
        tmp.write_text(_textcodec.dumps(packet.to_payload()), encoding="utf-8")
        os.replace(tmp, path)

    def _restore(self) -> set[str]:
        restored = set()
        for lv in self.cfg.levels:
            path = self._state_path(f"principle-{lv}.json")
            if path is None or not path.exists():
                continue
            try:
                packet = PrinciplePacket.from_payload(_textcodec.loads(path.read_text("utf-8")))
            except (ValueError, KeyError, ProtocolError) as exc:
                self._log("restore-failed", level=lv, error=str(exc))
                continue
            self._active[lv] = packet
            restored.add(lv)
            self._log("restored", level=lv, principle_id=packet.principle_id)
        return restored

    # -- feature engine ---------------------------------------------------

    def active(self, level: str) -> PrinciplePacket | None:
        return self._active.get(level)

    def add_labeled(self, level: str, ds: Dataset) -> None:
        """Operator-labeled records; always eligible for retraining."""
        with self._lock:
            for x, y in zip(ds.X, ds.y):
                self._store[level].append(_Stored(tuple(ds.names), np.array(x), int(y), False))

    def _training_set(self, level: str) -> Dataset:
        boot = self.bootstrap[level]
        with self._lock:
            stored = list(self._store[level])
        names = tuple(boot.names)
        use = [r for r in stored if r.names == names and (self.cfg.weak_labels or not r.weak)]
        if not use:
            return boot
        X = np.vstack([boot.X, np.array([r.x for r in use])])
        y = np.concatenate([boot.y, np.array([r.label for r in use], dtype=np.int64)])
        return Dataset(X, y, boot.columns, boot.labels)

    def retrain(self, level: str, training: Dataset | None = None) -> PrinciplePacket | None:
        """Train a new principle; on failure the previous one stays active."""
        lc = self.cfg.levels[level]
        now = self.clock()
        pid = f"{level}-{next(self._counter):05d}"
        try:
            data = self._training_set(level) if training is None else training
            packet = build_principle(data, Pipeline.parse(lc.pipeline), principle_id=pid,
                                     generated_at=now, level=level,
                                     normal=self.cfg.normal_class, cfg=self._qn)
        except Exception as exc:  # a failed retrain must never take the level down
            self.retrain_failures += 1
            logger.error("retrain of level %s failed: %s", level, exc)
            self._log("retrain-failed", level=level, error=f"{type(exc).__name__}: {exc}")
            return None
        with self._lock:
            self._active[level] = packet
        self._persist(level, packet)
        self.retrains += 1
        self._log("retrained", level=level, principle_id=pid, pipeline=lc.pipeline,
                  features=list(packet.feature_list))
        return packet

    # -- principle engine -------------------------------------------------

    def _push(self, conn_id, conn: _Conn, packet: PrinciplePacket) -> tuple[object, Message]:
        self.timeline.append((self.clock(), "push", conn.client_id, packet.principle_id))
        return conn_id, Message("PrinciplePush", conn.client_id, conn.seq(), packet)

    def connect(self, conn_id) -> None:
        with self._lock:
            self._conns[conn_id] = _Conn(last_seen=self.clock())

    def disconnect(self, conn_id) -> None:
        with self._lock:
            conn = self._conns.pop(conn_id, None)
        if conn is not None:
            self._log("disconnected", client_id=conn.client_id)

    def connected(self, level: str | None = None) -> list[str]:
        return [c.client_id for c in self._conns.values() if level in (None, c.level)]

    def tick(self, now: float | None = None) -> list[tuple[object, Message]]:
        now = self.clock() if now is None else now
        out = []
        for lv, lc in self.cfg.levels.items():
            if now >= self._next_retrain[lv]:
                self._next_retrain[lv] = now + lc.retrain_period
                self.retrain(lv)
            if now >= self._next_push[lv]:
                self._next_push[lv] = now + lc.push_period
                packet = self._active.get(lv)
                if packet is None:
                    continue
                with self._lock:
                    targets = [(cid, c) for cid, c in self._conns.items() if c.level == lv]
                out.extend(self._push(cid, c, packet) for cid, c in targets)
        return out

    def handle(self, conn_id, msg: Message) -> list[tuple[object, Message]]:
        with self._lock:
            conn = self._conns.setdefault(conn_id, _Conn())
        conn.last_seen = self.clock()
        conn.client_id = msg.client_id or conn.client_id
        kind = msg.kind
        if kind == "Hello":
            level = msg.payload.level
            if level not in self.cfg.levels:
                body = ErrorBody("UnknownLevel", f"level {level!r} is not configured")
                return [(conn_id, Message("Error", conn.client_id, conn.seq(), body))]
            conn.level = level
            self._log("hello", client_id=conn.client_id, level=level)
            packet = self._active.get(level)
            return [self._push(conn_id, conn, packet)] if packet else []
        if kind == "PrincipleAck":
            ack = msg.payload
            self.timeline.append((self.clock(), "ack" if ack.applied else "nack",
                                  conn.client_id, ack.principle_id))
            return []
        if kind == "FeatureReport":
            self._ingest(conn, msg.payload)
            return []
        if kind == "Alert":
            self.alerts.append(msg)
            self._log("alert", client_id=conn.client_id, principle_id=msg.payload.principle_id,
                      predicted=msg.payload.class_name, score=msg.payload.score)
            if self.on_alert is not None:
                self.on_alert(conn.client_id, msg)
            return []
        if kind == "Heartbeat":
            return []
        if kind == "Error":
            self._log("client-error", client_id=conn.client_id, code=msg.payload.code,
                      detail=msg.payload.detail)
            return []
        body = ErrorBody("UnexpectedKind", f"server does not accept {kind}")
        return [(conn_id, Message("Error", conn.client_id, conn.seq(), body))]

    def _ingest(self, conn: _Conn, body: FeatureReportBody) -> None:
        if conn.level is None:
            return
        packet = self._find_packet(conn.level, body.principle_id)
        if packet is None:
            self._log("report-unknown-principle", client_id=conn.client_id,
                      principle_id=body.principle_id)
            return
        names = tuple(packet.feature_list)
        with self._lock:
            store = self._store[conn.level]
            for r in body.records:
                if len(r.features) == len(names):
                    store.append(_Stored(names, np.array(r.features), r.predicted, True))

    def _find_packet(self, level: str, pid: str) -> PrinciplePacket | None:
        packet = self._active.get(level)
        if packet is not None and packet.principle_id == pid:
            return packet
        # reports may trail a swap by one batch; accept any principle of this level
        return packet if packet is not None and pid.startswith(f"{level}-") else None

    def store_size(self, level: str) -> int:
        return len(self._store[level])


# ---------------------------------------------------------------------------
# TCP transport


def load_bootstrap(cfg: ServerConfig) -> dict[str, Dataset]:
    out = {}
    for lv, lc in cfg.levels.items():
        if not lc.bootstrap:
            raise ValueError(f"level {lv!r} has no bootstrap dataset")
        out[lv] = load_table(lc.bootstrap, lc.schema)
    return out


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: _TCPServer = self.server  # type: ignore[assignment]
        core = server.core
        conn_id = id(self)
        send_lock = threading.Lock()
        server.register(conn_id, self.request, send_lock)
        core.connect(conn_id)
        decoder = FrameDecoder()
        try:
            while True:
                data = self.request.recv(65536)
                if not data:
                    break
                try:
                    messages = decoder.feed(data)
                except ProtocolError as exc:
                    server.send(conn_id, error_reply(exc, "", 0))
                    continue
                for msg in messages:
                    for target, reply in core.handle(conn_id, msg):
                        server.send(target, reply)
        except OSError:
            pass
        finally:
            server.unregister(conn_id)
            core.disconnect(conn_id)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, core: ServerCore):
        super().__init__(addr, _Handler)
        self.core = core
        self._socks: dict[object, tuple[socket.socket, threading.Lock]] = {}
        self._reg = threading.Lock()

    def register(self, conn_id, sock, lock):
        with self._reg:
            self._socks[conn_id] = (sock, lock)

    def unregister(self, conn_id):
        with self._reg:
            self._socks.pop(conn_id, None)

    def send(self, conn_id, msg: Message) -> None:
        with self._reg:
            entry = self._socks.get(conn_id)
        if entry is None:
            return
        sock, lock = entry
        try:
            with lock:
                sock.sendall(encode(msg))
        except OSError as exc:
            logger.warning("send to %s failed: %s", conn_id, exc)


class ServerHandle:
    """A running TCP server; ``stop()`` shuts it down."""

    def __init__(self, core: ServerCore, tcp: _TCPServer, threads):
        self.core = core
        self._tcp = tcp
        self._threads = threads
        self._stop = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def stop(self) -> None:
        self._stop.set()
        self._tcp.shutdown()
        self._tcp.server_close()
        for t in self._threads:
            t.join(timeout=5)


def serve(cfg: ServerConfig, bootstrap: dict[str, Dataset] | None = None,
          tick_interval: float = 0.2, block: bool = True) -> ServerHandle:
    """Run the server over TCP.  With ``block=False`` returns a handle immediately."""
    core = ServerCore(cfg, bootstrap if bootstrap is not None else load_bootstrap(cfg))
    try:
        tcp = _TCPServer((cfg.host, cfg.port), core)
    except OSError as exc:
        raise OSError(f"cannot bind {cfg.host}:{cfg.port}: {exc}") from exc
    handle = ServerHandle(core, tcp, [])

    def scheduler():
        while not handle._stop.wait(tick_interval):
            for target, msg in core.tick():
                tcp.send(target, msg)

    threads = [threading.Thread(target=tcp.serve_forever, name="hoids-accept", daemon=True),
               threading.Thread(target=scheduler, name="hoids-scheduler", daemon=True)]
    handle._threads = threads
    for t in threads:
        t.start()
    logger.info("IDS server listening on %s:%d", *handle.address)
    if block:
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            handle.stop()
    return handle
