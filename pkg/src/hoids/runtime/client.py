"""IDS client: applies the current principle to feature records and raises alerts.

:class:`ClientCore` is the transport-free processing loop; :class:`TCPClient`
wraps it with a socket, a receive thread and reconnect-with-backoff.
"""

from __future__ import annotations

import configparser
import logging
import queue
import socket
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, TextIO

import numpy as np

from ..data import DataError
from ..model import BinaryModel, predict
from ..protocol import (Alert, FeatureReportBody, FrameDecoder, Hello, Message, PrincipleAck,
                        PrinciplePacket, ProtocolError, ReportRecord, Sequencer, encode)

logger = logging.getLogger(__name__)


@dataclass
class ClientConfig:
    client_id: str
    level: str
    host: str = "127.0.0.1"
    port: int = 7878
    batch_size: int = 256
    batch_timeout: float = 5.0
    buffer_cap: int = 10_000
    outbox_cap: int = 10_000
    normal_class: int = 0
    alert_log: str | None = None
    replay: str | None = None
    schema: str | None = None
    rate: float = 0.0  # records per second when replaying; 0 = as fast as possible
    backoff_initial: float = 0.5
    backoff_max: float = 30.0

    @classmethod
    def from_ini(cls, path) -> ClientConfig:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        s = cp["client"]
        base = Path(path).parent

        def rel(v):
            return None if v is None else str(v if Path(v).is_absolute() else base / v)

        return cls(client_id=s["client_id"], level=s["level"], host=s.get("host", "127.0.0.1"),
                   port=s.getint("port", 7878), batch_size=s.getint("batch_size", 256),
                   batch_timeout=s.getfloat("batch_timeout", 5.0),
                   buffer_cap=s.getint("buffer_cap", 10_000),
                   outbox_cap=s.getint("outbox_cap", 10_000),
                   normal_class=s.getint("normal_class", 0),
                   alert_log=rel(s.get("alert_log")), replay=rel(s.get("replay")),
                   schema=s.get("schema"), rate=s.getfloat("rate", 0.0))

    def effective(self) -> dict:
        return dict(vars(self))


@dataclass
class Counters:
    records_in: int = 0
    classified: int = 0
    dropped: int = 0
    rejected: int = 0
    alerts: int = 0
    per_principle: Counter = field(default_factory=Counter)

    def conserved(self, pending: int = 0) -> bool:
        return self.records_in == self.classified + self.dropped + self.rejected + pending


def alert_line(ts: float, client_id: str, principle_id: str, class_name: str,
               score: float) -> str:
    """Tab-separated: timestamp, client_id, principle_id, predicted class, score."""
    return f"{ts:.6f}\t{client_id}\t{principle_id}\t{class_name}\t{score:.17g}"


class ClientCore:
    """One client's processing loop.

    Every method that can produce traffic returns the messages to send; the
    caller owns the transport.  Records arrive in the order of
    ``source_names`` when given (mapped to the principle's feature list by
    name), otherwise they must already be in feature-list order.
    """

    def __init__(self, client_id: str, level: str, *, batch_size: int = 256,
                 batch_timeout: float = 5.0, buffer_cap: int = 10_000, normal_class: int = 0,
                 source_names: Iterable[str] | None = None,
                 alert_sink: TextIO | Callable[[str], None] | None = None):
        if batch_size < 1 or buffer_cap < 0:
            raise ValueError("batch_size must be >= 1 and buffer_cap >= 0")
        self.client_id = client_id
        self.level = level
        self.batch_size = batch_size
        self.batch_timeout = batch_timeout
        self.buffer_cap = buffer_cap
        self.normal_class = normal_class
        self.source_names = None if source_names is None else tuple(source_names)
        self._sink = alert_sink
        self.principle: PrinciplePacket | None = None
        self._columns: np.ndarray | None = None
        self._normal = normal_class
        self._seq = Sequencer()
        self._buffer: deque[tuple[np.ndarray, float, int | None]] = deque()
        self._batch: list[ReportRecord] = []
        self._batch_started: float | None = None
        self.counters = Counters()
        # (predicted, ground truth) per classified record when a label was supplied
        self.outcomes: list[tuple[int, int]] = []
        self.alert_lines: list[str] = []

    # -- messages ---------------------------------------------------------

    def _msg(self, kind: str, payload) -> Message:
        return Message(kind, self.client_id, self._seq(), payload)

    def hello(self) -> Message:
        return self._msg("Hello", Hello(self.level))

    def on_message(self, msg: Message, now: float) -> list[Message]:
        if msg.kind == "PrinciplePush":
            return self._apply(msg.payload, now)
        if msg.kind == "Error":
            logger.warning("%s: server error %s: %s", self.client_id, msg.payload.code,
                           msg.payload.detail)
        return []

    def _apply(self, packet: PrinciplePacket, now: float) -> list[Message]:
        cur = self.principle
        if cur is not None and packet.principle_id == cur.principle_id:
            return [self._msg("PrincipleAck", PrincipleAck(packet.principle_id, True, "current"))]
        if cur is not None and packet.generated_at < cur.generated_at:
            return [self._msg("PrincipleAck",
                              PrincipleAck(packet.principle_id, False, "stale"))]
        try:
            columns = self._column_map(packet)
        except DataError as exc:
            return [self._msg("PrincipleAck", PrincipleAck(packet.principle_id, False, str(exc)))]
        out = self.flush(now)  # reports stay tied to the principle that produced them
        self.principle = packet
        self._columns = columns
        m = packet.model
        self._normal = 1 - m.positive if isinstance(m, BinaryModel) else self.normal_class
        out.append(self._msg("PrincipleAck", PrincipleAck(packet.principle_id, True, "")))
        while self._buffer:
            x, ts, label = self._buffer.popleft()
            out.extend(self._classify(x, ts, label))
        return out

    def _column_map(self, packet: PrinciplePacket) -> np.ndarray | None:
        if self.source_names is None:
            return None
        missing = [n for n in packet.feature_list if n not in self.source_names]
        if missing:
            raise DataError(f"record source lacks principle features {missing}")
        return np.array([self.source_names.index(n) for n in packet.feature_list])

    # -- records ----------------------------------------------------------

    def process(self, record, now: float, label: int | None = None) -> list[Message]:
        """Classify one record (or buffer it while no principle is held)."""
        self.counters.records_in += 1
        x = np.asarray(record, dtype=np.float64).ravel()
        if self.principle is None:
            if len(self._buffer) < self.buffer_cap:
                self._buffer.append((x, now, label))
            else:
                self.counters.dropped += 1
            return []
        return self._classify(x, now, label)

    def _classify(self, x: np.ndarray, now: float, label: int | None) -> list[Message]:
        packet = self.principle
        try:
            if self._columns is not None:
                if x.size != len(self.source_names):
                    raise DataError(f"expected {len(self.source_names)} source values")
                x = x[self._columns]
            pred = predict(packet.model, x)
        except DataError as exc:
            self.counters.rejected += 1
            logger.debug("%s: rejected record: %s", self.client_id, exc)
            return []
        c = self.counters
        c.classified += 1
        c.per_principle[packet.principle_id] += 1
        if label is not None:
            self.outcomes.append((pred.cls, int(label)))
        out = []
        if pred.cls != self._normal:
            c.alerts += 1
            name = packet.model.labels.names[pred.cls]
            line = alert_line(now, self.client_id, packet.principle_id, name, pred.score)
            self.alert_lines.append(line)
            if callable(self._sink):
                self._sink(line)
            elif self._sink is not None:
                self._sink.write(line + "\n")
            out.append(self._msg("Alert", Alert(packet.principle_id, pred.cls, name,
                                                pred.score, now)))
        if self._batch_started is None:
            self._batch_started = now
        self._batch.append(ReportRecord(tuple(float(v) for v in x), pred.cls, pred.score, now))
        if len(self._batch) >= self.batch_size:
            out.extend(self.flush(now))
        return out

    def flush(self, now: float) -> list[Message]:
        if not self._batch or self.principle is None:
            return []
        body = FeatureReportBody(self.principle.principle_id, tuple(self._batch))
        self._batch = []
        self._batch_started = None
        return [self._msg("FeatureReport", body)]

    def poll(self, now: float) -> list[Message]:
        """Time-based report flush."""
        if self._batch_started is not None and now - self._batch_started >= self.batch_timeout:
            return self.flush(now)
        return []

    @property
    def pending(self) -> int:
        return len(self._buffer)

    def close(self, now: float) -> list[Message]:
        """Flush reports; records still waiting for a principle count as dropped."""
        self.counters.dropped += len(self._buffer)
        self._buffer.clear()
        return self.flush(now)


class TCPClient:
    """Run a :class:`ClientCore` against a remote server.

    A receive thread decodes frames into an ordered queue; the caller's
    thread does all processing, so principle swaps land between records.
    Outbound messages are buffered (up to ``outbox_cap``) while disconnected.
    """

    def __init__(self, cfg: ClientConfig, core: ClientCore, clock: Callable[[], float] = time.time):
        self.cfg = cfg
        self.core = core
        self.clock = clock
        self._sock: socket.socket | None = None
        self._inbox: queue.Queue = queue.Queue()
        self._outbox: deque[Message] = deque(maxlen=cfg.outbox_cap)
        self._backoff = cfg.backoff_initial
        self._next_attempt = 0.0
        self._rx: threading.Thread | None = None
        self.lost_messages = 0

    def connect(self) -> bool:
        if self._sock is not None:
            return True
        now = time.monotonic()
        if now < self._next_attempt:
            return False
        try:
            sock = socket.create_connection((self.cfg.host, self.cfg.port), timeout=5)
        except OSError as exc:
            logger.info("%s: connect failed (%s); retry in %.1fs", self.cfg.client_id, exc,
                        self._backoff)
            self._next_attempt = now + self._backoff
            self._backoff = min(self._backoff * 2, self.cfg.backoff_max)
            return False
        sock.settimeout(None)
        self._sock = sock
        self._backoff = self.cfg.backoff_initial
        self._rx = threading.Thread(target=self._receive, args=(sock,), daemon=True)
        self._rx.start()
        self._outbox.appendleft(self.core.hello())
        self._drain()
        return True

    def _receive(self, sock: socket.socket) -> None:
        decoder = FrameDecoder()
        while True:
            try:
                data = sock.recv(65536)
            except OSError:
                data = b""
            if not data:
                self._inbox.put(None)
                return
            try:
                for msg in decoder.feed(data):
                    self._inbox.put(msg)
            except ProtocolError as exc:
                logger.warning("%s: bad frame from server: %s", self.cfg.client_id, exc)

    def _disconnect(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None

    def send(self, msgs: Iterable[Message]) -> None:
        for m in msgs:
            if len(self._outbox) == self._outbox.maxlen:
                self.lost_messages += 1
            self._outbox.append(m)
        self._drain()

    def _drain(self) -> None:
        while self._outbox and self._sock is not None:
            try:
                self._sock.sendall(encode(self._outbox[0]))
            except OSError as exc:
                logger.warning("%s: send failed: %s", self.cfg.client_id, exc)
                self._disconnect()
                return
            self._outbox.popleft()

    def pump(self, timeout: float = 0.0) -> None:
        """Apply queued server messages, reconnecting if needed."""
        self.connect()
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            try:
                msg = self._inbox.get(timeout=remaining) if remaining > 0 else self._inbox.get_nowait()
            except queue.Empty:
                break
            if msg is None:
                self._disconnect()
                continue
            self.send(self.core.on_message(msg, self.clock()))
        self.send(self.core.poll(self.clock()))

    def run(self, records: Iterable, *, wait_for_principle: float = 10.0) -> Counters:
        """Replay ``records`` (rows or ``(row, label)`` pairs) then shut down."""
        start = time.monotonic()
        while self.core.principle is None and time.monotonic() - start < wait_for_principle:
            self.pump(timeout=0.1)
        for i, rec in enumerate(records):
            row, label = rec if isinstance(rec, tuple) else (rec, None)
            self.pump()
            self.send(self.core.process(row, self.clock(), label))
            if self.cfg.rate > 0:
                time.sleep(max(0.0, start + (i + 1) / self.cfg.rate - time.monotonic()))
        self.send(self.core.close(self.clock()))
        self._disconnect()
        return self.core.counters
