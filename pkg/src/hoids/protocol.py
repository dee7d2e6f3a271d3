"""Wire messages between the IDS server and its clients.

A frame is a 4-byte big-endian unsigned length ``N`` followed by ``N``
bytes of UTF-8 canonical JSON (sorted keys, 17-significant-digit floats).
See PROTOCOL.md for the field layout of every message kind.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable

from . import _textcodec
from .model import Model, model_from_payload, model_to_payload

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
HEADER = struct.Struct(">I")

KINDS = ("Hello", "PrinciplePush", "PrincipleAck", "FeatureReport", "Alert", "Heartbeat", "Error")


class ProtocolError(ValueError):
    pass


class IncompleteFrame(ProtocolError):
    """Not enough bytes buffered yet; keep the buffer and read more."""


class UnsupportedVersion(ProtocolError):
    def __init__(self, got, supported=PROTOCOL_VERSION):
        super().__init__(f"unsupported protocol version {got}; this end speaks {supported}")
        self.got = got
        self.supported = supported


class FrameTooLarge(ProtocolError):
    pass


# ---------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class PrinciplePacket:
    model: Model
    feature_list: tuple[str, ...]
    generated_at: float
    principle_id: str
    level: str = ""

    def __post_init__(self):
        object.__setattr__(self, "feature_list", tuple(self.feature_list))
        if len(self.feature_list) != self.model.n_inputs:
            raise ProtocolError(f"feature list has {len(self.feature_list)} names, "
                                f"model expects {self.model.n_inputs} inputs")

    def to_payload(self) -> dict:
        return {"model": model_to_payload(self.model), "feature_list": list(self.feature_list),
                "generated_at": float(self.generated_at), "principle_id": self.principle_id,
                "level": self.level}

    @classmethod
    def from_payload(cls, d) -> PrinciplePacket:
        return cls(model_from_payload(d["model"]), tuple(d["feature_list"]),
                   float(d["generated_at"]), str(d["principle_id"]), str(d.get("level", "")))


@dataclass(frozen=True)
class ReportRecord:
    features: tuple[float, ...]
    predicted: int
    score: float
    timestamp: float


@dataclass(frozen=True)
class FeatureReportBody:
    principle_id: str
    records: tuple[ReportRecord, ...] = ()

    def to_payload(self) -> dict:
        return {"principle_id": self.principle_id,
                "records": [{"features": [float(v) for v in r.features],
                             "predicted": int(r.predicted), "score": float(r.score),
                             "timestamp": float(r.timestamp)} for r in self.records]}

    @classmethod
    def from_payload(cls, d) -> FeatureReportBody:
        recs = tuple(ReportRecord(tuple(float(v) for v in r["features"]), int(r["predicted"]),
                                  float(r["score"]), float(r["timestamp"]))
                     for r in d["records"])
        return cls(str(d["principle_id"]), recs)


@dataclass(frozen=True)
class Hello:
    level: str


@dataclass(frozen=True)
class PrincipleAck:
    principle_id: str
    applied: bool
    reason: str = ""


@dataclass(frozen=True)
class Alert:
    principle_id: str
    predicted: int
    class_name: str
    score: float
    timestamp: float


@dataclass(frozen=True)
class Heartbeat:
    timestamp: float = 0.0


@dataclass(frozen=True)
class ErrorBody:
    code: str
    detail: str = ""
    supported_version: int = PROTOCOL_VERSION


_PLAIN = {
    "Hello": (Hello, {"level": str}),
    "PrincipleAck": (PrincipleAck, {"principle_id": str, "applied": bool, "reason": str}),
    "Alert": (Alert, {"principle_id": str, "predicted": int, "class_name": str,
                      "score": float, "timestamp": float}),
    "Heartbeat": (Heartbeat, {"timestamp": float}),
    "Error": (ErrorBody, {"code": str, "detail": str, "supported_version": int}),
}
_BODY_TYPE = {"PrinciplePush": PrinciplePacket, "FeatureReport": FeatureReportBody,
              **{k: v[0] for k, v in _PLAIN.items()}}


@dataclass(frozen=True)
class Message:
    kind: str
    client_id: str
    sequence: int
    payload: object = field(default=None)
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown message kind {self.kind!r}")
        expected = _BODY_TYPE[self.kind]
        if not isinstance(self.payload, expected):
            raise ProtocolError(f"{self.kind} needs a {expected.__name__} payload, "
                                f"got {type(self.payload).__name__}")
        if self.sequence < 0:
            raise ProtocolError("sequence numbers are non-negative")


def _payload_to_dict(kind: str, body) -> dict:
    if kind in ("PrinciplePush", "FeatureReport"):
        return body.to_payload()
    _, fields = _PLAIN[kind]
    return {name: getattr(body, name) for name in fields}


def _payload_from_dict(kind: str, d) -> object:
    if not isinstance(d, dict):
        raise ProtocolError("payload must be an object")
    if kind == "PrinciplePush":
        return PrinciplePacket.from_payload(d)
    if kind == "FeatureReport":
        return FeatureReportBody.from_payload(d)
    cls, fields = _PLAIN[kind]
    extra = set(d) - set(fields)
    if extra:
        raise ProtocolError(f"unknown {kind} fields: {sorted(extra)}")
    args = {}
    for name, typ in fields.items():
        if name not in d:
            raise ProtocolError(f"{kind} is missing field {name!r}")
        v = d[name]
        if typ is bool and not isinstance(v, bool):
            raise ProtocolError(f"{kind}.{name} must be a boolean")
        if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ProtocolError(f"{kind}.{name} must be an integer")
        args[name] = typ(v)
    return cls(**args)


# ---------------------------------------------------------------------------
# framing


def encode(msg: Message) -> bytes:
    doc = {"version": msg.version, "kind": msg.kind, "client_id": msg.client_id,
           "sequence": msg.sequence, "payload": _payload_to_dict(msg.kind, msg.payload)}
    try:
        body = _textcodec.dumps(doc).encode("utf-8")
    except _textcodec.EncodingError as exc:
        raise ProtocolError(f"cannot encode {msg.kind}: {exc}") from exc
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame body of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[Message, int]:
    """Decode the first frame in ``buf``; returns the message and bytes consumed."""
    if len(buf) < HEADER.size:
        raise IncompleteFrame("incomplete frame: length prefix not yet received")
    (n,) = HEADER.unpack_from(buf, 0)
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
    if len(buf) < HEADER.size + n:
        raise IncompleteFrame(f"incomplete frame: have {len(buf) - HEADER.size} of {n} bytes")
    raw = bytes(buf[HEADER.size:HEADER.size + n])
    return _decode_body(raw), HEADER.size + n


def decode(data: bytes) -> Message:
    msg, used = decode_frame(data)
    if used != len(data):
        raise ProtocolError(f"{len(data) - used} trailing bytes after frame")
    return msg


def _decode_body(raw: bytes) -> Message:
    try:
        doc = _textcodec.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"malformed frame body: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProtocolError("frame body must be an object")
    version = doc.get("version")
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersion(version)
    extra = set(doc) - {"version", "kind", "client_id", "sequence", "payload"}
    if extra:
        raise ProtocolError(f"unknown message fields: {sorted(extra)}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    seq = doc.get("sequence")
    if isinstance(seq, bool) or not isinstance(seq, int):
        raise ProtocolError("sequence must be an integer")
    client_id = doc.get("client_id")
    if not isinstance(client_id, str):
        raise ProtocolError("client_id must be a string")
    try:
        payload = _payload_from_dict(kind, doc.get("payload"))
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed {kind} payload: {exc}") from exc
    return Message(kind, client_id, seq, payload, version)


class FrameDecoder:
    """Incremental decoder for a byte stream cut at arbitrary points."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        while True:
            try:
                msg, used = decode_frame(self._buf)
            except IncompleteFrame:
                break
            except ProtocolError:
                # drop the offending frame so the stream can continue
                if len(self._buf) >= HEADER.size:
                    (n,) = HEADER.unpack_from(self._buf, 0)
                    if n <= MAX_FRAME:
                        del self._buf[:HEADER.size + n]
                    else:
                        self._buf.clear()
                raise
            del self._buf[:used]
            out.append(msg)
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def error_reply(exc: ProtocolError, client_id: str, sequence: int) -> Message:
    code = "UnsupportedVersion" if isinstance(exc, UnsupportedVersion) else "MalformedFrame"
    return Message("Error", client_id, sequence, ErrorBody(code, str(exc), PROTOCOL_VERSION))


class Sequencer:
    """Per-sender monotonically increasing sequence numbers."""

    def __init__(self, start: int = 1):
        self._next = start

    def __call__(self) -> int:
        n = self._next
        self._next += 1
        return n


def encode_all(messages: Iterable[Message]) -> bytes:
    return b"".join(encode(m) for m in messages)


__all__ = ["Alert", "ErrorBody", "FeatureReportBody", "FrameDecoder", "FrameTooLarge",
           "Heartbeat", "Hello", "IncompleteFrame", "KINDS", "MAX_FRAME", "Message",
           "PROTOCOL_VERSION", "PrincipleAck", "PrinciplePacket", "ProtocolError", "ReportRecord",
           "Sequencer", "UnsupportedVersion", "decode", "decode_frame", "encode", "encode_all",
           "error_reply"]
