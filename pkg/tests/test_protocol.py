import struct

import numpy as np
import pytest
from factories import random_message, random_model
from hypothesis import given
from hypothesis import strategies as st
from oracles import HEARTBEAT_BODY

from hoids.data import LabelSpace, StandardizationRecipe
from hoids.model import BinaryModel, MultiModel, predict
from hoids.protocol import (MAX_FRAME, FrameDecoder, FrameTooLarge, Heartbeat, Hello,
                            IncompleteFrame, Message, PrinciplePacket, ProtocolError,
                            Sequencer, UnsupportedVersion, decode, decode_frame, encode,
                            encode_all, error_reply)


def frame(body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + body


def test_heartbeat_bytes_are_frozen():
    data = encode(Message("Heartbeat", "c1", 1, Heartbeat(0.0)))
    assert data == frame(HEARTBEAT_BODY)
    assert data[:4] == bytes([0, 0, 0, len(HEARTBEAT_BODY)])


@given(st.integers(0, 2**32 - 1))
def test_roundtrip_identity(seed):
    msg = random_message(np.random.default_rng(seed))
    data = encode(msg)
    back = decode(data)
    assert back == msg
    assert encode(back) == data


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 10_000), max_size=12))
def test_reassembly_ignores_split_points(seed, cuts):
    rng = np.random.default_rng(seed)
    msgs = [random_message(rng, seq=i) for i in range(5)]
    stream = encode_all(msgs)
    points = sorted({c % (len(stream) + 1) for c in cuts})
    dec, got, prev = FrameDecoder(), [], 0
    for p in points + [len(stream)]:
        got += dec.feed(stream[prev:p])
        prev = p
    assert got == msgs and dec.pending == 0


def test_extreme_weights_roundtrip_and_subnormals_rejected():
    recipe = StandardizationRecipe.identity(["a", "b"])
    labels = LabelSpace(("normal", "abnormal"), positive=1)
    m = BinaryModel(recipe, labels, None, np.array([1e300, -1e300, 1e-300]))
    msg = Message("PrinciplePush", "s", 3, PrinciplePacket(m, ["a", "b"], 1.5, "x-00001"))
    assert decode(encode(msg)).payload.model == m
    bad = BinaryModel(recipe, labels, None, np.array([0.0, 5e-324, 1.0]))
    with pytest.raises(ProtocolError, match="subnormal"):
        encode(Message("PrinciplePush", "s", 3, PrinciplePacket(bad, ["a", "b"], 0.0, "y")))


class TestErrors:
    def test_declared_length_over_cap(self):
        with pytest.raises(FrameTooLarge):
            decode_frame(struct.pack(">I", MAX_FRAME + 1) + b"{}")

    def test_encoded_body_over_cap(self):
        from hoids.protocol import FeatureReportBody, ReportRecord
        rec = ReportRecord(tuple([1.2345678901234567] * 1000), 0, 0.0, 0.0)
        body = FeatureReportBody("p", tuple([rec] * 1000))
        with pytest.raises(FrameTooLarge):
            encode(Message("FeatureReport", "c", 1, body))

    def test_incomplete(self):
        data = encode(Message("Hello", "c", 1, Hello("field")))
        for cut in (0, 3, 4, len(data) - 1):
            with pytest.raises(IncompleteFrame):
                decode_frame(data[:cut])

    def test_version(self):
        body = HEARTBEAT_BODY.replace(b'"version":1', b'"version":99')
        with pytest.raises(UnsupportedVersion) as info:
            decode(frame(body))
        reply = error_reply(info.value, "srv", 7)
        assert reply.payload.code == "UnsupportedVersion" and reply.payload.supported_version == 1

    @pytest.mark.parametrize("body", [
        b'{"client_id":"c1","kind":"Heartbeat","payload":{"timestamp":0.0},"sequence":1,'
        b'"version":1,"extra":2}',
        b'{"client_id":"c1","kind":"Heartbeat","payload":{"timestamp":0.0,"x":1},"sequence":1,'
        b'"version":1}',
        b'{"client_id":"c1","kind":"Nope","payload":{},"sequence":1,"version":1}',
        b'{"client_id":"c1","kind":"Heartbeat","payload":{"timestamp":0.0},"sequence":true,'
        b'"version":1}',
        b'{"client_id":"c1","kind":"PrincipleAck","payload":{"principle_id":"p","applied":1,'
        b'"reason":""},"sequence":1,"version":1}',
        b'not json',
        b'[1,2]',
    ])
    def test_malformed(self, body):
        with pytest.raises(ProtocolError):
            decode(frame(body))

    def test_trailing_bytes(self):
        with pytest.raises(ProtocolError, match="trailing"):
            decode(frame(HEARTBEAT_BODY) + b"x")

    def test_decoder_skips_bad_frame(self):
        good = encode(Message("Hello", "c", 2, Hello("field")))
        dec = FrameDecoder()
        with pytest.raises(ProtocolError):
            dec.feed(frame(b"garbage") + good)
        assert dec.feed(b"") == [decode(good)]

    def test_payload_type_checked(self):
        with pytest.raises(ProtocolError):
            Message("Hello", "c", 1, Heartbeat())
        with pytest.raises(ProtocolError):
            Message("Hello", "c", -1, Hello("x"))

    def test_feature_list_must_match_model(self):
        m = random_model(np.random.default_rng(0), m=3)
        with pytest.raises(ProtocolError):
            PrinciplePacket(m, ["a"], 0.0, "p")


def test_sequencer():
    s = Sequencer()
    assert [s(), s(), s()] == [1, 2, 3]


@given(st.integers(0, 2**32 - 1))
def test_predictions_bit_identical_through_the_wire(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    msg = Message("PrinciplePush", "s", 1, PrinciplePacket(m, m.feature_names, 0.0, "p"))
    wired = decode(encode(msg)).payload.model
    X = rng.normal(0, 3, (20, m.n_inputs))
    for x in X:
        a, b = predict(m, x), predict(wired, x)
        assert a.cls == b.cls and a.score == b.score
        assert np.array_equal(a.probabilities, b.probabilities)
    if isinstance(m, MultiModel):
        assert np.array_equal(m.logits(X), wired.logits(X))
