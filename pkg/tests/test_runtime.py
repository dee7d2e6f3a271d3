import io
import time

import numpy as np
import pytest
from factories import blobs, ics_scenario

from hoids.data import Dataset
from hoids.evaluation import confusion
from hoids.model import BinaryModel, MultiModel, train_multi
from hoids.optimizer import QNConfig
from hoids.protocol import Message, PrincipleAck, decode, encode
from hoids.runtime import (ClientConfig, ClientCore, ClientSpec, LevelConfig, Scenario,
                           ServerConfig, ServerCore, TCPClient, alert_line, serve, simulate)
from hoids.runtime.pipeline import Pipeline, build_principle


@pytest.fixture(scope="module")
def data():
    return blobs(np.random.default_rng(7))


def config(pipeline="full+multi", **kw):
    lv = {k: kw.pop(k) for k in ("push_period", "retrain_period") if k in kw}
    return ServerConfig(levels={"field": LevelConfig(pipeline, **lv)}, max_iters=100, **kw)


def wire(msgs):
    """Pass messages through the codec like a real transport would."""
    return [decode(encode(m)) for m in msgs]


class TestPipeline:
    def test_parse(self):
        assert Pipeline.parse("ig:4+multi") == Pipeline("ig", 4, "multi")
        assert str(Pipeline.parse("pca:0.95+binary")) == "pca:0.95+binary"
        for bad in ("full", "ig+multi", "pca:1.5+multi", "full+svm", "xyz:1+multi"):
            with pytest.raises(ValueError):
                Pipeline.parse(bad)

    def test_binary_pipeline_maps_to_normal_abnormal(self, data):
        p = build_principle(data, "full+binary", principle_id="x", generated_at=0.0)
        assert isinstance(p.model, BinaryModel)
        assert p.model.labels.names == ("normal", "abnormal")


class TestServer:
    def test_ig_pipeline_first_push(self, ics):
        core = ServerCore(config("ig:4+multi"), {"field": ics}, clock=lambda: 0.0)
        core.connect("a")
        [(target, push)] = core.handle("a", Message("Hello", "cl", 1,
                                                    ClientCore("cl", "field").hello().payload))
        assert target == "a" and push.kind == "PrinciplePush"
        model = push.payload.model
        assert isinstance(model, MultiModel) and model.n_inputs == 4
        assert len(push.payload.feature_list) == 4
        assert push.payload.principle_id == "field-00001"

    def test_unknown_level(self, data):
        core = ServerCore(config(), {"field": data}, clock=lambda: 0.0)
        [(_, err)] = core.handle("a", ClientCore("cl", "moon").hello())
        assert err.kind == "Error" and err.payload.code == "UnknownLevel"

    def test_failed_retrain_keeps_principle(self, data):
        core = ServerCore(config(), {"field": data}, clock=lambda: 0.0)
        before = core.active("field")
        one_class = Dataset(data.X[data.y == 0], data.y[data.y == 0], data.columns, data.labels)
        assert core.retrain("field", one_class) is None
        assert core.active("field") is before and core.retrain_failures == 1
        assert core.audit[-1]["event"] == "retrain-failed"

    def test_push_with_no_clients_is_a_noop(self, data):
        core = ServerCore(config(push_period=1.0), {"field": data}, clock=lambda: 0.0)
        assert core.tick(5.0) == [] and core.tick(10.0) == []

    def test_periodic_push_and_retrain(self, data):
        t = [0.0]
        core = ServerCore(config(push_period=10.0, retrain_period=25.0), {"field": data},
                          clock=lambda: t[0])
        core.handle("a", ClientCore("cl", "field").hello())
        pushes = []
        for step in range(1, 31):
            t[0] = float(step)
            pushes += core.tick(t[0])
        assert len(pushes) == 3 and core.retrains == 2
        assert pushes[-1][1].payload.principle_id == "field-00002"

    def test_store_cap(self, data):
        core = ServerCore(config(store_cap=5), {"field": data}, clock=lambda: 0.0)
        core.add_labeled("field", data.subset(np.arange(12)))
        assert core.store_size("field") == 5

    def test_weak_labels_excluded_by_default(self, data):
        core = ServerCore(config(), {"field": data}, clock=lambda: 0.0)
        client = ClientCore("cl", "field")
        for m in wire([client.hello()]):
            for _, push in core.handle("a", m):
                client.on_message(push, 0.0)
        msgs = [m for x in data.X[:10] for m in client.process(x, 0.0)] + client.flush(0.0)
        for m in wire(msgs):
            core.handle("a", m)
        assert core.store_size("field") == 10
        assert core._training_set("field").n == data.n
        core.cfg.weak_labels = True
        assert core._training_set("field").n == data.n + 10

    def test_restart_restores_principle(self, data, tmp_path):
        cfg = config(state_dir=str(tmp_path))
        first = ServerCore(cfg, {"field": data}, clock=lambda: 0.0).active("field")
        second = ServerCore(cfg, {"field": data}, clock=lambda: 1.0)
        assert second.active("field").principle_id == first.principle_id
        assert second.active("field").model == first.model and second.retrains == 0
        assert second.retrain("field").principle_id == "field-00002"
        log = (tmp_path / "audit.log").read_text().splitlines()
        assert any('"restored"' in line for line in log)

    def test_missing_bootstrap(self, data):
        with pytest.raises(ValueError):
            ServerCore(config(), {}, clock=lambda: 0.0)


def packet(data, pid, at, pipeline="full+multi"):
    return build_principle(data, pipeline, principle_id=pid, generated_at=at)


def push(p):
    return Message("PrinciplePush", "srv", 1, p)


class TestClient:
    def test_buffers_until_principle(self, data):
        c = ClientCore("c", "field", buffer_cap=5)
        for x in data.X[:8]:
            assert c.process(x, 0.0) == []
        assert c.pending == 5 and c.counters.dropped == 3
        out = c.on_message(push(packet(data, "p1", 1.0)), 1.0)
        assert out[0].kind == "PrincipleAck" and out[0].payload.applied
        assert c.pending == 0 and c.counters.classified == 5
        assert c.counters.conserved()

    def test_stale_and_repeated_principles(self, data):
        c = ClientCore("c", "field")
        c.on_message(push(packet(data, "p2", 5.0)), 0.0)
        [ack] = c.on_message(push(packet(data, "p1", 1.0)), 0.0)
        assert ack.payload == PrincipleAck("p1", False, "stale")
        [ack] = c.on_message(push(packet(data, "p2", 5.0)), 0.0)
        assert ack.payload.applied and ack.payload.reason == "current"
        assert c.principle.principle_id == "p2"

    def test_missing_columns_are_refused(self, data):
        c = ClientCore("c", "field", source_names=["other"])
        [ack] = c.on_message(push(packet(data, "p1", 0.0)), 0.0)
        assert not ack.payload.applied and c.principle is None

    def test_swap_conserves_records(self, data):
        c = ClientCore("c", "field", batch_size=7, source_names=data.names)
        c.on_message(push(packet(data, "p1", 0.0)), 0.0)
        reports = []
        for i, x in enumerate(data.X):
            if i == 100:
                out = c.on_message(push(packet(data, "p2", 1.0, "ig:2+multi")), 1.0)
                reports += [m for m in out if m.kind == "FeatureReport"]
            reports += [m for m in c.process(x, float(i)) if m.kind == "FeatureReport"]
        reports += c.close(999.0)
        counts = c.counters
        assert counts.conserved() and counts.classified == data.n
        assert dict(counts.per_principle) == {"p1": 100, "p2": data.n - 100}
        per = {"p1": 0, "p2": 0}
        for r in reports:
            per[r.payload.principle_id] += len(r.payload.records)
        assert per == dict(counts.per_principle)

    def test_bad_records_are_rejected(self, data):
        c = ClientCore("c", "field")
        c.on_message(push(packet(data, "p1", 0.0)), 0.0)
        c.process([np.nan] * data.m, 0.0)
        c.process([1.0], 0.0)
        assert c.counters.rejected == 2 and c.counters.conserved()

    def test_matches_offline_predictions(self, data):
        sink = io.StringIO()
        p = packet(data, "p1", 0.0)
        c = ClientCore("c", "field", alert_sink=sink)
        c.on_message(push(p), 0.0)
        for x, y in zip(data.X, data.y):
            c.process(x, 0.0, int(y))
        offline = p.model.predict(data.X)
        assert [a for a, _ in c.outcomes] == offline.tolist()
        assert c.counters.alerts == int((offline != 0).sum())
        assert len(sink.getvalue().splitlines()) == c.counters.alerts

    def test_time_flush(self, data):
        c = ClientCore("c", "field", batch_timeout=2.0)
        c.on_message(push(packet(data, "p1", 0.0)), 0.0)
        c.process(data.X[0], 0.0)
        assert c.poll(1.0) == []
        [rep] = c.poll(2.5)
        assert rep.kind == "FeatureReport" and len(rep.payload.records) == 1


def test_alert_line_format():
    line = alert_line(1.5, "c1", "field-00001", "dos", 0.1)
    assert line.split("\t") == ["1.500000", "c1", "field-00001", "dos", "0.10000000000000001"]


class TestSimulation:
    def test_aggregate_matches_offline(self, data):
        sc = ics_scenario(data, n_clients=3, records_per_tick=37)
        sc.server.max_iters = 100
        rep = simulate(sc)
        assert rep.retrains == 1
        pushes = [e for e in rep.timeline if e[1] == "push"]
        assert len(pushes) == 3
        model = train_multi(data, QNConfig(max_iters=100))[0]
        expected = confusion(data.y, model.predict(data.X), data.labels)
        assert rep.aggregate["control-centre"] == expected

    def test_zero_length_replay(self, data):
        sc = Scenario(config(), {"field": data},
                      [ClientSpec("idle", "field", data.subset(np.arange(0)))])
        rep = simulate(sc)
        assert rep.ticks == 0 and rep.clients["idle"].records_in == 0
        assert rep.clients["idle"].pushes == 1

    def test_report_serializes(self, data):
        sc = ics_scenario(data, n_clients=2)
        sc.server.max_iters = 50
        rep = simulate(sc)
        assert '"aggregate"' in rep.to_text() and "retrains: 1" in rep.summary()


def test_tcp_roundtrip(data):
    cfg = config(port=0)
    handle = serve(cfg, {"field": data}, tick_interval=0.05, block=False)
    try:
        host, port = handle.address
        core = ClientCore("tcp1", "field", batch_size=50)
        client = TCPClient(ClientConfig("tcp1", "field", host=host, port=port), core)
        counters = client.run([(x, int(y)) for x, y in zip(data.X, data.y)],
                              wait_for_principle=10.0)
        assert counters.classified == data.n and counters.conserved()
        deadline = time.monotonic() + 5
        while handle.core.store_size("field") < data.n and time.monotonic() < deadline:
            time.sleep(0.05)
        assert handle.core.store_size("field") == data.n
        assert len(handle.core.alerts) == counters.alerts
    finally:
        handle.stop()
