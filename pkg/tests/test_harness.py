import json
import random
import socketserver
import threading

import pytest

from modelfuzz.codecs import EncodedMessage, MqttPacketParams, encode_mqtt
from modelfuzz.harness import (
    CONNECTION_RESET,
    RESPONSE_RECEIVED,
    TARGET_DOWN,
    TIMEOUT,
    CaseStore,
    ConfigurationError,
    CorruptRecordError,
    Endpoint,
    Outcome,
    StoredCase,
    TargetMonitor,
    TimeoutPolicy,
    UnknownCaseError,
    probe_liveness,
    replay_case,
    run_sequence,
)
from modelfuzz.testbed import Testbed, free_port


def mqtt(state, **kw):
    return encode_mqtt(MqttPacketParams(state, **kw), random.Random(0))


@pytest.mark.parametrize("text, host, port", [("127.0.0.1:1883", "127.0.0.1", 1883), ("[::1]:502", "::1", 502)])
def test_endpoint_parse(text, host, port):
    assert Endpoint.parse(text) == Endpoint(host, port)


@pytest.mark.parametrize("text", ["localhost", ":80", "host:0", "host:99999", "host:http"])
def test_endpoint_parse_errors(text):
    with pytest.raises(ConfigurationError):
        Endpoint.parse(text)


def test_unresolvable_host_is_a_configuration_error(fast_policy):
    ep = Endpoint("no-such-host.invalid", 1883)
    with pytest.raises(ConfigurationError):
        ep.resolve()
    with pytest.raises(ConfigurationError):
        probe_liveness(ep, fast_policy)
    with pytest.raises(ConfigurationError):
        run_sequence(ep, [mqtt("PINGREQ")], fast_policy)


def test_outcome_invariants():
    with pytest.raises(ValueError):
        Outcome("Exploded")
    with pytest.raises(ValueError):
        Outcome(TIMEOUT, b"x")
    with pytest.raises(ValueError):
        Outcome(RESPONSE_RECEIVED)
    assert Outcome(RESPONSE_RECEIVED, b"\x20").first_byte == 0x20


def test_echo_round_trip(echo_endpoint, fast_policy):
    msgs = [EncodedMessage("A", b"hello"), EncodedMessage("B", b"world")]
    out = run_sequence(echo_endpoint, msgs, fast_policy, sequence_id=9)
    assert out.sequence_id == 9
    assert [(s, o.cls, o.response) for s, o in out.results] == [
        ("A", RESPONSE_RECEIVED, b"hello"),
        ("B", RESPONSE_RECEIVED, b"world"),
    ]
    assert not out.crashed
    assert out.summary() == {"classes": [RESPONSE_RECEIVED] * 2, "first_bytes": [ord("h"), ord("w")], "crashed": False}


def test_silent_target_times_out():
    with Testbed("mqtt", bugs=frozenset()) as tb:
        policy = TimeoutPolicy(read_s=0.05)
        out = run_sequence(Endpoint.parse(tb.endpoint), [mqtt("CONNECT"), mqtt("PUBLISH", qos=0)], policy)
    assert [o.cls for _, o in out.results] == [RESPONSE_RECEIVED, TIMEOUT]
    assert out.results[0][1].response == b"\x20\x02\x00\x00"


def test_closed_connection_aborts_sequence(fast_policy):
    with Testbed("mqtt", bugs=frozenset()) as tb:
        # PUBLISH before CONNECT: the broker hangs up, nothing further is sent
        msgs = [mqtt("PUBLISH"), mqtt("CONNECT"), mqtt("PINGREQ")]
        out = run_sequence(Endpoint.parse(tb.endpoint), msgs, fast_policy)
        assert [o.cls for _, o in out.results] == [CONNECTION_RESET]
        assert not out.crashed
        assert tb.restarts == 0


def test_nothing_listening(fast_policy):
    ep = Endpoint("127.0.0.1", free_port())
    assert not probe_liveness(ep, fast_policy)
    out = run_sequence(ep, [mqtt("CONNECT"), mqtt("PINGREQ")], fast_policy)
    assert [(s, o.cls) for s, o in out.results] == [("CONNECT", TARGET_DOWN)]
    assert out.crashed


def test_crash_is_detected(fast_policy):
    with Testbed("mqtt", restart_delay_s=1.0) as tb:
        out = run_sequence(Endpoint.parse(tb.endpoint), [mqtt("PINGREQ")], fast_policy, settle_s=0.05)
        assert out.crashed
        assert out.results[0][1].cls == CONNECTION_RESET
        assert tb.wait_ready(10)
        assert tb.bugs_seen() == {"B1"}


def test_probe_budget_outlasts_a_quick_restart():
    patient = TimeoutPolicy(connect_s=0.5, read_s=0.05, probe_retries=20, probe_backoff_s=0.25)
    with Testbed("mqtt", restart_delay_s=0.05) as tb:
        out = run_sequence(Endpoint.parse(tb.endpoint), [mqtt("PINGREQ")], patient, settle_s=0.05)
        # the target died and came back inside the probe budget
        assert not out.crashed
        assert tb.bugs_seen() == {"B1"}


def test_monitor_declares_dead_target(fast_policy):
    ep = Endpoint("127.0.0.1", free_port())
    mon = TargetMonitor(ep, fast_policy, recovery_wait_s=0.2)
    assert mon.gate()
    assert not mon.report_crash(wait_for_recovery=True)
    assert mon.dead
    assert not mon.gate()


def test_monitor_blocks_workers_during_recovery(fast_policy):
    with Testbed("mqtt", restart_delay_s=0.3) as tb:
        ep = Endpoint.parse(tb.endpoint)
        mon = TargetMonitor(ep, fast_policy, recovery_wait_s=10)
        run_sequence(ep, [mqtt("PINGREQ")], fast_policy, probe=False)
        gates = []
        waiter = threading.Thread(target=lambda: gates.append(mon.gate()))
        with mon._cond:
            mon._down = True
        waiter.start()
        waiter.join(0.1)
        assert waiter.is_alive()
        with mon._cond:
            mon._down = False
        assert mon.report_crash(wait_for_recovery=True)
        waiter.join(5)
        assert gates == [True]
        assert probe_liveness(ep, fast_policy)


def case(i, **kw):
    return StoredCase(i, 100 + i, ["CONNECT", "PINGREQ"], [b"\x10\x00", b"\xc0\x00"], {"crashed": False}, **kw)


def test_case_store_round_trip(tmp_path):
    path = tmp_path / "out" / "cases.jsonl"
    with CaseStore(path) as store:
        for i in range(5):
            store.append(case(i, timestamp=1.5))
        store.sync()
    store = CaseStore(path)
    assert [c.id for c in store] == list(range(5))
    got = store.get(3)
    assert got == case(3, timestamp=1.5)
    assert [m.bytes for m in got.encoded()] == [b"\x10\x00", b"\xc0\x00"]


def test_case_store_unknown_id(tmp_path):
    store = CaseStore(tmp_path / "cases.jsonl")
    with pytest.raises(UnknownCaseError):
        store.get(1)
    store.append(case(0))
    store.close()
    with pytest.raises(UnknownCaseError):
        store.get(1)


def test_case_store_detects_tampering(tmp_path):
    path = tmp_path / "cases.jsonl"
    with CaseStore(path) as store:
        store.append(case(0))
    record = json.loads(path.read_text())
    record["messages"][1] = "d000"
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(CorruptRecordError):
        CaseStore(path).get(0)


def test_concurrent_appends_are_whole_lines(tmp_path):
    path = tmp_path / "cases.jsonl"
    store = CaseStore(path)
    threads = [threading.Thread(target=lambda k=k: [store.append(case(k * 100 + i)) for i in range(50)]) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    store.close()
    assert sorted(c.id for c in CaseStore(path)) == sorted(k * 100 + i for k in range(4) for i in range(50))


def test_replay_sends_stored_bytes(tmp_path, echo_endpoint, fast_policy):
    store = CaseStore(tmp_path / "cases.jsonl")
    store.append(StoredCase(4, 1, ["A", "B"], [b"\x01\x02", b"\xff"], {}))
    store.close()
    out = replay_case(store, 4, echo_endpoint, fast_policy)
    assert out.sequence_id == 4
    assert [o.response for _, o in out.results] == [b"\x01\x02", b"\xff"]


def test_replay_reproduces_crash(tmp_path, fast_policy):
    store = CaseStore(tmp_path / "cases.jsonl")
    store.append(StoredCase(0, 1, ["PINGREQ"], [mqtt("PINGREQ").bytes], {}))
    store.close()
    with Testbed("mqtt", restart_delay_s=1.0) as tb:
        assert replay_case(store, 0, Endpoint.parse(tb.endpoint), fast_policy).crashed
        assert tb.bugs_seen() == {"B1"}


class _HangUpAfterTwo(socketserver.BaseRequestHandler):
    def handle(self):
        for _ in range(2):
            data = self.request.recv(1024)
            if not data:
                return
            self.request.sendall(b"ok")


def test_target_closing_after_second_message(fast_policy):
    server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), _HangUpAfterTwo)
    server.daemon_threads = True
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        ep = Endpoint(*server.server_address)
        msgs = [EncodedMessage(f"M{i}", b"x") for i in range(5)]
        out = run_sequence(ep, msgs, fast_policy)
    finally:
        server.shutdown()
        server.server_close()
    assert [o.cls for _, o in out.results] == [RESPONSE_RECEIVED, RESPONSE_RECEIVED, CONNECTION_RESET]
    assert not out.crashed
