import json
import threading

import pytest

from modelfuzz.advisor import HeuristicAdvisor, LLMAdvisor, ScriptedBackend, TokenLedger
from modelfuzz.config import config_from_dict
from modelfuzz.harness import CaseStore, ConfigurationError
from modelfuzz.model import AdvisorDecision, StateModel, example_mqtt_model, validate_model
from modelfuzz.orchestrator import (
    CASES_FILE,
    REPORT_FILE,
    SEQUENCES_FILE,
    _firewall,
    _group_ids,
    run_campaign,
    strip_timing,
)
from modelfuzz.seqgen import read_jsonl
from modelfuzz.testbed import Testbed, free_port

EXAMPLE_DOC = {k: v for k, v in example_mqtt_model().to_document().items()
           if k in ("initial_state", "transitions", "stop_probability", "reconnect_rule")}
EXAMPLE_STATES = list(example_mqtt_model().selected_states)


def config(tmp_path, endpoint, **kw):
    data = {
        "protocol": "mqtt",
        "endpoint": endpoint,
        "batch_size": 20,
        "max_batches": 3,
        "restart_probability": 0.0,
        "seed": 1,
        "workers": 2,
        "recovery_wait_s": 5,
        "output_dir": str(tmp_path / "out"),
        "timeouts": {"connect_s": 0.5, "read_s": 0.02, "probe_retries": 1, "probe_backoff_s": 0.05},
    }
    data.update(kw)
    return config_from_dict(data)


def scripted(script, max_calls=None):
    return LLMAdvisor(ScriptedBackend(script, TokenLedger(max_calls=max_calls)))


def example_script(**extra):
    script = {
        "select_states": [json.dumps(EXAMPLE_STATES)],
        "autoprompt": ["Generate a realistic MQTT client state machine."],
        "propose_model": [json.dumps(EXAMPLE_DOC)],
        "decide_adjustment": ['{"decision": "KEEP", "reason": "steady"}'],
    }
    script.update(extra)
    return script


class FixedDecision(HeuristicAdvisor):
    def __init__(self, decision):
        super().__init__()
        self.decision = decision

    def decide_adjustment(self, summary, model):
        return self.decision


def test_group_ids():
    assert _group_ids([9, 1, 2, 30, 5], 3) == [[1, 2, 5], [9], [30]]
    assert _group_ids([], 3) == []


@pytest.mark.parametrize(
    "decision, applied",
    [
        (AdvisorDecision("ADD", "AUTH"), True),
        (AdvisorDecision("DELETE", "PUBACK"), True),
        (AdvisorDecision("ADD", "PUBLISH"), False),
        (AdvisorDecision("ADD", "FROBNICATE"), False),
        (AdvisorDecision("DELETE", "CONNECT"), False),
        (AdvisorDecision("DELETE", "AUTH"), False),
        (AdvisorDecision("RENAME", "PUBLISH"), False),
    ],
)
def test_firewall(decision, applied):
    out = _firewall(decision, example_mqtt_model())
    if applied:
        assert out is decision
    else:
        assert (out.kind, out.source) == ("KEEP", "firewall")


def test_unreachable_target_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        run_campaign(config(tmp_path, f"127.0.0.1:{free_port()}"))
    with pytest.raises(ConfigurationError):
        run_campaign(config(tmp_path, "no-such-host.invalid:1883"))


def test_heuristic_campaign_report(tmp_path, echo_testbed):
    report = run_campaign(config(tmp_path, echo_testbed.endpoint))
    out = tmp_path / "out"
    data = json.loads((out / REPORT_FILE).read_text())
    assert data["stop_reason"] == "max_batches"
    assert data["ledger"]["calls"] == 0
    assert data["construction"]["advisor"] == "heuristic"
    totals = data["totals"]
    assert totals["batches"] == 3
    assert totals["total_cases"] == 60 == totals["attempted"] + totals["aborted"]
    assert totals["crashes"] == 0
    for b in report.batches:
        fs = b.failure_stats
        assert sum(c["requests"] for c in fs["per_state"].values()) == fs["messages"]
        assert fs["sequences"] == b.attempted
        assert validate_model(StateModel.from_document(b.model)).ok
    # the echo target never fails, so the heuristic keeps widening the model
    sizes = [len(b.model["selected_states"]) for b in report.batches]
    assert sizes == sorted(sizes) and sizes[-1] > sizes[0]
    assert report.batches[-1].decision is None
    seqs = read_jsonl(open(out / SEQUENCES_FILE))
    assert [s.id for s in seqs] == list(range(60))
    assert [c.id for c in CaseStore(out / CASES_FILE)] == list(range(60))


def test_restart_probability_one_resets_every_batch(tmp_path, echo_testbed):
    report = run_campaign(config(tmp_path, echo_testbed.endpoint, restart_probability=1.0, max_batches=4))
    assert all(b.model == report.initial_model for b in report.batches)
    assert [b.restart for b in report.batches] == [True, True, True, False]
    assert all(b.decision is None for b in report.batches)


def test_keep_script_leaves_model_untouched(tmp_path, echo_testbed):
    advisor = scripted(example_script())
    report = run_campaign(config(tmp_path, echo_testbed.endpoint, max_batches=4), advisor)
    assert report.initial_model == example_mqtt_model().to_document()
    assert all(b.model == report.initial_model for b in report.batches)
    assert [b.decision["kind"] for b in report.batches[:-1]] == ["KEEP"] * 3
    assert report.ledger["calls"] == 3 + 3


def test_firewall_inside_campaign(tmp_path, echo_testbed):
    advisor = FixedDecision(AdvisorDecision("DELETE", "CONNECT", "initial state is noisy"))
    report = run_campaign(config(tmp_path, echo_testbed.endpoint), advisor)
    decisions = [b.decision for b in report.batches[:-1]]
    assert all(d["kind"] == "KEEP" and d["source"] == "firewall" for d in decisions)
    assert all(b.model == report.initial_model for b in report.batches)


def test_construction_falls_back_to_heuristic(tmp_path, echo_testbed):
    advisor = scripted(example_script(select_states=["I would pick CONNECT and FROBNICATE."]))
    report = run_campaign(config(tmp_path, echo_testbed.endpoint, max_batches=1), advisor)
    assert report.construction["fallback"].startswith("select_states")
    heuristic = HeuristicAdvisor()
    selection = heuristic.select_states(heuristic.profile("mqtt").candidates, 7, "MQTT")
    assert report.initial_model["selected_states"] == list(selection.states)


def test_budget_ends_the_loop(tmp_path, echo_testbed):
    # 3 construction calls + 1 decision, then the second decision hits the cap
    advisor = scripted(example_script(), max_calls=4)
    report = run_campaign(config(tmp_path, echo_testbed.endpoint, max_batches=5), advisor)
    assert report.stop_reason == "budget"
    assert len(report.batches) == 2
    assert report.batches[-1].decision["source"] == "budget"
    assert report.ledger["calls"] == 4


def test_cancel_before_first_batch(tmp_path, echo_testbed):
    cancel = threading.Event()
    cancel.set()
    report = run_campaign(config(tmp_path, echo_testbed.endpoint), cancel=cancel)
    assert report.stop_reason == "cancelled"
    assert report.batches == []


def test_on_batch_hook_sees_every_batch(tmp_path, echo_testbed):
    seen = []
    run_campaign(config(tmp_path, echo_testbed.endpoint), on_batch=lambda b: seen.append(b.index))
    assert seen == [0, 1, 2]


def test_identical_configs_give_identical_reports(tmp_path, echo_testbed):
    a = run_campaign(config(tmp_path / "a", echo_testbed.endpoint)).to_dict()
    b = run_campaign(config(tmp_path / "b", echo_testbed.endpoint)).to_dict()
    for d in (a, b):
        d["config"].pop("output_dir")
    assert strip_timing(a) == strip_timing(b)


def test_crash_stops_campaign(tmp_path):
    with Testbed("mqtt", bugs=frozenset({"B1"}), restart_delay_s=0.5) as tb:
        cfg = config(tmp_path, tb.endpoint, batch_size=200, max_batches=20, workers=2)
        report = run_campaign(cfg)
        assert report.stop_reason == "crash"
        assert report.crash_found
        crash = report.crashes[0]
        assert crash.confirmed is True
        # B1 needs a PINGREQ header first on the wire; mutation can produce one from any state
        first = CaseStore(tmp_path / "out" / CASES_FILE).get(crash.case_id).messages[0]
        assert first[0] >> 4 == 12
        assert tb.bugs_seen() == {"B1"}
