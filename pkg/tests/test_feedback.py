import random
from collections import defaultdict
from functools import reduce

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modelfuzz.feedback import FOOTER_LINES, FailureStats, accumulate, merge, render, summarize
from modelfuzz.harness import (
    CONNECTION_RESET,
    FAILURE_CLASSES,
    OUTCOME_CLASSES,
    RESPONSE_RECEIVED,
    SEND_FAILED,
    TARGET_DOWN,
    TIMEOUT,
    Outcome,
    SequenceOutcome,
)
from modelfuzz.seqgen import MessageSequence

STATES = ("CONNECT", "PUBLISH", "SUBSCRIBE", "PINGREQ", "DISCONNECT")


def outcome(cls, first=0x20):
    return Outcome(cls, bytes([first]) if cls == RESPONSE_RECEIVED else None)


def random_log(rng, n):
    log = []
    for i in range(n):
        states = tuple(rng.choice(STATES) for _ in range(rng.randint(1, 6)))
        sent = rng.randint(0, len(states))
        results = tuple((s, outcome(rng.choice(OUTCOME_CLASSES), rng.randrange(256))) for s in states[:sent])
        log.append((MessageSequence(i, states, i), SequenceOutcome(i, results, rng.random() < 0.01)))
    return log


def fold(log, states=()):
    return reduce(lambda acc, pair: accumulate(acc, *pair), log, FailureStats.empty(states))


def one_pass(log):
    """Recompute the statistics directly from the outcome log."""
    req, fail = defaultdict(int), defaultdict(int)
    for _, out in log:
        for state, o in out.results:
            req[state] += 1
            fail[state] += o.cls in FAILURE_CLASSES
    return dict(req), dict(fail)


def test_publish_failure_rate():
    seq = MessageSequence(0, ("PUBLISH",) * 10, 0)
    results = tuple(("PUBLISH", outcome(TIMEOUT if i < 3 else RESPONSE_RECEIVED)) for i in range(10))
    stats = accumulate(FailureStats.empty(), seq, SequenceOutcome(0, results))
    assert stats.per_state["PUBLISH"].failure_rate == pytest.approx(0.3)


def test_all_responses_means_zero_rates():
    seq = MessageSequence(0, STATES, 0)
    stats = accumulate(FailureStats.empty(), seq, SequenceOutcome(0, tuple((s, outcome(RESPONSE_RECEIVED)) for s in STATES)))
    assert all(c.failure_rate == 0 for c in stats.per_state.values())
    assert stats.overall_failure_rate == 0


@pytest.mark.parametrize("cls", [TIMEOUT, CONNECTION_RESET, SEND_FAILED, TARGET_DOWN])
def test_failure_classes(cls):
    seq = MessageSequence(0, ("CONNECT",), 0)
    stats = accumulate(FailureStats.empty(), seq, SequenceOutcome(0, (("CONNECT", outcome(cls)),)))
    assert stats.failures == 1


def test_only_sent_messages_count():
    seq = MessageSequence(0, ("CONNECT", "PUBLISH", "PUBLISH"), 0)
    out = SequenceOutcome(0, (("CONNECT", outcome(RESPONSE_RECEIVED)), ("PUBLISH", outcome(CONNECTION_RESET))))
    stats = accumulate(FailureStats.empty(), seq, out)
    assert stats.messages == 2
    assert stats.per_state["PUBLISH"].requests == 1


def test_crash_count():
    seq = MessageSequence(0, ("PINGREQ",), 0)
    stats = accumulate(FailureStats.empty(), seq, SequenceOutcome(0, (("PINGREQ", outcome(CONNECTION_RESET)),), True))
    assert stats.crashes == 1


def test_mismatched_ids():
    with pytest.raises(ValueError):
        accumulate(FailureStats.empty(), MessageSequence(1, ("CONNECT",), 0), SequenceOutcome(2, ()))


def test_more_results_than_messages():
    out = SequenceOutcome(0, (("CONNECT", outcome(TIMEOUT)),) * 2)
    with pytest.raises(ValueError):
        accumulate(FailureStats.empty(), MessageSequence(0, ("CONNECT",), 0), out)


def test_fold_equals_one_pass():
    log = random_log(random.Random(1), 2000)
    stats = fold(log)
    req, fail = one_pass(log)
    assert {s: c.requests for s, c in stats.per_state.items()} == req
    assert {s: c.failures for s, c in stats.per_state.items()} == fail
    assert sum(c.requests for c in stats.per_state.values()) == stats.messages


def test_fold_order_independence_on_ten_thousand():
    log = random_log(random.Random(2), 10_000)
    reference = fold(log)
    for seed in range(3):
        shuffled = list(log)
        random.Random(seed).shuffle(shuffled)
        assert fold(shuffled) == reference
    halves = merge(fold(log[:5000]), fold(log[5000:]))
    assert halves == reference


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 60))
def test_fold_is_associative(seed, n):
    log = random_log(random.Random(seed), n)
    cut = random.Random(seed + 1).randint(0, n)
    assert merge(fold(log[:cut]), fold(log[cut:])) == fold(log)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 80))
def test_rates_are_probabilities(seed, n):
    stats = fold(random_log(random.Random(seed), n))
    for c in stats.per_state.values():
        assert c.failure_rate is None or 0 <= c.failure_rate <= 1


def test_distinct_responses():
    seq = MessageSequence(0, ("CONNECT", "CONNECT", "PUBLISH"), 0)
    out = SequenceOutcome(0, (
        ("CONNECT", outcome(RESPONSE_RECEIVED, 0x20)),
        ("CONNECT", outcome(RESPONSE_RECEIVED, 0x20)),
        ("PUBLISH", outcome(TIMEOUT)),
    ))
    assert accumulate(FailureStats.empty(), seq, out).distinct_responses == 2


def test_summary_single_state():
    seq = MessageSequence(0, ("CONNECT",), 0)
    stats = accumulate(FailureStats.empty(), seq, SequenceOutcome(0, (("CONNECT", outcome(TIMEOUT)),)))
    text = summarize(stats).text
    assert "1.0000" in text
    assert text.splitlines()[0] == "CONNECT: requests=1 failures=1 failure_rate=1.0000"


def test_zero_request_state_renders_na():
    stats = FailureStats.empty(["AUTH"])
    assert "AUTH: requests=0 failures=0 failure_rate=n/a" in render(stats)


def test_summary_needs_messages():
    with pytest.raises(ValueError):
        summarize(FailureStats.empty(STATES))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 50))
def test_summary_shape_and_determinism(seed, n):
    log = random_log(random.Random(seed), n)
    stats = fold(log, STATES)
    if stats.messages == 0:
        return
    text = summarize(stats).text
    lines = text.splitlines()
    assert len(lines) == len(STATES) + FOOTER_LINES
    for s in STATES:
        assert sum(line.startswith(f"{s}:") for line in lines) == 1
    state_lines = lines[: len(STATES)]
    assert state_lines == sorted(state_lines)
    assert summarize(fold(log, STATES)).text == text


def test_to_dict_shape():
    log = random_log(random.Random(4), 20)
    d = fold(log, STATES).to_dict()
    assert set(d) == {"per_state", "sequences", "messages", "failures", "overall_failure_rate", "crashes",
                      "distinct_responses"}
    assert list(d["per_state"]) == sorted(STATES)
