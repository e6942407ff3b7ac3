import io
import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modelfuzz.advisor import synthesize_model
from modelfuzz.model import ReconnectRule, StateModel, example_mqtt_model
from modelfuzz.protocols import MQTT_STATES
from modelfuzz.seeding import derive_seed, splitmix64
from modelfuzz.seqgen import (
    MAX_SEQUENCE_LENGTH,
    InvalidModelError,
    MessageSequence,
    batch_stats,
    generate_batch,
    generate_sequence,
    is_valid_path,
    read_jsonl,
    sequence_from_seed,
    write_jsonl,
)


def chain(p, reconnect=None):
    """CONNECT -> PUBLISH -> CONNECT ... with stop probability p."""
    return StateModel(
        "MQTT", MQTT_STATES, ("CONNECT", "PUBLISH"), "CONNECT",
        {"CONNECT": [("PUBLISH", 1)], "PUBLISH": [("CONNECT", 1)]},
        stop_probability=p, reconnect_rule=reconnect,
    )


def test_splitmix_reference_values():
    # first outputs of the reference SplitMix64 generator seeded with 0
    state = 0
    outs = []
    for _ in range(3):
        outs.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) % 2**64
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_derive_seed_separates_paths():
    seeds = {derive_seed(7, i) for i in range(10_000)}
    assert len(seeds) == 10_000
    assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)
    assert derive_seed(7) != derive_seed(8)


def test_single_state_forced_stop():
    m = StateModel("MQTT", MQTT_STATES, ("CONNECT",), "CONNECT", {}, stop_probability=1.0)
    for seed in range(50):
        assert sequence_from_seed(m, seed).states == ("CONNECT",)


def test_invalid_model_is_refused():
    bad = StateModel("MQTT", MQTT_STATES, ("CONNECT",), "CONNECT", {"CONNECT": [("NOPE", 1)]})
    with pytest.raises(InvalidModelError):
        generate_sequence(bad, random.Random(0))
    with pytest.raises(InvalidModelError):
        generate_batch(bad, 3, 0)


def test_same_seed_same_sequence():
    m = example_mqtt_model()
    assert sequence_from_seed(m, 1234) == sequence_from_seed(m, 1234)


def test_first_transition_frequency():
    batch = generate_batch(example_mqtt_model(), 100_000, 11)
    seconds = [s.states[1] for s in batch if len(s.states) > 1]
    freq = Counter(seconds)["CONNACK"] / len(seconds)
    assert 0.68 <= freq <= 0.72


def test_branch_frequencies_within_three_sigma():
    m = example_mqtt_model()
    counts: dict[str, Counter] = {s: Counter() for s in m.transitions}
    for seq in generate_batch(m, 100_000, 3):
        for a, b in zip(seq.states, seq.states[1:]):
            if not m.is_terminal(a):
                counts[a][b] += 1
    for src, edges in m.transitions.items():
        n = sum(counts[src].values())
        total = sum(w for _, w in edges)
        for target, w in edges:
            p = w / total
            sigma = math.sqrt(n * p * (1 - p))
            assert abs(counts[src][target] - n * p) <= 3 * sigma, (src, target)


@pytest.mark.parametrize("p", [0.25, 0.5])
def test_mean_length_is_inverse_stop_probability(p):
    batch = generate_batch(chain(p), 100_000, 5)
    mean = sum(len(s.states) for s in batch) / len(batch)
    assert abs(mean - 1 / p) <= 0.05 / p


def test_reconnect_rule_terminates_or_restarts():
    m = example_mqtt_model()
    after_disconnect = Counter()
    for seq in generate_batch(m, 50_000, 9):
        for a, b in zip(seq.states, seq.states[1:]):
            if a == "DISCONNECT":
                after_disconnect[b] += 1
    assert set(after_disconnect) == {"CONNECT"}


def test_reconnect_probability_zero_always_ends():
    m = chain(0.0, ReconnectRule("PUBLISH", 0.0))
    for seq in generate_batch(m, 100, 1):
        assert seq.states == ("CONNECT", "PUBLISH")


def test_length_is_capped():
    m = chain(0.0, ReconnectRule("PUBLISH", 0.999999))
    seq = sequence_from_seed(m, 1)
    assert len(seq.states) <= MAX_SEQUENCE_LENGTH


def test_batch_size_ids_and_seeds():
    m = example_mqtt_model()
    batch = generate_batch(m, 20_000, 42, start_id=100)
    assert len(batch) == 20_000
    assert [s.id for s in batch] == list(range(100, 20_100))
    assert batch[5].seed == derive_seed(42, 5)
    assert generate_batch(m, 1, 42)[0].states == batch[0].states


def test_batch_reproducible_and_order_independent():
    m = example_mqtt_model()
    a = generate_batch(m, 500, 8)
    assert a == generate_batch(m, 500, 8)
    # any member can be regenerated alone from its seed
    for seq in a[::50]:
        assert sequence_from_seed(m, seq.seed, seq.id) == seq


def test_batch_size_must_be_positive():
    with pytest.raises(ValueError):
        generate_batch(example_mqtt_model(), 0, 1)


def test_batch_stats_counting():
    a = MessageSequence(0, ("CONNECT",), 1)
    b = MessageSequence(1, ("CONNECT",), 2)
    c = MessageSequence(2, ("CONNECT", "PUBLISH"), 3)
    s = batch_stats([a, b, c], [2, 2, 9])
    assert (s.total_cases, s.unique_cases) == (3, 2)
    assert batch_stats([a, c], [100, 150]).avg_length == 125.0


def test_batch_stats_errors():
    with pytest.raises(ValueError):
        batch_stats([], [])
    with pytest.raises(ValueError):
        batch_stats([MessageSequence(0, ("CONNECT",), 0)], [1, 2])


def pairwise_unique(batch):
    """Independent O(n^2) count: a sequence is new if no earlier one equals it."""
    unique = 0
    for i, s in enumerate(batch):
        if all(list(s.states) != list(batch[j].states) for j in range(i)):
            unique += 1
    return unique


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_unique_count_matches_pairwise_oracle(seed):
    batch = generate_batch(example_mqtt_model(), 1000, seed)
    stats = batch_stats(batch, [len(s.states) for s in batch])
    assert stats.unique_cases == pairwise_unique(batch)


def test_unique_count_frozen_value():
    # computed once with pairwise_unique and frozen
    batch = generate_batch(example_mqtt_model(), 1000, 0)
    assert batch_stats(batch, [1] * 1000).unique_cases == 45


def test_jsonl_round_trip():
    batch = generate_batch(example_mqtt_model(), 50, 4)
    buf = io.StringIO()
    write_jsonl(batch, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 50
    assert lines[0].startswith('{"id":0,"seed":')
    buf.seek(0)
    assert list(read_jsonl(buf)) == batch


def test_is_valid_path():
    m = example_mqtt_model()
    assert is_valid_path(m, ["CONNECT", "CONNACK", "DISCONNECT", "CONNECT"])
    assert not is_valid_path(m, ["CONNACK"])
    assert not is_valid_path(m, ["CONNECT", "PUBLISH"])
    assert not is_valid_path(m, ["CONNECT", "CONNACK", "DISCONNECT", "PUBLISH"])
    assert not is_valid_path(m, [])


selections = st.lists(st.sampled_from(MQTT_STATES[1:]), unique=True, max_size=8).map(lambda s: ("CONNECT", *s))


@settings(max_examples=60, deadline=None)
@given(selections, st.integers(0, 2**64 - 1), st.sampled_from([0.2, 0.5, 0.9]))
def test_generated_paths_are_valid(selected, seed, p):
    m = synthesize_model("MQTT", MQTT_STATES, selected, "CONNECT", "DISCONNECT", stop_probability=p)
    edges = {(a, b) for a, es in m.transitions.items() for b, _ in es}
    for seq in generate_batch(m, 50, seed):
        assert seq.states[0] == "CONNECT"
        for a, b in zip(seq.states, seq.states[1:]):
            assert (a, b) in edges or (m.is_terminal(a) and b == "CONNECT")
