"""Amplifier stream and amplifier search tests."""

from __future__ import annotations

import pytest

from plrulab.amplify import (
    AMPLIFIER_PERIOD,
    amplifier_execute,
    amplifier_search,
    amplifier_sequence,
    sequence_class_states,
)
from plrulab.attack import SequenceClass
from plrulab.cache import LatencyModel, Timer

A = SequenceClass.A
NON_A = [s for s in SequenceClass if s is not A]


def test_canonical_sequence_shape():
    seq = amplifier_sequence()
    assert len(seq) == 57
    assert seq[0] == "e1"
    assert seq[1:9] == AMPLIFIER_PERIOD
    assert amplifier_sequence(periods=0) == ("e1",)
    assert "e0" not in seq  # the retouched entry is never replayed
    with pytest.raises(ValueError):
        amplifier_sequence(periods=-1)


def test_canonical_miss_counts():
    results = amplifier_execute()
    assert results[A].misses == 15
    for seq in NON_A:
        assert results[seq].misses == 1


def test_first_access_misses_everywhere_and_splits_the_states():
    results = amplifier_execute(sequence=("e1",), keep_trace=True)
    for seq in SequenceClass:
        label, hit, evicted = results[seq].trace[0]
        assert label == "e1" and not hit
        assert evicted == ("e3" if seq is A else "e2")


def test_non_a_classes_are_indistinguishable_along_the_stream():
    results = amplifier_execute(keep_trace=True)
    reference = results[SequenceClass.B].trace
    for seq in NON_A:
        assert results[seq].trace == reference


def test_amplifier_never_touches_the_victim_line():
    results = amplifier_execute(keep_trace=True)
    for seq in SequenceClass:
        assert all(evicted != "V" for _, _, evicted in results[seq].trace)


def test_fine_cycle_totals():
    latency = LatencyModel("m1-firestorm")
    results = amplifier_execute(latency=latency)
    assert results[A].cycles == 408
    for seq in NON_A:
        assert results[seq].cycles == 240


def test_coarse_ticks_separate_a_from_the_rest():
    latency = LatencyModel("m1-firestorm", coarse_ratio=133, seed=3)
    results = amplifier_execute(latency=latency, timer=Timer.COARSE)
    assert results[A].coarse_ticks in (3, 4)
    for seq in NON_A:
        assert results[seq].coarse_ticks in (1, 2)


def test_search_plan_replays_to_its_claimed_counts():
    # The beam is a heuristic, not an optimum; 12 is its deterministic
    # result at this budget (a short stream that burns the state split for
    # a fast differential, unlike the sustained canonical period).
    plan = amplifier_search(budget=57)
    assert plan is not None
    assert plan.differential == 12
    assert len(plan.sequence) <= 57
    replay = amplifier_execute(sequence=plan.sequence)
    assert replay[A].misses == plan.misses_a
    assert {replay[seq].misses for seq in NON_A} == {plan.misses_other}
    assert plan.differential == plan.misses_a - plan.misses_other


def test_search_with_a_small_budget_still_amplifies():
    plan = amplifier_search(budget=8)
    assert plan is not None
    assert plan.differential == 5
    replay = amplifier_execute(sequence=plan.sequence)
    assert replay[A].misses - replay[SequenceClass.B].misses == plan.differential


def test_search_returns_none_once_the_states_converge():
    state = sequence_class_states("aware", 8)[SequenceClass.B]
    assert amplifier_search(budget=4, states=(state, state, state)) is None


def test_search_validates_budget():
    with pytest.raises(ValueError):
        amplifier_search(budget=0)
