"""Cache model, transaction monitor and latency accounting tests."""

from __future__ import annotations

import csv
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plrulab.cache import (
    ATTACKER,
    DEFAULT_COARSE_RATIO,
    FRESH,
    LATENCY_CYCLES,
    PROFILES,
    VICTIM,
    AccessOutcome,
    CacheModel,
    Geometry,
    LatencyModel,
    Timer,
    line_addr,
    map_set,
    profile,
)
from plrulab.plru import PolicySpec

X86 = PROFILES["x86-cfl"]
FIRESTORM = PROFILES["m1-firestorm"]
ICESTORM = PROFILES["m1-icestorm"]


def set_lines(geometry: Geometry, set_index: int, count: int) -> list[int]:
    """`count` distinct line addresses that all map to one set."""
    base = set_index * geometry.line_size
    return [base + k * geometry.span for k in range(count)]


# -- address mapping ------------------------------------------------------


def test_map_set_known_addresses():
    assert map_set(FIRESTORM, 16384) == 0
    assert map_set(ICESTORM, 8256) == 1
    assert map_set(X86, 4095) == 63
    assert map_set(X86, 4096) == 0


def test_map_set_rejects_negative_addresses():
    with pytest.raises(ValueError):
        map_set(X86, -64)


@given(
    geometry=st.sampled_from(sorted(PROFILES)),
    addr=st.integers(min_value=0, max_value=1 << 40),
    wrap=st.integers(min_value=0, max_value=8),
)
@settings(max_examples=200, deadline=None)
def test_map_set_is_span_periodic(geometry, addr, wrap):
    geo = PROFILES[geometry]
    s = map_set(geo, addr)
    assert 0 <= s < geo.sets
    assert map_set(geo, addr + wrap * geo.span) == s
    assert line_addr(geo, addr) % geo.line_size == 0


def test_profile_lookup():
    assert profile("x86-cfl") is X86
    with pytest.raises(ValueError):
        profile("alder-lake")


# -- fills, hits and evictions --------------------------------------------


def test_victim_cold_fill_lands_on_the_chase_order():
    model = CacheModel(X86)
    ways = [model.access(addr, ATTACKER).way for addr in set_lines(X86, 0, 8)]
    assert ways == [0, 4, 2, 6, 1, 5, 3, 7]
    # Every fill pointed its path away again, so the flags cancel back to zero.
    assert model.policy_dump(0) == "0|00|0000"


def test_index_cold_fill_lands_left_to_right():
    model = CacheModel(X86, cold_fill="index")
    ways = [model.access(addr, ATTACKER).way for addr in set_lines(X86, 0, 8)]
    assert ways == list(range(8))


def test_ninth_line_evicts_way_zero():
    model = CacheModel(X86)
    lines = set_lines(X86, 0, 9)
    for addr in lines[:8]:
        model.access(addr, ATTACKER)
    outcome = model.access(lines[8], VICTIM)
    assert not outcome.hit
    assert outcome.way == 0
    assert outcome.evicted_tag == lines[0]
    assert outcome.evicted_owner == ATTACKER
    assert model.evictions == {(VICTIM, ATTACKER): 1}


def test_hits_do_not_evict():
    model = CacheModel(X86)
    lines = set_lines(X86, 3, 8)
    for addr in lines:
        model.access(addr, ATTACKER)
    before = dict(model.evictions)
    for addr in lines:
        outcome = model.access(addr, ATTACKER)
        assert outcome.hit
    assert model.evictions == before
    assert model.hits == 8 and model.misses == 8


def test_evictions_of_filters_by_both_owners():
    model = CacheModel(X86)
    lines = set_lines(X86, 0, 10)
    for addr in lines[:8]:
        model.access(addr, ATTACKER)
    model.access(lines[8], VICTIM)  # evicts an attacker line
    model.access(lines[9], FRESH)  # evicts another attacker line
    assert model.evictions_of(ATTACKER) == 2
    assert model.evictions_of(ATTACKER, by_owner=VICTIM) == 1
    assert model.evictions_of(ATTACKER, by_owner=FRESH) == 1
    assert model.evictions_of(VICTIM) == 0


def test_flush_set_clears_slots_and_policy():
    model = CacheModel(X86)
    lines = set_lines(X86, 5, 3)
    for addr in lines:
        model.access(addr, ATTACKER)
    assert model.resident(lines[0])
    model.flush_set(5)
    assert not model.resident(lines[0])
    assert model.set_contents(5) == [(w, None, None) for w in range(8)]
    assert model.policy_dump(5) == "0|00|0000"


def test_sets_are_independent():
    model = CacheModel(X86)
    a = set_lines(X86, 1, 8)
    b = set_lines(X86, 2, 1)
    for addr in a:
        model.access(addr, ATTACKER)
    model.access(b[0], VICTIM)
    assert all(model.resident(addr) for addr in a)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"cold_fill": "sequential"},
    ],
)
def test_bad_cold_fill_rejected(kwargs):
    with pytest.raises(ValueError):
        CacheModel(X86, **kwargs)


def test_bad_owner_and_op_rejected():
    model = CacheModel(X86)
    with pytest.raises(ValueError):
        model.access(0, "intruder")
    with pytest.raises(ValueError):
        model.access(0, ATTACKER, op="prefetch")


def test_event_log_schema(tmp_path):
    model = CacheModel(X86, log_events=True)
    lines = set_lines(X86, 0, 9)
    for addr in lines[:8]:
        model.access(addr, ATTACKER)
    model.access(lines[8], VICTIM, op="write")
    path = tmp_path / "events.csv"
    model.export_event_log(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "step", "owner", "op", "addr", "set", "way", "outcome", "evicted_owner",
    ]
    assert len(rows) == 10
    assert rows[1] == ["0", "attacker", "read", "0", "0", "0", "miss", ""]
    assert rows[9][1:3] == ["victim", "write"]
    assert rows[9][6:] == ["miss", "attacker"]


def test_random_policy_model_is_seed_deterministic():
    def run(seed):
        model = CacheModel(X86, policy=PolicySpec("random", seed=seed))
        lines = set_lines(X86, 0, 12)
        return [model.access(addr, ATTACKER).way for addr in lines for _ in (0, 1)]

    assert run(5) == run(5)
    assert run(5) != run(6) or run(5) != run(7)  # at least one seed differs


# -- transactions ----------------------------------------------------------


def fill_then_evict(model, owner_op):
    """Fill set 0, run the monitored access, then displace that line."""
    lines = set_lines(X86, 0, 8)
    extra = set_lines(X86, 0, 16)[8:]
    for addr in lines[1:]:
        model.access(addr, FRESH)
    monitor = model.tx_begin(VICTIM)
    model.access(lines[0], VICTIM, op=owner_op)
    evicted = False
    for addr in extra:
        outcome = model.access(addr, ATTACKER)
        if outcome.evicted_tag == lines[0]:
            evicted = True
            break
    assert evicted, "displacement traffic never reached the monitored line"
    return model.tx_end(), lines[0]


def test_write_set_eviction_aborts():
    monitor, tag = fill_then_evict(CacheModel(X86), "write")
    assert monitor.aborted
    assert monitor.abort_line == tag
    assert monitor.abort_by == ATTACKER


def test_read_set_eviction_is_harmless():
    monitor, tag = fill_then_evict(CacheModel(X86), "read")
    assert not monitor.aborted
    assert tag in monitor.read_set
    assert monitor.abort_line is None


def test_transaction_without_eviction_stays_clean():
    model = CacheModel(X86)
    model.tx_begin(VICTIM)
    model.access(0, VICTIM, op="write")
    model.access(64, VICTIM)
    monitor = model.tx_end()
    assert not monitor.aborted
    assert monitor.write_set and monitor.read_set


def test_nested_transactions_rejected():
    model = CacheModel(X86)
    model.tx_begin(VICTIM)
    with pytest.raises(RuntimeError):
        model.tx_begin(ATTACKER)
    model.tx_end()
    with pytest.raises(RuntimeError):
        model.tx_end()


def test_only_the_tx_owner_joins_the_sets():
    model = CacheModel(X86)
    monitor = model.tx_begin(VICTIM)
    model.access(0, ATTACKER, op="write")
    model.access(64, VICTIM, op="write")
    model.tx_end()
    assert monitor.write_set == {64}
    assert monitor.read_set == set()


def test_abort_latches_the_first_cause():
    model = CacheModel(X86)
    lines = set_lines(X86, 0, 24)
    monitor = model.tx_begin(VICTIM)
    model.access(lines[0], VICTIM, op="write")
    model.access(lines[1], VICTIM, op="write")
    for addr in lines[2:]:
        model.access(addr, ATTACKER)
    model.tx_end()
    assert monitor.aborted
    assert monitor.abort_line == lines[0]  # way 0 falls first under the chase


def test_monitor_matches_shadow_bookkeeping():
    """Randomized soundness: abort iff a written line was displaced mid-tx."""
    rng = random.Random(20260814)
    pool = set_lines(X86, 0, 12)
    for trial in range(150):
        model = CacheModel(X86)
        shadow_write: set[int] = set()
        expect_abort = None
        monitor = model.tx_begin(VICTIM)
        for _ in range(rng.randrange(4, 40)):
            owner = VICTIM if rng.random() < 0.5 else ATTACKER
            op = "write" if rng.random() < 0.4 else "read"
            addr = rng.choice(pool)
            outcome = model.access(addr, owner, op=op)
            if owner == VICTIM and op == "write":
                shadow_write.add(addr)
            if outcome.evicted_tag in shadow_write and expect_abort is None:
                expect_abort = (outcome.evicted_tag, owner)
        model.tx_end()
        if expect_abort is None:
            assert not monitor.aborted, f"trial {trial}"
        else:
            assert (monitor.abort_line, monitor.abort_by) == expect_abort


# -- latency ----------------------------------------------------------------


def outcomes(misses: int, hits: int) -> list[AccessOutcome]:
    return [AccessOutcome(False, 0, 0)] * misses + [AccessOutcome(True, 0, 0)] * hits


def test_fine_cycle_sums_match_the_calibration_pairs():
    lat = LatencyModel("m1-firestorm")
    assert (lat.hit_cycles, lat.miss_cycles) == (4, 16)
    assert lat.cycles(outcomes(15, 42)) == 408
    assert lat.cycles(outcomes(1, 56)) == 240
    assert LatencyModel("m1-icestorm").cycles(outcomes(1, 0)) == 12


def test_coarse_ticks_over_every_phase():
    lat = LatencyModel("m1-firestorm", coarse_ratio=133)
    ticks = lambda cycles: {lat.coarse_ticks(cycles, phase=p) for p in range(133)}
    assert ticks(408) == {3, 4}
    assert ticks(240) == {1, 2}
    # A single access cannot be classified: hit and miss readings overlap.
    assert ticks(lat.hit_cycles) == {0, 1}
    assert ticks(lat.miss_cycles) == {0, 1}


def test_random_phase_stays_in_the_exhaustive_envelope():
    lat = LatencyModel("m1-firestorm", seed=1)
    readings = {lat.coarse_ticks(408) for _ in range(500)}
    assert readings <= {3, 4}


def test_measure_drives_the_model():
    model = CacheModel(FIRESTORM)
    lat = LatencyModel("m1-firestorm")
    lines = set_lines(FIRESTORM, 0, 2)
    plan = [(lines[0], ATTACKER, "read"), (lines[1], ATTACKER, "read")]
    assert lat.measure(model, plan) == 32  # two cold misses
    assert lat.measure(model, plan) == 8  # now both hit
    assert lat.measure(model, plan, timer=Timer.COARSE) in (0, 1)


def test_latency_validation():
    with pytest.raises(ValueError):
        LatencyModel("z80")
    with pytest.raises(ValueError):
        LatencyModel("x86-cfl", coarse_ratio=0)
    assert DEFAULT_COARSE_RATIO == 133
    assert LATENCY_CYCLES["x86-cfl"] == (4, 12)
