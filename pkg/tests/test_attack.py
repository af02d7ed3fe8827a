"""Prime+retouch engine tests: sequence tables, classifier, trial driver."""

from __future__ import annotations

import pytest

from plrulab.attack import (
    AttackSession,
    Bucket,
    SequenceClass,
    classifier_calibration,
    classify_trial,
    entry_index,
    final_plru_table,
    ground_truth_class,
    poor_man_sweep,
    probe_first,
    recover_sync,
    run_sequence,
    run_trial,
    sweep_crossover,
)
from plrulab.cache import ATTACKER, VICTIM, CacheModel, PROFILES
from plrulab.plru import PolicySpec
from plrulab.timeline import TimelineEvent
from plrulab.victims import PrefetchVictim

A, B, C, D, E = SequenceClass

# Eviction candidate left behind by each interleaving, frozen after replay
# against the flag-level walkthrough in the golden-dump test below.
FINAL_TABLE = {
    "naive": {A: "e3", B: "e2", C: "e2", D: "e3", E: "e3"},
    "aware": {A: "e3", B: "e2", C: "e2", D: "e2", E: "e2"},
}

EXPECTED_BUCKET = {
    A: Bucket.SYNC_ACCESS,
    B: Bucket.SYNC_NO_ACCESS,
    C: Bucket.SYNC_NO_ACCESS,
    D: Bucket.UNSYNC,
    E: Bucket.UNSYNC,
}


def fresh_session(mode="aware", log_events=False) -> AttackSession:
    model = CacheModel(PROFILES["x86-cfl"], PolicySpec("tree-plru"), log_events=log_events)
    return AttackSession(model, set_index=0, mode=mode)


@pytest.mark.parametrize("mode", ["naive", "aware"])
def test_final_plru_table(mode):
    table = final_plru_table(mode)
    assert {seq: label for seq, label in table.items()} == FINAL_TABLE[mode]


def test_sequence_a_walkthrough_dumps():
    """Flag trajectory of P, R, A in aware mode, one dump per step."""
    session = fresh_session()
    session.reset()
    session.prime()
    assert session.tree_state().dump() == "0|00|0000"
    session.victim_access("write")
    assert session.tree_state().dump() == "1|10|1000"
    session.retouch()  # e0 was displaced by the prefetch; this reinstalls it
    assert session.tree_state().dump() == "0|11|1010"
    assert session.plru_label() == "e2"
    session.victim_access("read")
    assert session.tree_state().dump() == "1|11|1010"
    assert session.plru_label() == "e3"


def test_naive_mode_collapses_a_with_the_unsynchronized_cases():
    session = fresh_session(mode="naive")
    snapshots = {}
    for seq in SequenceClass:
        run_sequence(session, seq)
        snapshots[seq] = (session.tree_state(), session.resident_labels())
    assert snapshots[A] == snapshots[D] == snapshots[E]
    assert snapshots[B] == snapshots[C]
    assert snapshots[A] != snapshots[B]


def test_aware_mode_keeps_sequence_a_unique():
    session = fresh_session(mode="aware")
    candidates = {}
    for seq in SequenceClass:
        run_sequence(session, seq)
        candidates[seq] = session.plru_label()
    assert candidates[A] == "e3"
    assert all(candidates[seq] == "e2" for seq in (B, C, D, E))


def test_classifier_calibration_values():
    cal = classifier_calibration(8, "aware")
    assert cal.candidate_a == "e3"
    assert cal.check_bc == "e4"
    assert cal.evicted_bc == "e4"
    assert cal.evicted_de == "e5"


def test_naive_mode_has_no_unique_candidate():
    with pytest.raises(ValueError):
        classifier_calibration(8, "naive")


@pytest.mark.parametrize("seq", list(SequenceClass), ids=lambda s: s.name)
def test_first_probe_displaces_the_final_candidate(seq):
    session = fresh_session()
    run_sequence(session, seq)
    result = probe_first(session)
    assert result.evicted_label == FINAL_TABLE["aware"][seq]
    assert result.candidate_label == "e3"
    assert result.is_a == (seq is A)


@pytest.mark.parametrize("seq", [B, C, D, E], ids=lambda s: s.name)
def test_recovery_probe_separates_the_non_a_pairs(seq):
    session = fresh_session()
    run_sequence(session, seq)
    first = probe_first(session)
    assert not first.is_a
    rec = recover_sync(session)
    if seq in (B, C):
        assert rec.evicted_label == "e4"
        assert not rec.check_hit
        assert rec.bucket is Bucket.SYNC_NO_ACCESS
    else:
        assert rec.evicted_label == "e5"
        assert rec.check_hit
        assert rec.bucket is Bucket.UNSYNC


@pytest.mark.parametrize("seq", list(SequenceClass), ids=lambda s: s.name)
def test_classify_trial_buckets_every_sequence(seq):
    session = fresh_session()
    run_sequence(session, seq)
    bucket, first, rec = classify_trial(session)
    assert bucket is EXPECTED_BUCKET[seq]
    assert (rec is None) == (seq is A)
    # The probes never displace the victim's line.
    assert first.evicted_label != "V"
    if rec is not None:
        assert rec.evicted_label != "V"
    assert session.model.evictions_of(VICTIM, ATTACKER) == 0
    if seq.has_access or seq in (B, C):
        assert session.model.resident(session.victim_addr)


# -- ground truth over merged timelines --------------------------------------


def _timeline(*items):
    return [TimelineEvent(tick, actor, kind) for tick, actor, kind in items]


def test_ground_truth_covers_all_five_orders():
    pre, acc = ("victim", "write"), ("victim", "read")
    ret = ("attacker", "retouch")
    assert ground_truth_class(_timeline((0, *pre), (1, *ret), (2, *acc))) is A
    assert ground_truth_class(_timeline((0, *pre), (1, *ret))) is B
    assert ground_truth_class(_timeline((0, *pre), (1, *acc), (2, *ret))) is C
    assert ground_truth_class(_timeline((0, *ret), (1, *pre), (2, *acc))) is D
    assert ground_truth_class(_timeline((0, *ret), (1, *pre))) is E


def test_ground_truth_validation():
    with pytest.raises(ValueError):
        ground_truth_class(_timeline((0, "attacker", "retouch")))
    with pytest.raises(ValueError):
        ground_truth_class(
            _timeline((0, "victim", "write"), (1, "attacker", "retouch"), (2, "attacker", "retouch"))
        )


# -- full trials --------------------------------------------------------------


def victim_events(session, access_tick=160):
    events = [(100, "write", session.victim_addr)]
    if access_tick is not None:
        events.append((access_tick, "read", session.victim_addr))
    return events


@pytest.mark.parametrize(
    "retouch_tick,expected_truth",
    [(120, A), (170, C), (90, D), (100, D)],
)
def test_run_trial_truth_follows_the_retouch_position(retouch_tick, expected_truth):
    session = fresh_session()
    outcome = run_trial(session, victim_events(session), retouch_tick)
    assert outcome.truth is expected_truth
    assert outcome.bucket is EXPECTED_BUCKET[expected_truth]
    assert outcome.victim_evictions_by_attacker == 0


@pytest.mark.parametrize("retouch_tick,expected_truth", [(120, B), (90, E)])
def test_run_trial_without_victim_access(retouch_tick, expected_truth):
    session = fresh_session()
    outcome = run_trial(session, victim_events(session, None), retouch_tick)
    assert outcome.truth is expected_truth
    assert outcome.bucket is EXPECTED_BUCKET[expected_truth]


def test_tie_breaking_is_configurable():
    session = fresh_session()
    drawn = run_trial(session, victim_events(session), 100, tie="attacker")
    assert drawn.truth is D  # retouch wins the shared tick
    yielded = run_trial(session, victim_events(session), 100, tie="victim")
    assert yielded.truth is A


def test_locked_victim_survives_every_retouch_position():
    session = fresh_session()
    for tick in (80, 100, 120, 160, 170):
        outcome = run_trial(
            session, victim_events(session), tick, tx_owner=VICTIM
        )
        assert not outcome.aborted
        assert outcome.abort_by is None


def test_single_synchronizing_access_between_prime_and_probe():
    session = fresh_session(log_events=True)
    run_trial(session, victim_events(session), 120)
    span = session.model.geometry.span
    attacker_cols = [
        addr // span
        for _, owner, _, addr, _, _, _, _ in session.model.events
        if owner == ATTACKER
    ]
    first_probe = attacker_cols.index(9)  # f1 lives in column ways+1
    between = attacker_cols[8:first_probe]  # prime is the first 8 accesses
    assert between == [0]  # exactly one access, the e0 retouch


# -- sweep ---------------------------------------------------------------------


def test_poor_man_sweep_counts_and_crossover():
    session = fresh_session()
    victim = PrefetchVictim(prefetch_tick=100, access_tick=160)
    rows, truths = poor_man_sweep(
        session, victim, d_max=200, step=20, trials=3, record_truth=True
    )
    by_delay = {row.delay: row for row in rows}
    assert set(by_delay) == {0, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200}
    for delay in (120, 140, 160):
        assert by_delay[delay].count_a == 3
        assert truths[delay] is A
    for delay in (180, 200):
        assert by_delay[delay].count_sync_noaccess == 3
        assert truths[delay] is C
    for delay in (0, 20, 40, 60, 80, 100):
        assert by_delay[delay].count_unsync == 3
    assert truths[100] is D  # attacker wins the shared tick
    assert sweep_crossover(rows) == 100
    assert session.model.evictions_of(VICTIM, ATTACKER) == 0


def test_sweep_rejects_bad_step():
    session = fresh_session()
    with pytest.raises(ValueError):
        poor_man_sweep(session, PrefetchVictim(), d_max=10, step=0, trials=1)


def test_sweep_crossover_none_when_unsync_never_leads():
    from plrulab.attack import SweepRow

    rows = [SweepRow(delay, 5, 5, 0) for delay in (40, 20, 0)]
    assert sweep_crossover(rows) is None


# -- session plumbing ----------------------------------------------------------


def test_label_round_trips():
    session = fresh_session()
    assert session.addr_of_label("e3") == session.entry_addrs[3]
    assert session.addr_of_label("V") == session.victim_addr
    assert session.label_of_tag(session.addr_of_label("f2")) == "f2"
    with pytest.raises(ValueError):
        session.addr_of_label("e8")
    with pytest.raises(ValueError):
        session.addr_of_label("bogus")
    with pytest.raises(ValueError):
        entry_index("f1")


def test_session_rejects_unknown_mode():
    with pytest.raises(ValueError):
        fresh_session(mode="eager")


def test_tree_snapshots_need_the_tree_policy():
    model = CacheModel(PROFILES["x86-cfl"], PolicySpec("fifo"))
    session = AttackSession(model)
    with pytest.raises(TypeError):
        session.tree_state()
