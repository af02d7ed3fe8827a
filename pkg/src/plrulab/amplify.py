"""Miss-count amplification for coarse timers.

A single victim access changes at most one line, which a low-resolution
timer cannot see.  Replaying a fixed stream of the attacker's own entries
after the operation sequence turns that one-line difference into a miss
every four accesses in sequence A while every other sequence stays at a
single compulsory miss: the first access (e1) misses everywhere and leaves
sequence A missing a different entry (e3) than the rest (e2); the loop then
keeps re-evicting exactly the entry A lacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .cache import LatencyModel, Timer
from .attack import AttackSession, SequenceClass, _scratch_session, entry_index, run_sequence

AMPLIFIER_PERIOD = ("e7", "e5", "e6", "e3", "e7", "e5", "e6", "e1")


def amplifier_sequence(periods: int = 7) -> tuple[str, ...]:
    """The fixed 1 + 8*periods access stream (57 accesses by default)."""
    if periods < 0:
        raise ValueError("periods must be >= 0")
    return ("e1",) + AMPLIFIER_PERIOD * periods


@dataclass(frozen=True)
class AmplifierResult:
    seq_class: SequenceClass
    misses: int
    cycles: int | None = None
    coarse_ticks: int | None = None
    # (label, hit, evicted label) per access
    trace: tuple[tuple[str, bool, str], ...] = ()


def amplifier_execute(
    sequence: tuple[str, ...] | None = None,
    mode: str = "aware",
    ways: int = 8,
    latency: LatencyModel | None = None,
    timer: Timer = Timer.FINE,
    keep_trace: bool = False,
) -> dict[SequenceClass, AmplifierResult]:
    """Replay the amplifier stream after each operation sequence."""
    sequence = amplifier_sequence() if sequence is None else tuple(sequence)
    results = {}
    for seq in SequenceClass:
        session = _scratch_session(ways, mode)
        run_sequence(session, seq)
        outcomes = []
        trace = []
        for label in sequence:
            out = session.read_entry(entry_index(label))
            outcomes.append(out)
            if keep_trace:
                trace.append((label, out.hit, session.label_of_tag(out.evicted_tag)))
        misses = sum(1 for o in outcomes if not o.hit)
        cycles = ticks = None
        if latency is not None:
            cycles = latency.cycles(outcomes)
            if timer is Timer.COARSE:
                ticks = latency.coarse_ticks(cycles)
        results[seq] = AmplifierResult(seq, misses, cycles, ticks, tuple(trace))
    return results


# -- bounded search for amplifying sequences --------------------------------


@dataclass(frozen=True)
class ClassState:
    """Replacement bits plus the label resident in each way."""

    bits: int
    residents: tuple[str, ...]


def _snapshot(session: AttackSession) -> ClassState:
    return ClassState(session.tree_state().bits, session.resident_labels())


@lru_cache(maxsize=None)
def sequence_class_states(mode: str, ways: int) -> dict[SequenceClass, ClassState]:
    out = {}
    for seq in SequenceClass:
        session = _scratch_session(ways, mode)
        run_sequence(session, seq)
        out[seq] = _snapshot(session)
    return out


@dataclass(frozen=True)
class AmplifierPlan:
    sequence: tuple[str, ...]
    differential: int
    misses_a: int
    misses_other: int


def _step(state: ClassState, label: str, masks) -> tuple[ClassState, bool]:
    clears, sets_, victims = masks
    residents = state.residents
    if label in residents:
        way = residents.index(label)
        return ClassState((state.bits & ~clears[way]) | sets_[way], residents), False
    way = victims[state.bits]
    new_res = residents[:way] + (label,) + residents[way + 1 :]
    return ClassState((state.bits & ~clears[way]) | sets_[way], new_res), True


def amplifier_search(
    budget: int,
    mode: str = "aware",
    ways: int = 8,
    beam_width: int = 256,
    states: tuple[ClassState, ClassState, ClassState] | None = None,
) -> AmplifierPlan | None:
    """Beam search over attacker-entry accesses for a high-differential stream.

    Tracks sequence A against the two distinct non-A states (B==C and D==E
    label-for-label), prunes any access on which the non-A states disagree
    about hit/miss, and maximizes missesA - missesOther.  Returns None when
    no positive differential exists within the budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    from .plru import _touch_masks, _victim_table

    clears, sets_ = _touch_masks(ways)
    masks = (clears, sets_, _victim_table(ways))
    if states is None:
        table = sequence_class_states(mode, ways)
        states = (
            table[SequenceClass.A],
            table[SequenceClass.B],
            table[SequenceClass.D],
        )
    labels = [f"e{k}" for k in range(ways)]
    # node: (diff, misses_a, misses_other, stateA, stateB, stateD, seq)
    start = (0, 0, 0, states[0], states[1], states[2], ())
    frontier = [start]
    best: tuple[int, tuple[str, ...], int, int] = (0, (), 0, 0)
    for _ in range(budget):
        nxt = {}
        for diff, ma, mo, sa, sb, sd, seq in frontier:
            if sa == sb and sa == sd:
                continue  # classes converged; differential frozen
            for label in labels:
                na, miss_a = _step(sa, label, masks)
                nb, miss_b = _step(sb, label, masks)
                nd, miss_d = _step(sd, label, masks)
                if miss_b != miss_d:
                    continue  # non-A classes would diverge
                cand = (
                    diff + int(miss_a) - int(miss_b),
                    ma + int(miss_a),
                    mo + int(miss_b),
                    na,
                    nb,
                    nd,
                    seq + (label,),
                )
                key = (na, nb, nd)
                held = nxt.get(key)
                if held is None or cand[0] > held[0]:
                    nxt[key] = cand
        frontier = sorted(nxt.values(), key=lambda n: -n[0])[:beam_width]
        if not frontier:
            break
        top = frontier[0]
        if top[0] > best[0]:
            best = (top[0], top[6], top[1], top[2])
    if best[0] <= 0:
        return None
    return AmplifierPlan(best[1], best[0], best[2], best[3])
