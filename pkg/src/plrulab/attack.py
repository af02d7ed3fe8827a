"""Prime+retouch attack engine over one cache set.

The attacker fills the monitored set with its own entries e0..e{W-1}
(prime), later re-touches one entry to freshen the replacement metadata
(retouch), and finally probes with fresh lines, reading back only hit/miss
outcomes of its own accesses.  Victim activity relative to the retouch falls
into five operation sequences (prefetch P, retouch R, victim access A):

    A: P R A      B: P R      C: P A R      D: R P A      E: R P

Naive mode retouches e1, an entry the prime leaves in the right half of
the metadata tree; aware mode retouches e0, the entry that was the
eviction candidate immediately after the prime, which makes sequence A's
final eviction candidate unique among the five and removes the naive mode's
A/E collision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

from .cache import ATTACKER, VICTIM, CacheModel, Geometry
from .plru import PolicySpec, TreePlru, TreeState
from .timeline import TimelineEvent, merge

RETOUCH_MODES = ("naive", "aware")


class SequenceClass(enum.Enum):
    """Victim/attacker interleavings, named by their conventional letters."""

    A = ("prefetch", "retouch", "access")
    B = ("prefetch", "retouch")
    C = ("prefetch", "access", "retouch")
    D = ("retouch", "prefetch", "access")
    E = ("retouch", "prefetch")

    @property
    def order(self) -> tuple[str, ...]:
        return self.value

    @property
    def has_access(self) -> bool:
        return "access" in self.value


class Bucket(enum.Enum):
    """What the probe pipeline can actually distinguish."""

    SYNC_ACCESS = "A"  # sequence A alone (aware mode)
    SYNC_NO_ACCESS = "BC"
    UNSYNC = "DE"


def entry_index(label: str) -> int:
    if not label.startswith("e"):
        raise ValueError(f"{label!r} is not an attacker entry label")
    return int(label[1:])


class AttackSession:
    """Attacker state for one monitored set of one cache model.

    Address columns within the set: columns 0..W-1 are the primed entries
    e0..e{W-1}, column W is the default victim line V, and higher columns
    are fresh probe lines f1, f2, ... (attacker-owned).
    """

    def __init__(
        self,
        model: CacheModel,
        set_index: int = 0,
        mode: str = "aware",
    ):
        if mode not in RETOUCH_MODES:
            raise ValueError(f"unknown retouch mode {mode!r}")
        geo = model.geometry
        self.model = model
        self.set_index = set_index
        self.mode = mode
        self.ways = geo.ways
        self._base = set_index * geo.line_size
        self._span = geo.span
        self.entry_addrs = [self._base + k * self._span for k in range(self.ways)]
        self.victim_addr = self._base + self.ways * self._span
        self._fresh_next = self.ways + 1
        self.retouch_entry = 0 if mode == "aware" else 1

    # -- labels -----------------------------------------------------------

    def label_of_tag(self, tag: int | None) -> str:
        if tag is None:
            return ""
        column = tag // self._span
        if column < self.ways:
            return f"e{column}"
        if column == self.ways:
            return "V"
        return f"f{column - self.ways}"

    def addr_of_label(self, label: str) -> int:
        if label == "V":
            return self.victim_addr
        if label.startswith("e"):
            k = entry_index(label)
            if not 0 <= k < self.ways:
                raise ValueError(f"no such entry {label!r} with {self.ways} ways")
            return self.entry_addrs[k]
        if label.startswith("f") and label[1:].isdigit():
            return self._base + (self.ways + int(label[1:])) * self._span
        raise ValueError(f"unknown line label {label!r}")

    # -- attacker ops -------------------------------------------------------

    def reset(self) -> None:
        self.model.flush_set(self.set_index)
        self._fresh_next = self.ways + 1

    def prime(self) -> None:
        for addr in self.entry_addrs:
            self.model.access(addr, ATTACKER, "read")

    def retouch(self):
        return self.model.access(self.entry_addrs[self.retouch_entry], ATTACKER, "read")

    def read_entry(self, k: int):
        return self.model.access(self.entry_addrs[k], ATTACKER, "read")

    def fresh_line(self) -> int:
        addr = self._base + self._fresh_next * self._span
        self._fresh_next += 1
        return addr

    def probe_fresh(self):
        return self.model.access(self.fresh_line(), ATTACKER, "read")

    # -- victim ops (driven by the trial runner) ----------------------------

    def victim_access(self, op: str, addr: int | None = None):
        return self.model.access(
            self.victim_addr if addr is None else addr, VICTIM, op
        )

    # -- state inspection ----------------------------------------------------

    def tree_state(self) -> TreeState:
        pol = self.model.policy_state(self.set_index)
        if not isinstance(pol, TreePlru):
            raise TypeError("tree snapshots need the tree-plru policy")
        return pol.state()

    def plru_label(self) -> str:
        pol = self.model.policy_state(self.set_index)
        way = pol.victim()
        _, tag, _ = self.model.set_contents(self.set_index)[way]
        return self.label_of_tag(tag)

    def resident_labels(self) -> tuple[str, ...]:
        return tuple(
            self.label_of_tag(tag)
            for _, tag, _ in self.model.set_contents(self.set_index)
        )


def _scratch_session(ways: int, mode: str) -> AttackSession:
    geometry = Geometry(f"scratch-{ways}way", 16, ways, 64)
    model = CacheModel(geometry, PolicySpec("tree-plru"), cold_fill="victim")
    return AttackSession(model, set_index=0, mode=mode)


def run_sequence(session: AttackSession, seq: SequenceClass) -> None:
    """Replay one reference interleaving from a fresh prime."""
    session.reset()
    session.prime()
    for op in seq.order:
        if op == "prefetch":
            session.victim_access("write")
        elif op == "access":
            session.victim_access("read")
        else:
            session.retouch()


def final_plru_table(mode: str, ways: int = 8) -> dict[SequenceClass, str]:
    """Label of the eviction candidate left behind by each sequence."""
    session = _scratch_session(ways, mode)
    table = {}
    for seq in SequenceClass:
        run_sequence(session, seq)
        table[seq] = session.plru_label()
    return table


@dataclass(frozen=True)
class ClassifierCalibration:
    """Probe labels the classifier relies on, derived by replay at build time.

    ``candidate_a``: the entry whose eviction is unique to sequence A, read
    after the first fresh probe; a miss there means bucket A.
    ``check_bc``: the entry the second fresh probe displaces in sequences
    B/C but not in D/E; a miss there after the recovery probe means bucket
    SYNC_NO_ACCESS, a hit means UNSYNC.
    """

    candidate_a: str
    check_bc: str
    evicted_bc: str
    evicted_de: str


@lru_cache(maxsize=None)
def classifier_calibration(ways: int, mode: str) -> ClassifierCalibration:
    table = final_plru_table(mode, ways)
    cand = table[SequenceClass.A]
    others = {table[s] for s in SequenceClass if s is not SequenceClass.A}
    if cand in others:
        raise ValueError(
            f"retouch mode {mode!r} leaves no sequence-A-unique candidate"
        )
    # Replay a representative of {B, C} and of {D, E} through the same
    # probe script the classifier uses, recording what the recovery probe
    # displaces in each branch.
    evicted = {}
    for seq in (SequenceClass.B, SequenceClass.D):
        session = _scratch_session(ways, mode)
        run_sequence(session, seq)
        session.probe_fresh()
        out = session.read_entry(entry_index(cand))
        if not out.hit:
            raise RuntimeError("calibration replay unexpectedly classified A")
        session.read_entry(0)
        probe = session.probe_fresh()
        evicted[seq] = session.label_of_tag(probe.evicted_tag)
    if evicted[SequenceClass.B] == evicted[SequenceClass.D]:
        raise ValueError("recovery probe cannot distinguish {B,C} from {D,E}")
    return ClassifierCalibration(
        candidate_a=cand,
        check_bc=evicted[SequenceClass.B],
        evicted_bc=evicted[SequenceClass.B],
        evicted_de=evicted[SequenceClass.D],
    )


@dataclass(frozen=True)
class ProbeFirstResult:
    evicted_label: str
    candidate_label: str
    candidate_hit: bool

    @property
    def is_a(self) -> bool:
        return not self.candidate_hit


def probe_first(session: AttackSession) -> ProbeFirstResult:
    """Displace the current eviction candidate, then test the A-unique entry."""
    cal = classifier_calibration(session.ways, session.mode)
    probe = session.probe_fresh()
    check = session.read_entry(entry_index(cal.candidate_a))
    return ProbeFirstResult(
        evicted_label=session.label_of_tag(probe.evicted_tag),
        candidate_label=cal.candidate_a,
        candidate_hit=check.hit,
    )


@dataclass(frozen=True)
class RecoveryResult:
    evicted_label: str
    check_label: str
    check_hit: bool
    bucket: Bucket


def recover_sync(session: AttackSession) -> RecoveryResult:
    """Separate {B, C} from {D, E} after a non-A first probe.

    Re-reading e0 and probing again displaces a different entry depending
    on whether the retouch re-installed e0 in the tree half opposite the
    victim's line ({B, C}) or hit it in place ({D, E}); one more hit/miss
    check on the displaced candidate reveals the branch.
    """
    cal = classifier_calibration(session.ways, session.mode)
    session.read_entry(0)
    probe = session.probe_fresh()
    check = session.read_entry(entry_index(cal.check_bc))
    bucket = Bucket.SYNC_NO_ACCESS if not check.hit else Bucket.UNSYNC
    return RecoveryResult(
        evicted_label=session.label_of_tag(probe.evicted_tag),
        check_label=cal.check_bc,
        check_hit=check.hit,
        bucket=bucket,
    )


@dataclass(frozen=True)
class TrialOutcome:
    bucket: Bucket
    truth: SequenceClass | None
    first_probe_evicted: str
    recovery_probe_evicted: str | None
    victim_evictions_by_attacker: int
    victim_evictions_total: int
    aborted: bool
    abort_by: str | None = None


def classify_trial(session: AttackSession) -> tuple[Bucket, ProbeFirstResult, RecoveryResult | None]:
    """Bucket the completed trial using only attacker hit/miss outcomes."""
    first = probe_first(session)
    if first.is_a:
        return Bucket.SYNC_ACCESS, first, None
    rec = recover_sync(session)
    return rec.bucket, first, rec


def ground_truth_class(events: list[TimelineEvent]) -> SequenceClass:
    """Sequence class implied by the executed merge order."""
    order = [ev for ev in events if ev.kind in ("retouch", "write", "read")]
    victim_positions = [i for i, ev in enumerate(order) if ev.actor == "victim"]
    if not victim_positions:
        raise ValueError("timeline holds no victim event")
    retouch_positions = [i for i, ev in enumerate(order) if ev.kind == "retouch"]
    if len(retouch_positions) != 1:
        raise ValueError("timeline must hold exactly one retouch")
    r = retouch_positions[0]
    prefetch = victim_positions[0]
    accesses_after_prefetch = [i for i in victim_positions[1:]]
    if r < prefetch:
        return SequenceClass.D if accesses_after_prefetch else SequenceClass.E
    if any(i > r for i in accesses_after_prefetch):
        return SequenceClass.A
    return SequenceClass.C if accesses_after_prefetch else SequenceClass.B


def run_trial(
    session: AttackSession,
    victim_events: list[tuple[int, str, int]],
    retouch_tick: int,
    tie: str = "attacker",
    tx_owner: str | None = None,
) -> TrialOutcome:
    """One full trial: prime, merged timeline, probe classification.

    ``victim_events`` holds (tick, "write"|"read", addr) items; the first
    one is the victim's install (its prefetch).  Between the prime and the
    first probe the attacker performs exactly one access, the retouch.
    With ``tx_owner`` set, that owner's transaction spans the timeline and
    the probes, and the outcome records whether it aborted.
    """
    model = session.model
    before_by = model.evictions_of(VICTIM, ATTACKER)
    before_total = model.evictions_of(VICTIM)
    session.reset()
    session.prime()
    monitor = model.tx_begin(tx_owner) if tx_owner is not None else None
    v_events = [
        TimelineEvent(tick, "victim", op, addr) for tick, op, addr in victim_events
    ]
    a_events = [TimelineEvent(retouch_tick, "attacker", "retouch")]
    ordered = merge(a_events, v_events, tie)
    for ev in ordered:
        if ev.kind == "retouch":
            session.retouch()
        else:
            session.victim_access(ev.kind, ev.addr)
    bucket, first, rec = classify_trial(session)
    if monitor is not None:
        model.tx_end()
    return TrialOutcome(
        bucket=bucket,
        truth=ground_truth_class(ordered) if victim_events else None,
        first_probe_evicted=first.evicted_label,
        recovery_probe_evicted=rec.evicted_label if rec else None,
        victim_evictions_by_attacker=model.evictions_of(VICTIM, ATTACKER) - before_by,
        victim_evictions_total=model.evictions_of(VICTIM) - before_total,
        aborted=monitor.aborted if monitor is not None else False,
        abort_by=monitor.abort_by if monitor is not None else None,
    )


@dataclass(frozen=True)
class SweepRow:
    delay: int
    count_a: int
    count_sync_noaccess: int
    count_unsync: int


def poor_man_sweep(
    session: AttackSession,
    victim,
    d_max: int,
    step: int,
    trials: int,
    tie: str = "attacker",
    record_truth: bool = False,
) -> list[SweepRow] | tuple[list[SweepRow], dict[int, SequenceClass]]:
    """Slide the retouch from d_max down to 0 and bucket-count each delay.

    The victim supplies its event stream once per trial via
    ``victim.events(addr)``; with no shared clock the attacker recovers the
    victim's schedule from where the bucket counts flip.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rows = []
    truths: dict[int, SequenceClass] = {}
    for delay in range(d_max, -1, -step):
        counts = {Bucket.SYNC_ACCESS: 0, Bucket.SYNC_NO_ACCESS: 0, Bucket.UNSYNC: 0}
        truth = None
        for _ in range(trials):
            outcome = run_trial(
                session, victim.events(session.victim_addr), delay, tie
            )
            counts[outcome.bucket] += 1
            truth = outcome.truth
        rows.append(
            SweepRow(
                delay,
                counts[Bucket.SYNC_ACCESS],
                counts[Bucket.SYNC_NO_ACCESS],
                counts[Bucket.UNSYNC],
            )
        )
        truths[delay] = truth
    if record_truth:
        return rows, truths
    return rows


def sweep_crossover(rows: list[SweepRow]) -> int | None:
    """Largest delay at which the unsync count overtakes sync-no-access."""
    for row in sorted(rows, key=lambda r: -r.delay):
        if row.count_unsync > row.count_sync_noaccess:
            return row.delay
    return None
