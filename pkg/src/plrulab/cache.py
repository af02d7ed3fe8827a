"""Set-associative L1 model with owner labels, eviction monitoring and timers.

Only one cache level is modeled; a miss always installs the line.  Every
resident line carries an owner label so experiments can prove which actor's
lines were displaced.  A transactional monitor mirrors the abort rule of
hardware transactional memory at L1 granularity: the transaction dies exactly
when one of its write-set lines leaves the cache, and read-set evictions are
harmless.
"""

from __future__ import annotations

import csv
import enum
import random
from dataclasses import dataclass, field

from .plru import PolicySpec, ReplacementPolicy, make_policy

ATTACKER = "attacker"
VICTIM = "victim"
FRESH = "fresh"
OWNERS = (ATTACKER, VICTIM, FRESH)

COLD_FILL_MODES = ("victim", "index")


@dataclass(frozen=True)
class Geometry:
    name: str
    sets: int
    ways: int
    line_size: int

    @property
    def span(self) -> int:
        return self.sets * self.line_size


PROFILES = {
    "x86-cfl": Geometry("x86-cfl", 64, 8, 64),
    "m1-firestorm": Geometry("m1-firestorm", 256, 8, 64),
    "m1-icestorm": Geometry("m1-icestorm", 128, 8, 64),
}

# (hit, miss) load-to-use cycles per profile; the x86 pair is a nominal
# L1/L2 analog, only the two M1 pairs are calibration targets.
LATENCY_CYCLES = {
    "x86-cfl": (4, 12),
    "m1-firestorm": (4, 16),
    "m1-icestorm": (2, 12),
}

DEFAULT_COARSE_RATIO = 133  # ~3.2 GHz core clock / 24 MHz coarse counter


def profile(name: str) -> Geometry:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown profile {name!r}; expected one of {sorted(PROFILES)}"
        ) from None


def map_set(geometry: Geometry, addr: int) -> int:
    """Physical address to set index: addr mod cache-span, line-divided."""
    if addr < 0:
        raise ValueError(f"negative address {addr:#x}")
    return (addr % geometry.span) // geometry.line_size


def line_addr(geometry: Geometry, addr: int) -> int:
    return addr - (addr % geometry.line_size)


@dataclass(frozen=True)
class AccessOutcome:
    hit: bool
    set_index: int
    way: int
    evicted_tag: int | None = None
    evicted_owner: str | None = None


class TxAbort(enum.Enum):
    NONE = "none"
    WRITE_SET_EVICTED = "write-set-evicted"


@dataclass
class TxMonitor:
    """Read/write-set tracker for one transaction owner."""

    owner: str
    read_set: set[int] = field(default_factory=set)
    write_set: set[int] = field(default_factory=set)
    aborted: bool = False
    abort_line: int | None = None
    abort_by: str | None = None  # owner of the access that caused the abort

    def note_access(self, tag: int, op: str) -> None:
        if op == "write":
            self.write_set.add(tag)
        else:
            self.read_set.add(tag)

    def note_eviction(self, tag: int, by_owner: str) -> None:
        if tag in self.write_set and not self.aborted:
            self.aborted = True
            self.abort_line = tag
            self.abort_by = by_owner


class CacheModel:
    """One L1 cache: per-set tag stores, replacement state and counters.

    ``cold_fill`` picks where a miss lands while a set still has empty
    slots: "victim" installs at the policy's victim way (so an in-order fill
    of an empty 8-way set lands on ways 0,4,2,6,1,5,3,7 under the tree
    policy), "index" installs at the lowest empty way first.
    """

    def __init__(
        self,
        geometry: Geometry,
        policy: PolicySpec = PolicySpec("tree-plru"),
        cold_fill: str = "victim",
        log_events: bool = False,
    ):
        if cold_fill not in COLD_FILL_MODES:
            raise ValueError(
                f"unknown cold_fill {cold_fill!r}; expected one of {COLD_FILL_MODES}"
            )
        self.geometry = geometry
        self.policy_spec = policy
        self.cold_fill = cold_fill
        self.log_events = log_events
        self.events: list[tuple] = []
        self._step = 0
        self._tags: list[list[int | None]] = [
            [None] * geometry.ways for _ in range(geometry.sets)
        ]
        self._owners: list[list[str | None]] = [
            [None] * geometry.ways for _ in range(geometry.sets)
        ]
        self._where: list[dict[int, int]] = [{} for _ in range(geometry.sets)]
        self._policies: list[ReplacementPolicy] = [
            make_policy(policy, geometry.ways) for _ in range(geometry.sets)
        ]
        self.hits = 0
        self.misses = 0
        # (accessing owner, evicted owner) -> count
        self.evictions: dict[tuple[str, str], int] = {}
        self._monitor: TxMonitor | None = None

    # -- transactions ---------------------------------------------------

    def tx_begin(self, owner: str) -> TxMonitor:
        if self._monitor is not None:
            raise RuntimeError("nested transaction begin")
        self._monitor = TxMonitor(owner)
        return self._monitor

    def tx_end(self) -> TxMonitor:
        if self._monitor is None:
            raise RuntimeError("transaction end without begin")
        monitor = self._monitor
        self._monitor = None
        return monitor

    @property
    def in_tx(self) -> bool:
        return self._monitor is not None

    @property
    def monitor(self) -> TxMonitor | None:
        return self._monitor

    # -- accesses -------------------------------------------------------

    def access(self, addr: int, owner: str, op: str = "read") -> AccessOutcome:
        if owner not in OWNERS:
            raise ValueError(f"unknown owner {owner!r}")
        if op not in ("read", "write"):
            raise ValueError(f"unknown op {op!r}")
        s = map_set(self.geometry, addr)
        tag = line_addr(self.geometry, addr)
        pol = self._policies[s]
        where = self._where[s]
        monitor = self._monitor
        if monitor is not None and owner == monitor.owner:
            monitor.note_access(tag, op)

        way = where.get(tag)
        if way is not None:
            pol.update(way, True)
            self.hits += 1
            outcome = AccessOutcome(True, s, way)
        else:
            tags = self._tags[s]
            owners = self._owners[s]
            if self.cold_fill == "index" and None in tags:
                way = tags.index(None)
            else:
                way = pol.victim()
            evicted_tag = tags[way]
            evicted_owner = owners[way]
            if evicted_tag is not None:
                del where[evicted_tag]
                key = (owner, evicted_owner)
                self.evictions[key] = self.evictions.get(key, 0) + 1
                if monitor is not None:
                    monitor.note_eviction(evicted_tag, owner)
            tags[way] = tag
            owners[way] = owner
            where[tag] = way
            pol.update(way, False)
            self.misses += 1
            outcome = AccessOutcome(False, s, way, evicted_tag, evicted_owner)
        if self.log_events:
            self.events.append(
                (
                    self._step,
                    owner,
                    op,
                    addr,
                    s,
                    outcome.way,
                    "hit" if outcome.hit else "miss",
                    outcome.evicted_owner or "",
                )
            )
        self._step += 1
        return outcome

    # -- maintenance ----------------------------------------------------

    def flush_set(self, set_index: int) -> None:
        """Clear one set's slots and replacement state (between trials)."""
        self._tags[set_index] = [None] * self.geometry.ways
        self._owners[set_index] = [None] * self.geometry.ways
        self._where[set_index].clear()
        self._policies[set_index].reset()

    def flush(self) -> None:
        for s in range(self.geometry.sets):
            self.flush_set(s)

    def evictions_of(self, of_owner: str, by_owner: str | None = None) -> int:
        return sum(
            n
            for (by, of), n in self.evictions.items()
            if of == of_owner and (by_owner is None or by == by_owner)
        )

    def resident(self, addr: int) -> bool:
        s = map_set(self.geometry, addr)
        return line_addr(self.geometry, addr) in self._where[s]

    def set_contents(self, set_index: int) -> list[tuple[int, int | None, str | None]]:
        """(way, tag, owner) triples for one set."""
        return [
            (w, self._tags[set_index][w], self._owners[set_index][w])
            for w in range(self.geometry.ways)
        ]

    def policy_dump(self, set_index: int) -> str:
        return self._policies[set_index].dump()

    def policy_state(self, set_index: int) -> ReplacementPolicy:
        return self._policies[set_index]

    def export_event_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "owner", "op", "addr", "set", "way", "outcome", "evicted_owner"]
            )
            writer.writerows(self.events)


class Timer(enum.Enum):
    FINE = "fine"
    COARSE = "coarse"


class LatencyModel:
    """Cycle accounting plus the coarse low-resolution counter analog.

    Fine latency is the exact cycle sum.  The coarse reading is
    floor((phase + cycles) / coarse_ratio) with a fresh uniformly seeded
    phase per measurement, mimicking an unsynchronized slow counter.
    """

    def __init__(
        self,
        profile_name: str,
        coarse_ratio: int = DEFAULT_COARSE_RATIO,
        seed: int = 0,
    ):
        if profile_name not in LATENCY_CYCLES:
            raise ValueError(f"no latency calibration for profile {profile_name!r}")
        if coarse_ratio < 1:
            raise ValueError("coarse_ratio must be >= 1")
        self.profile_name = profile_name
        self.hit_cycles, self.miss_cycles = LATENCY_CYCLES[profile_name]
        self.coarse_ratio = coarse_ratio
        self._rng = random.Random(seed)

    def cycles(self, outcomes) -> int:
        return sum(
            self.hit_cycles if o.hit else self.miss_cycles for o in outcomes
        )

    def coarse_ticks(self, cycles: int, phase: int | None = None) -> int:
        if phase is None:
            phase = self._rng.randrange(self.coarse_ratio)
        return (phase + cycles) // self.coarse_ratio

    def measure(
        self,
        model: CacheModel,
        accesses,
        timer: Timer = Timer.FINE,
    ) -> int:
        """Run (addr, owner, op) accesses and return the elapsed reading."""
        outcomes = [model.access(addr, owner, op) for addr, owner, op in accesses]
        total = self.cycles(outcomes)
        if timer is Timer.FINE:
            return total
        return self.coarse_ticks(total)
