"""Replacement-policy reversing through transactional eviction sequences.

For each target slot t the prober replays, from a flushed set: reads of
X[0..t-1], a write of X[t], reads of X[t+1..W-1], an optional replay of a
hit combo (re-reads of chosen X lines), then fresh lines Y[0], Y[1], ...
inside a transaction.  The transaction aborts exactly when X[t] is evicted,
so the smallest aborting fresh-line count reveals the policy's eviction
order.  The map from hit combos to those eviction sequences is a behavioral
fingerprint that separates candidate policies.

The backend installs cold fills at the lowest empty way so that X[i] sits at
way i after the initial pass; the fingerprints below assume that placement.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .cache import ATTACKER, FRESH, CacheModel, Geometry, LatencyModel
from .plru import PolicySpec

DETECT_MODES = ("abort", "latency")


@dataclass(frozen=True)
class ProbeSpec:
    """Reversing run parameters."""

    ways: int = 8
    max_evict: int | None = None  # fresh lines tried per target; default W+1
    detect: str = "abort"
    set_index: int = 0

    def __post_init__(self) -> None:
        if self.detect not in DETECT_MODES:
            raise ValueError(
                f"unknown detect mode {self.detect!r}; expected one of {DETECT_MODES}"
            )

    @property
    def evict_limit(self) -> int:
        return self.max_evict if self.max_evict is not None else self.ways + 1


def probe_geometry(ways: int) -> Geometry:
    return Geometry(f"probe-{ways}way", 16, ways, 64)


def probe_model(policy: PolicySpec, spec: ProbeSpec) -> CacheModel:
    return CacheModel(probe_geometry(spec.ways), policy, cold_fill="index")


def _addrs(model: CacheModel, spec: ProbeSpec) -> tuple[list[int], list[int]]:
    geo = model.geometry
    base = spec.set_index * geo.line_size
    x = [base + i * geo.span for i in range(spec.ways)]
    y = [base + (spec.ways + i) * geo.span for i in range(spec.evict_limit)]
    return x, y


def _trial_aborts(
    model: CacheModel,
    spec: ProbeSpec,
    x: list[int],
    y: list[int],
    target: int,
    combo: tuple[int, ...],
    num_evict: int,
    latency: LatencyModel | None,
) -> bool:
    """One flushed-set replay; True when X[target] left the cache."""
    model.flush_set(spec.set_index)
    if spec.detect == "abort":
        model.tx_begin(ATTACKER)
    for i in range(spec.ways):
        model.access(x[i], ATTACKER, "write" if i == target else "read")
    for i in combo:
        model.access(x[i], ATTACKER, "read")
    for k in range(num_evict):
        model.access(y[k], FRESH, "read")
    if spec.detect == "abort":
        return model.tx_end().aborted
    outcome = model.access(x[target], ATTACKER, "read")
    cycles = latency.cycles([outcome])
    return cycles >= (latency.hit_cycles + latency.miss_cycles) / 2


def collect_evict_seq(
    model: CacheModel,
    spec: ProbeSpec,
    combo: tuple[int, ...] = (),
    latency: LatencyModel | None = None,
) -> list[int | None]:
    """Smallest aborting fresh-line count per target; None if none within limit."""
    for i in combo:
        if not 0 <= i < spec.ways:
            raise ValueError(f"combo index {i} out of range for {spec.ways} ways")
    if spec.detect == "latency" and latency is None:
        latency = LatencyModel("m1-firestorm")
    x, y = _addrs(model, spec)
    seq: list[int | None] = []
    for target in range(spec.ways):
        found = None
        for num_evict in range(1, spec.evict_limit + 1):
            if _trial_aborts(model, spec, x, y, target, combo, num_evict, latency):
                found = num_evict
                break
        seq.append(found)
    return seq


def fingerprint(
    policy: PolicySpec,
    spec: ProbeSpec,
    combos,
    latency: LatencyModel | None = None,
) -> dict[tuple[int, ...], tuple[int | None, ...]]:
    """Combo -> eviction sequence map for one backend policy."""
    model = probe_model(policy, spec)
    return {
        tuple(combo): tuple(collect_evict_seq(model, spec, tuple(combo), latency))
        for combo in combos
    }


def enumerate_combos(ways: int, max_len: int) -> list[tuple[int, ...]]:
    """Ordered hit combos up to max_len with no immediate repeats."""
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    out: list[tuple[int, ...]] = [()]
    for length in range(1, max_len + 1):
        for combo in itertools.product(range(ways), repeat=length):
            if any(a == b for a, b in zip(combo, combo[1:])):
                continue
            out.append(combo)
    return out


@dataclass(frozen=True)
class IdentificationResult:
    status: str  # "unique" | "ambiguous" | "none"
    matches: tuple[PolicySpec, ...]

    @property
    def policy(self) -> PolicySpec | None:
        return self.matches[0] if self.status == "unique" else None


def identify_policy(
    observed: dict[tuple[int, ...], tuple[int | None, ...]],
    candidates,
    spec: ProbeSpec,
    observed_repeat: dict | None = None,
    latency: LatencyModel | None = None,
) -> IdentificationResult:
    """Match an observed fingerprint against candidate policies.

    Deterministic candidates must match exactly on every combo.  A random
    candidate is credited only when a repeated collection of the observed
    fingerprint disagrees with the first one (a deterministic backend
    repeats itself exactly; the random policy's generator stream keeps
    advancing across trials, so its repeats differ).
    """
    combos = list(observed.keys())
    matches = []
    repeats_differ = observed_repeat is not None and observed_repeat != observed
    for cand in candidates:
        if cand.kind == "random":
            if repeats_differ:
                matches.append(cand)
            continue
        if repeats_differ:
            continue
        if fingerprint(cand, spec, combos, latency) == observed:
            matches.append(cand)
    if not matches:
        return IdentificationResult("none", ())
    if len(matches) == 1:
        return IdentificationResult("unique", tuple(matches))
    return IdentificationResult("ambiguous", tuple(matches))
