"""Scheduling timeline shared by attacker and victim, plus run configuration.

One tick is one attacker-visible scheduling unit.  Attacker and victim each
supply events at non-decreasing ticks; the merge is stable and breaks equal
ticks by actor rank (attacker first by default, configurable) so boundary
behavior is pinned down rather than platform noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

ATTACKER_ACTOR = "attacker"
VICTIM_ACTOR = "victim"
TIE_ORDERS = ("attacker", "victim")


@dataclass(frozen=True)
class TimelineEvent:
    tick: int
    actor: str
    kind: str  # free-form op tag ("write", "read", "retouch", ...)
    addr: int | None = None


def _check_stream(events, actor: str) -> None:
    last = None
    for ev in events:
        if ev.tick < 0:
            raise ValueError(f"{actor} event at negative tick {ev.tick}")
        if last is not None and ev.tick < last:
            raise ValueError(f"{actor} events not in tick order at tick {ev.tick}")
        last = ev.tick


def merge(
    attacker_events: list[TimelineEvent],
    victim_events: list[TimelineEvent],
    tie: str = "attacker",
) -> list[TimelineEvent]:
    """Interleave two per-actor streams into one deterministic order."""
    if tie not in TIE_ORDERS:
        raise ValueError(f"unknown tie order {tie!r}; expected one of {TIE_ORDERS}")
    _check_stream(attacker_events, ATTACKER_ACTOR)
    _check_stream(victim_events, VICTIM_ACTOR)
    first = ATTACKER_ACTOR if tie == "attacker" else VICTIM_ACTOR
    keyed = []
    for seq, ev in enumerate(attacker_events):
        keyed.append((ev.tick, 0 if ev.actor == first else 1, 0, seq, ev))
    for seq, ev in enumerate(victim_events):
        keyed.append((ev.tick, 0 if ev.actor == first else 1, 1, seq, ev))
    keyed.sort(key=lambda item: item[:4])
    return [item[4] for item in keyed]


class ConfigError(Exception):
    """Bad or missing run configuration; maps to CLI exit code 2."""


@dataclass
class ExperimentConfig:
    """Flat run configuration; JSON file fields share these names."""

    profile: str = "x86-cfl"
    policy: str = "tree-plru"
    policy_seed: int = 0
    cold_fill: str = "victim"
    retouch_mode: str = "aware"
    tie: str = "attacker"
    seed: int | None = None
    out_dir: str = "reports"
    plot: bool = True
    # deterministic single-line victim
    prefetch_tick: int = 100
    access_tick: int = 160
    victim_accesses: bool = True
    # delay sweep
    sweep_d_max: int = 700
    sweep_step: int = 2
    sweep_trials: int = 100
    # differential amplifier
    amplifier_budget: int = 57
    coarse_ratio: int = 133
    # table-lookup victim
    aes_defense: str = "lock"
    aes_attack: str = "retouch"
    aes_encryptions: int = 500
    aes_monitored_sets: int = 16
    aes_probe_after_round: int = 3
    aes_key_hex: str = "00" * 16

    def validate(self) -> None:
        from .cache import COLD_FILL_MODES, PROFILES
        from .plru import POLICY_KINDS

        def bad(name, why):
            raise ConfigError(f"config field {name!r}: {why}")

        if self.profile not in PROFILES:
            bad("profile", f"{self.profile!r} not one of {sorted(PROFILES)}")
        if self.policy not in POLICY_KINDS:
            bad("policy", f"{self.policy!r} not one of {sorted(POLICY_KINDS)}")
        if self.cold_fill not in COLD_FILL_MODES:
            bad("cold_fill", f"{self.cold_fill!r} not one of {COLD_FILL_MODES}")
        if self.retouch_mode not in ("naive", "aware"):
            bad("retouch_mode", f"{self.retouch_mode!r} not 'naive' or 'aware'")
        if self.tie not in TIE_ORDERS:
            bad("tie", f"{self.tie!r} not one of {TIE_ORDERS}")
        if self.seed is None:
            bad("seed", "required (set it in the config file or pass --seed)")
        if not isinstance(self.seed, int):
            bad("seed", "must be an integer")
        for name in (
            "prefetch_tick",
            "access_tick",
            "sweep_d_max",
            "sweep_trials",
            "amplifier_budget",
            "aes_encryptions",
            "aes_monitored_sets",
        ):
            if getattr(self, name) < 0:
                bad(name, "must be >= 0")
        if self.sweep_step <= 0:
            bad("sweep_step", "must be > 0")
        if self.coarse_ratio < 1:
            bad("coarse_ratio", "must be >= 1")
        if self.aes_defense not in ("none", "preload", "lock"):
            bad("aes_defense", f"{self.aes_defense!r} not one of none/preload/lock")
        if self.aes_attack not in ("retouch", "probe"):
            bad("aes_attack", f"{self.aes_attack!r} not 'retouch' or 'probe'")
        if not 1 <= self.aes_probe_after_round <= 10:
            bad("aes_probe_after_round", "must be in 1..10")
        if not 1 <= self.aes_monitored_sets <= 64:
            bad("aes_monitored_sets", "must be in 1..64")
        try:
            key = bytes.fromhex(self.aes_key_hex)
        except ValueError:
            bad("aes_key_hex", "not valid hex")
        else:
            if len(key) != 16:
                bad("aes_key_hex", "must encode exactly 16 bytes")


def load_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read the JSON config file (if any) and apply non-None overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path!r} must hold a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(**data)
    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name not in known:
            raise ConfigError(f"unknown config override {name!r}")
        setattr(cfg, name, value)
    cfg.validate()
    return cfg
