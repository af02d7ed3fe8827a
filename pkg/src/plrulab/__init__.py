"""Deterministic Tree-PLRU replacement lab and eviction side-channel toolkit."""

from .plru import (
    PolicySpec,
    TreeState,
    divergence_witness,
    initial_state,
    parse_dump,
    plru_way,
    touch,
)
from .cache import CacheModel, Geometry, LatencyModel, PROFILES, Timer, TxMonitor, map_set
from .probe import ProbeSpec, enumerate_combos, fingerprint, identify_policy
from .attack import (
    AttackSession,
    Bucket,
    SequenceClass,
    classify_trial,
    final_plru_table,
    poor_man_sweep,
    run_trial,
    sweep_crossover,
)
from .amplify import amplifier_execute, amplifier_search, amplifier_sequence
from .timeline import ConfigError, ExperimentConfig, TimelineEvent, load_config, merge
from .victims import AesVictim, PrefetchVictim, encrypt_trace, first_round_accesses, heatmap_experiment

__version__ = "0.1.0"

__all__ = [
    "PolicySpec",
    "TreeState",
    "divergence_witness",
    "initial_state",
    "parse_dump",
    "plru_way",
    "touch",
    "CacheModel",
    "Geometry",
    "LatencyModel",
    "PROFILES",
    "Timer",
    "TxMonitor",
    "map_set",
    "ProbeSpec",
    "enumerate_combos",
    "fingerprint",
    "identify_policy",
    "AttackSession",
    "Bucket",
    "SequenceClass",
    "classify_trial",
    "final_plru_table",
    "poor_man_sweep",
    "run_trial",
    "sweep_crossover",
    "amplifier_execute",
    "amplifier_search",
    "amplifier_sequence",
    "ConfigError",
    "ExperimentConfig",
    "TimelineEvent",
    "load_config",
    "merge",
    "AesVictim",
    "PrefetchVictim",
    "encrypt_trace",
    "first_round_accesses",
    "heatmap_experiment",
    "__version__",
]
