"""Command-line harness: one subcommand per experiment, CSV plus figures.

Every run is a pure function of (config, seed): the CSV bytes are identical
across repeats.  Exit codes: 0 success, 2 bad configuration, 3 a --check
assertion failed.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .amplify import amplifier_execute, amplifier_search, amplifier_sequence
from .attack import (
    AttackSession,
    SequenceClass,
    final_plru_table,
    poor_man_sweep,
    run_sequence,
    sweep_crossover,
)
from .cache import ATTACKER, VICTIM, CacheModel, LatencyModel, Timer, profile
from .plru import POLICY_KINDS, PolicySpec, TreePlru
from .probe import ProbeSpec, collect_evict_seq, enumerate_combos, identify_policy, probe_model
from .timeline import ConfigError, load_config
from .victims import PrefetchVictim, heatmap_experiment

OUT_ENV = "PLRULAB_OUT"

EXPECTED_PLRU_TABLE = {
    "naive": ("e3", "e2", "e2", "e3", "e3"),
    "aware": ("e3", "e2", "e2", "e2", "e2"),
}


def _out_dir(config) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _check_line(ok: bool, what: str) -> bool:
    print(f"check {'passed' if ok else 'FAILED'}: {what}")
    return ok


def _build_model(config) -> CacheModel:
    seed = config.policy_seed if config.policy == "random" else None
    return CacheModel(
        profile(config.profile),
        PolicySpec(config.policy, seed),
        cold_fill=config.cold_fill,
    )


# -- trace -------------------------------------------------------------------


def _trace_step(session: AttackSession, words: list[str]):
    op, args = words[0], words[1:]
    if op == "prime" and not args:
        session.prime()
        return None
    if op == "prefetch" and len(args) <= 1:
        return session.victim_access("write", session.addr_of_label(args[0]) if args else None)
    if op == "access" and len(args) <= 1:
        return session.victim_access("read", session.addr_of_label(args[0]) if args else None)
    if op == "retouch" and not args:
        return session.retouch()
    if op == "probe" and not args:
        return session.probe_fresh()
    if op == "read" and len(args) == 1:
        return session.model.access(session.addr_of_label(args[0]), ATTACKER, "read")
    raise ConfigError(f"unknown trace step {' '.join(words)!r}")


def cmd_trace(args, config) -> bool:
    model = CacheModel(
        profile(config.profile),
        PolicySpec(config.policy, config.policy_seed if config.policy == "random" else None),
        cold_fill=config.cold_fill,
        log_events=True,
    )
    session = AttackSession(model, set_index=0, mode=config.retouch_mode)
    steps = [s.strip() for s in (args.script or "").split(";") if s.strip()]
    dumps = [model.policy_dump(0)]

    def residents() -> str:
        return ",".join(label or "-" for label in session.resident_labels())

    print(f"start             state={dumps[0]}  resident={residents()}")
    for step in steps:
        try:
            outcome = _trace_step(session, step.split())
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        dumps.append(model.policy_dump(0))
        note = "" if outcome is None else ("hit " if outcome.hit else "miss")
        print(f"{step:<16}  {note:<5}state={dumps[-1]}  resident={residents()}")
    out = _out_dir(config)
    events_path = out / "trace_events.csv"
    model.export_event_log(events_path)
    print(f"trace: {len(steps)} steps, {len(model.events)} accesses -> {events_path}")
    if config.plot and isinstance(model.policy_state(0), TreePlru):
        from . import plots

        print(f"figure -> {plots.save_trace_bits(dumps, out / 'trace.png')}")
    return True


# -- sequences ---------------------------------------------------------------


def cmd_sequences(args, config) -> bool:
    mode = config.retouch_mode
    model = _build_model(config)
    rows = []
    labels = []
    for seq in SequenceClass:
        session = AttackSession(model, set_index=0, mode=mode)
        run_sequence(session, seq)
        label = session.plru_label()
        labels.append(label)
        rows.append((seq.name, ">".join(op[0].upper() for op in seq.order), label, session.model.policy_dump(0)))
    out = _out_dir(config)
    csv_path = out / "sequences.csv"
    _write_csv(csv_path, ["class", "order", "plru_entry", "tree_dump"], rows)
    summary = " ".join(f"{r[0]}={r[2]}" for r in rows)
    print(f"sequences mode={mode}: {summary} -> {csv_path}")
    if config.plot:
        from . import plots

        print(f"figure -> {plots.save_sequences(dict(zip(SequenceClass, labels)), out / 'sequences.png')}")
    if args.check:
        return _check_line(
            tuple(labels) == EXPECTED_PLRU_TABLE[mode],
            f"final eviction candidates match {EXPECTED_PLRU_TABLE[mode]}",
        )
    return True


# -- reverse -----------------------------------------------------------------


def _combo_str(combo: tuple[int, ...]) -> str:
    return "+".join(map(str, combo))


def cmd_reverse(args, config) -> bool:
    hidden_kind = args.hidden or config.policy
    if hidden_kind not in POLICY_KINDS:
        raise ConfigError(f"unknown hidden policy {hidden_kind!r}")
    hidden = PolicySpec(hidden_kind, config.policy_seed if hidden_kind == "random" else None)
    geo = profile(config.profile)
    spec = ProbeSpec(ways=geo.ways, detect=args.detect)
    latency = (
        LatencyModel(config.profile, config.coarse_ratio, config.seed)
        if args.detect == "latency"
        else None
    )
    combos = enumerate_combos(spec.ways, args.max_combo)
    model = probe_model(hidden, spec)
    observed = {
        tuple(c): tuple(collect_evict_seq(model, spec, tuple(c), latency)) for c in combos
    }
    repeat = {
        tuple(c): tuple(collect_evict_seq(model, spec, tuple(c), latency)) for c in combos
    }
    candidates = [
        PolicySpec(kind, config.policy_seed if kind == "random" else None)
        for kind in ("tree-plru", "true-lru", "fifo", "random")
    ]
    ident = identify_policy(observed, candidates, spec, observed_repeat=repeat, latency=latency)
    out = _out_dir(config)
    csv_path = out / "reverse.csv"
    _write_csv(
        csv_path,
        ["combo", "target", "evict_seq"],
        [
            (_combo_str(combo), target, "" if n is None else n)
            for combo, seq in observed.items()
            for target, n in enumerate(seq)
        ],
    )
    if ident.status == "unique":
        verdict = f"identified policy: {ident.policy.kind} (unique)"
    elif ident.status == "ambiguous":
        verdict = "ambiguous candidates: " + ", ".join(c.kind for c in ident.matches)
    else:
        verdict = "no candidate matches the observed fingerprint"
    print(verdict)
    print(
        f"reverse hidden={hidden_kind} detect={args.detect} combos<={args.max_combo}"
        f" ({len(combos)} combos) -> {csv_path}"
    )
    if config.plot:
        from . import plots

        shown = {c: s for c, s in observed.items() if len(c) <= 1}
        print(f"figure -> {plots.save_fingerprints(shown, out / 'reverse.png')}")
    if args.check:
        return _check_line(
            ident.status == "unique" and ident.policy.kind == hidden_kind,
            f"fingerprint identifies {hidden_kind} uniquely",
        )
    return True


# -- sweep -------------------------------------------------------------------


def cmd_sweep(args, config) -> bool:
    model = _build_model(config)
    session = AttackSession(model, set_index=0, mode=config.retouch_mode)
    victim = PrefetchVictim(
        config.prefetch_tick,
        config.access_tick if config.victim_accesses else None,
    )
    rows = poor_man_sweep(
        session,
        victim,
        config.sweep_d_max,
        config.sweep_step,
        config.sweep_trials,
        config.tie,
    )
    crossover = sweep_crossover(rows)
    out = _out_dir(config)
    csv_path = out / "sweep.csv"
    _write_csv(
        csv_path,
        ["delay", "count_A", "count_sync_noaccess", "count_unsync"],
        [(r.delay, r.count_a, r.count_sync_noaccess, r.count_unsync) for r in rows],
    )
    stealth = model.evictions_of(VICTIM, ATTACKER)
    print(
        f"sweep d={config.sweep_d_max}..0 step {config.sweep_step},"
        f" {config.sweep_trials} trials/delay: crossover={crossover},"
        f" victim evictions by attacker={stealth} -> {csv_path}"
    )
    if config.plot:
        from . import plots

        print(f"figure -> {plots.save_sweep(rows, out / 'sweep.png', crossover)}")
    if args.check:
        trials = config.sweep_trials
        complete = all(
            r.count_a + r.count_sync_noaccess + r.count_unsync == trials for r in rows
        )
        if config.victim_accesses:
            peak = max(r.count_a for r in rows)
            ok = (
                complete
                and stealth == 0
                and peak == trials
                and crossover is not None
                and abs(crossover - config.prefetch_tick) <= config.sweep_step
            )
            what = (
                f"A-count peaks at {trials} and the crossover ({crossover}) sits within"
                f" one step of the prefetch tick ({config.prefetch_tick})"
            )
        else:
            ok = complete and stealth == 0 and all(r.count_a == 0 for r in rows)
            what = "no victim access => class A never observed"
        return _check_line(ok, what)
    return True


# -- amplify -----------------------------------------------------------------


def cmd_amplify(args, config) -> bool:
    budget = config.amplifier_budget
    if args.search:
        plan = amplifier_search(budget, mode=config.retouch_mode)
        if plan is None:
            print(f"search: no positive-differential sequence within budget {budget}")
            return not args.check
        sequence = plan.sequence
        print(
            f"search: found length-{len(sequence)} sequence,"
            f" differential {plan.differential}: {' '.join(sequence)}"
        )
    else:
        sequence = amplifier_sequence()[:budget]
    latency = LatencyModel("m1-firestorm", config.coarse_ratio, config.seed)
    results = amplifier_execute(
        sequence, mode=config.retouch_mode, latency=latency, timer=Timer.COARSE
    )
    out = _out_dir(config)
    csv_path = out / "amplify.csv"
    classes = sorted(results, key=lambda c: c.name)
    _write_csv(
        csv_path,
        ["class", "misses", "coarse_ticks"],
        [(c.name, results[c].misses, results[c].coarse_ticks) for c in classes],
    )
    others = [results[c].misses for c in classes if c is not SequenceClass.A]
    diff = results[SequenceClass.A].misses - max(others)
    print(
        f"amplify {len(sequence)} accesses: misses "
        + " ".join(f"{c.name}={results[c].misses}" for c in classes)
        + f", differential {diff} -> {csv_path}"
    )
    if config.plot:
        from . import plots

        print(f"figure -> {plots.save_amplifier(results, out / 'amplify.png')}")
    if args.check:
        ok = len(set(others)) == 1 and diff > 0
        what = f"non-A classes tie at {others[0]} miss(es); A exceeds them by {diff}"
        if not args.search and len(sequence) == 57:
            ticks_a = results[SequenceClass.A].coarse_ticks
            ticks_rest = [
                results[c].coarse_ticks for c in classes if c is not SequenceClass.A
            ]
            ok = (
                ok
                and results[SequenceClass.A].misses == 15
                and others[0] == 1
                and ticks_a > max(ticks_rest)
            )
            what = "57-access stream gives A=15, others=1, differential 14, a coarse tick apart"
        return _check_line(ok, what)
    return True


# -- aes ---------------------------------------------------------------------


def cmd_aes(args, config) -> bool:
    key = bytes.fromhex(config.aes_key_hex)
    result = heatmap_experiment(
        attack=config.aes_attack,
        defense=config.aes_defense,
        encryptions_per_byte=config.aes_encryptions,
        monitored_sets=tuple(range(config.aes_monitored_sets)),
        probe_after_round=config.aes_probe_after_round,
        key=key,
        seed=config.seed,
        geometry=profile(config.profile),
        mode=config.retouch_mode,
    )
    out = _out_dir(config)
    csv_path = out / "aes_heatmap.csv"
    _write_csv(
        csv_path,
        ["p0", "set", "frequency"],
        [
            (p0, s, f"{result.frequency(p0, s):.6f}")
            for p0 in range(256)
            for s in result.monitored_sets
        ],
    )
    truth_path = out / "aes_truth.csv"
    _write_csv(
        truth_path,
        ["p0", "true_set"],
        [(p0, result.true_sets[p0]) for p0 in range(256)],
    )
    scored = [p0 for p0 in range(256) if result.true_sets[p0] in result.monitored_sets]
    correct = sum(1 for p0 in scored if result.argmax_set(p0) == result.true_sets[p0])
    accuracy = correct / len(scored) if scored else 0.0
    spreads = [
        max(row) - min(row) for row in (result.row(p0) for p0 in range(256))
    ]
    total = sum(result.trials.values())
    print(
        f"aes attack={config.aes_attack} defense={config.aes_defense}:"
        f" argmax accuracy {accuracy:.3f} over {len(scored)} rows,"
        f" max row spread {max(spreads):.3f},"
        f" aborts {result.aborted_trials}/{total}"
        f" (attacker-attributed {result.aborts_by_attacker}) -> {csv_path}"
    )
    if config.plot:
        from . import plots

        print(f"figure -> {plots.save_heatmap(result, out / 'aes_heatmap.png')}")
    if args.check:
        if config.aes_attack == "retouch":
            ok = (
                accuracy >= 0.95
                and result.aborts_by_attacker == 0
                and result.victim_evictions_by_attacker == 0
            )
            what = f"argmax recovers the true set in {accuracy:.1%} of rows, stealthily"
        else:
            ok = max(spreads) < 0.1
            if config.aes_defense == "lock":
                ok = ok and result.aborted_trials == total
            what = (
                f"probe detection is flat (max spread {max(spreads):.3f})"
                + (", every transaction aborted" if config.aes_defense == "lock" else "")
            )
        return _check_line(ok, what)
    return True


# -- parser / entry ------------------------------------------------------------

# per-subcommand flag -> config field
_OVERRIDE_FIELDS = {
    "sequences": {"mode": "retouch_mode"},
    "reverse": {"profile": "profile"},
    "sweep": {
        "dmax": "sweep_d_max",
        "step": "sweep_step",
        "trials": "sweep_trials",
    },
    "amplify": {"budget": "amplifier_budget"},
    "aes": {
        "attack": "aes_attack",
        "defense": "aes_defense",
        "encryptions": "aes_encryptions",
        "sets": "aes_monitored_sets",
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plrulab",
        description="Deterministic cache replacement and eviction side-channel lab",
    )
    parser.add_argument("--config", help="JSON config file (flat field=value object)")
    parser.add_argument("--seed", type=int, help="run seed (required here or in the config)")
    parser.add_argument(
        "--out", help=f"output directory (overrides ${OUT_ENV} and the config)"
    )
    parser.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="replay an access script and dump state per step")
    p.add_argument(
        "script",
        nargs="?",
        default="",
        help="';'-separated steps: prime | prefetch [label] | access [label]"
        " | retouch | probe | read <label>",
    )
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("sequences", help="final eviction candidate per operation sequence")
    p.add_argument("--mode", choices=("naive", "aware"), help="retouch mode")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_sequences)

    p = sub.add_parser("reverse", help="fingerprint and identify a hidden policy")
    p.add_argument("--profile", choices=("x86-cfl", "m1-firestorm", "m1-icestorm"))
    p.add_argument("--hidden", choices=sorted(POLICY_KINDS), help="backend policy")
    p.add_argument("--max-combo", type=int, default=2, help="max hit-combo length")
    p.add_argument("--detect", choices=("abort", "latency"), default="abort")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_reverse)

    p = sub.add_parser("sweep", help="slide the retouch over the victim's schedule")
    p.add_argument("--dmax", type=int, help="largest retouch delay")
    p.add_argument("--step", type=int, help="delay decrement")
    p.add_argument("--trials", type=int, help="trials per delay")
    p.add_argument("--no-access", action="store_true", help="victim only prefetches")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("amplify", help="miss amplification for the coarse timer")
    p.add_argument("--budget", type=int, help="access budget")
    p.add_argument("--search", action="store_true", help="search for a sequence instead of replaying the fixed one")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_amplify)

    p = sub.add_parser("aes", help="table-lookup leakage heatmap")
    p.add_argument("--attack", choices=("retouch", "probe"))
    p.add_argument("--defense", choices=("none", "preload", "lock"))
    p.add_argument("--encryptions", type=int, help="encryptions per plaintext byte")
    p.add_argument("--sets", type=int, help="number of monitored sets (0..n-1)")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_aes)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out_dir": args.out or os.environ.get(OUT_ENV),
        "plot": False if args.no_plot else None,
    }
    for flag, field in _OVERRIDE_FIELDS.get(args.command, {}).items():
        overrides[field] = getattr(args, flag)
    if args.command == "sweep" and args.no_access:
        overrides["victim_accesses"] = False
    try:
        config = load_config(args.config, overrides)
        ok = args.func(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 3


if __name__ == "__main__":
    sys.exit(main())
