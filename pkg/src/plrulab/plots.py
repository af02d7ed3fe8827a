"""Figure rendering for the report commands.

Every helper writes a PNG next to the delimited output and returns the
path.  The Agg backend keeps this usable on headless boxes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .attack import Bucket, SweepRow  # noqa: E402


def save_sweep(rows: list[SweepRow], path: Path, crossover: int | None = None) -> Path:
    delays = [r.delay for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(delays, [r.count_a for r in rows], label=Bucket.SYNC_ACCESS.name, lw=1.2)
    ax.plot(
        delays,
        [r.count_sync_noaccess for r in rows],
        label=Bucket.SYNC_NO_ACCESS.name,
        lw=1.2,
    )
    ax.plot(delays, [r.count_unsync for r in rows], label=Bucket.UNSYNC.name, lw=1.2)
    if crossover is not None:
        ax.axvline(crossover, color="grey", ls="--", lw=0.8)
        ax.annotate(f"crossover d={crossover}", (crossover, 0), textcoords="offset points", xytext=(4, 6), fontsize=8)
    ax.set_xlabel("retouch delay d (ticks)")
    ax.set_ylabel("trials per bucket")
    ax.invert_xaxis()
    ax.legend(loc="center right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_heatmap(result, path: Path) -> Path:
    """Detection frequency as a (plaintext byte, monitored set) image."""
    grid = [result.row(p0) for p0 in range(256)]
    fig, ax = plt.subplots(figsize=(5, 7))
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xlabel("monitored set")
    ax.set_ylabel("plaintext byte 0")
    ax.set_xticks(range(len(result.monitored_sets)))
    ax.set_xticklabels(result.monitored_sets, fontsize=6)
    fig.colorbar(im, ax=ax, label="detection frequency")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_amplifier(results, path: Path) -> Path:
    """Miss counts and timer readings per sequence class."""
    classes = sorted(results, key=lambda c: c.name)
    names = [c.name for c in classes]
    misses = [results[c].misses for c in classes]
    cycles = [results[c].cycles for c in classes]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.bar(names, misses, color="#4477aa")
    ax1.set_ylabel("misses")
    ax1.set_xlabel("sequence class")
    ax2.bar(names, cycles, color="#ee6677")
    ax2.set_ylabel("model cycles")
    ax2.set_xlabel("sequence class")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_sequences(table: dict, path: Path) -> Path:
    """Final eviction-candidate entry per operation sequence."""
    names = [seq.name for seq in table]
    entries = [int(label[1:]) for label in table.values()]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(names, entries, color="#228833")
    ax.set_xlabel("operation sequence")
    ax.set_ylabel("eviction candidate entry")
    ax.set_yticks(range(max(entries) + 2))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_trace_bits(dumps: list[str], path: Path) -> Path:
    """Flag evolution over a trace: one row per step, one column per node."""
    grid = [[int(ch) for ch in dump.replace("|", "")] for dump in dumps]
    fig, ax = plt.subplots(figsize=(4, 0.4 * len(grid) + 1.2))
    ax.imshow(grid, aspect="auto", cmap="Greys", vmin=0, vmax=1)
    ax.set_xlabel("tree node")
    ax.set_ylabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_fingerprints(fingerprints: dict, path: Path) -> Path:
    """Eviction-sequence fingerprints, one line per combo."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for combo, seq in sorted(fingerprints.items()):
        label = "+".join(f"X{i}" for i in combo) if combo else "plain"
        xs = range(len(seq))
        ys = [v if v is not None else 0 for v in seq]
        ax.plot(xs, ys, marker="o", ms=3, lw=0.8, label=label)
    ax.set_xlabel("target index t")
    ax.set_ylabel("evictions until the write set breaks")
    if len(fingerprints) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
