"""Victim programs: a deterministic single-line prefetcher and an AES
T-table encryptor with preload-style defenses.

The four lookup tables occupy 4 KiB starting at a page-aligned base, so
with 64-byte lines table j covers sets 16j..16j+15 and every set holds
exactly one table line.  The first encryption round reads T[i mod 4] at
index p_i xor k_i for byte i, which ties the accessed set to the plaintext.

Defenses: "preload" walks one write over each of the 64 table lines before
encrypting; "lock" additionally wraps the encryption in a transaction whose
write set is those lines, so any eviction of a preloaded line kills the
transaction before its secrets become visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import random

from .attack import AttackSession, Bucket, run_trial
from .cache import ATTACKER, VICTIM, CacheModel, Geometry, PROFILES, map_set
from .plru import PolicySpec

DEFENSES = ("none", "preload", "lock")


@dataclass(frozen=True)
class PrefetchVictim:
    """Prefetches one line, then optionally re-accesses it."""

    prefetch_tick: int = 100
    access_tick: int | None = 160

    def events(self, addr: int) -> list[tuple[int, str, int]]:
        out = [(self.prefetch_tick, "write", addr)]
        if self.access_tick is not None:
            if self.access_tick < self.prefetch_tick:
                raise ValueError("access cannot precede the prefetch")
            out.append((self.access_tick, "read", addr))
        return out


# -- AES-128 T-table core ----------------------------------------------------

SBOX = bytes.fromhex(
    "637c777bf26b6fc53001672bfed7ab76"
    "ca82c97dfa5947f0add4a2af9ca472c0"
    "b7fd9326363ff7cc34a5e5f171d83115"
    "04c723c31896059a071280e2eb27b275"
    "09832c1a1b6e5aa0523bd6b329e32f84"
    "53d100ed20fcb15b6acbbe394a4c58cf"
    "d0efaafb434d338545f9027f503c9fa8"
    "51a3408f929d38f5bcb6da2110fff3d2"
    "cd0c13ec5f974417c4a77e3d645d1973"
    "60814fdc222a908846eeb814de5e0bdb"
    "e0323a0a4906245cc2d3ac629195e479"
    "e7c8376d8dd54ea96c56f4ea657aae08"
    "ba78252e1ca6b4c6e8dd741f4bbd8b8a"
    "703eb5664803f60e613557b986c11d9e"
    "e1f8981169d98e949b1e87e9ce5528df"
    "8ca1890dbfe6426841992d0fb054bb16"
)

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


def _xtime(b: int) -> int:
    b <<= 1
    return (b ^ 0x1B) & 0xFF if b & 0x100 else b


def _build_tables() -> tuple[tuple[int, ...], ...]:
    te0, te1, te2, te3 = [], [], [], []
    for x in range(256):
        s = SBOX[x]
        s2 = _xtime(s)
        s3 = s2 ^ s
        te0.append((s2 << 24) | (s << 16) | (s << 8) | s3)
        te1.append((s3 << 24) | (s2 << 16) | (s << 8) | s)
        te2.append((s << 24) | (s3 << 16) | (s2 << 8) | s)
        te3.append((s << 24) | (s << 16) | (s3 << 8) | s2)
    return tuple(te0), tuple(te1), tuple(te2), tuple(te3)


TE = _build_tables()
TABLE_BYTES = 256 * 4


def table_line_count(geometry: Geometry) -> int:
    """Cache lines the four tables span (64 with 64-byte lines)."""
    return 4 * TABLE_BYTES // geometry.line_size


@lru_cache(maxsize=8)
def round_keys(key: bytes) -> tuple[int, ...]:
    """AES-128 expanded key: 44 words."""
    if len(key) != 16:
        raise ValueError("key must be 16 bytes")
    w = [int.from_bytes(key[4 * i : 4 * i + 4], "big") for i in range(4)]
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = ((t << 8) | (t >> 24)) & 0xFFFFFFFF  # rotate
            t = (
                (SBOX[(t >> 24) & 0xFF] << 24)
                | (SBOX[(t >> 16) & 0xFF] << 16)
                | (SBOX[(t >> 8) & 0xFF] << 8)
                | SBOX[t & 0xFF]
            )
            t ^= RCON[i // 4 - 1] << 24
        w.append(w[i - 4] ^ t)
    return tuple(w)


@dataclass(frozen=True)
class EncryptionTrace:
    ciphertext: bytes | None  # None when fewer than 10 rounds were run
    accesses: tuple[tuple[int, int, int], ...]  # (round, table, index)


def encrypt_trace(key: bytes, plaintext: bytes, rounds: int = 10) -> EncryptionTrace:
    """Run the first ``rounds`` rounds, recording every table lookup."""
    if len(plaintext) != 16:
        raise ValueError("plaintext must be 16 bytes")
    if not 1 <= rounds <= 10:
        raise ValueError("rounds must be in 1..10")
    rk = round_keys(bytes(key))
    te0, te1, te2, te3 = TE
    s = [
        int.from_bytes(plaintext[4 * i : 4 * i + 4], "big") ^ rk[i] for i in range(4)
    ]
    accesses: list[tuple[int, int, int]] = []
    for r in range(1, min(rounds, 9) + 1):
        t = []
        for c in range(4):
            i0, i1, i2, i3 = (
                (s[c] >> 24) & 0xFF,
                (s[(c + 1) % 4] >> 16) & 0xFF,
                (s[(c + 2) % 4] >> 8) & 0xFF,
                s[(c + 3) % 4] & 0xFF,
            )
            accesses.extend(((r, 0, i0), (r, 1, i1), (r, 2, i2), (r, 3, i3)))
            t.append(te0[i0] ^ te1[i1] ^ te2[i2] ^ te3[i3] ^ rk[4 * r + c])
        s = t
    if rounds < 10:
        return EncryptionTrace(None, tuple(accesses))
    # Final round extracts S-box bytes out of the same tables.
    out = []
    for c in range(4):
        i0, i1, i2, i3 = (
            (s[c] >> 24) & 0xFF,
            (s[(c + 1) % 4] >> 16) & 0xFF,
            (s[(c + 2) % 4] >> 8) & 0xFF,
            s[(c + 3) % 4] & 0xFF,
        )
        accesses.extend(((10, 2, i0), (10, 3, i1), (10, 0, i2), (10, 1, i3)))
        word = (
            (TE[2][i0] & 0xFF000000)
            ^ (TE[3][i1] & 0x00FF0000)
            ^ (TE[0][i2] & 0x0000FF00)
            ^ (TE[1][i3] & 0x000000FF)
            ^ rk[40 + c]
        )
        out.append(word)
    ciphertext = b"".join(w.to_bytes(4, "big") for w in out)
    return EncryptionTrace(ciphertext, tuple(accesses))


def first_round_accesses(key: bytes, plaintext: bytes) -> list[tuple[int, int, int]]:
    """(byte position, table, index) for round one: table i mod 4, index p_i xor k_i."""
    if len(key) != 16 or len(plaintext) != 16:
        raise ValueError("key and plaintext must be 16 bytes")
    return [(i, i % 4, plaintext[i] ^ key[i]) for i in range(16)]


@dataclass(frozen=True)
class TableLayout:
    """Where the four tables live; the base must stay page-aligned."""

    base: int = 0

    def __post_init__(self) -> None:
        if self.base % 4096 != 0:
            raise ValueError("table base must be page-aligned")

    def line_of(self, table: int, index: int, geometry: Geometry) -> int:
        addr = self.base + table * TABLE_BYTES + 4 * index
        return addr - addr % geometry.line_size

    def set_of(self, table: int, index: int, geometry: Geometry) -> int:
        return map_set(geometry, self.line_of(table, index, geometry))

    def preload_lines(self, geometry: Geometry) -> list[int]:
        """One write per table line, striding a line at a time."""
        return [
            self.base + i * geometry.line_size
            for i in range(table_line_count(geometry))
        ]


@dataclass(frozen=True)
class AesVictim:
    """Encryptor whose schedule is: preload tick per line, one lookup per tick."""

    key: bytes = bytes(16)
    layout: TableLayout = field(default_factory=TableLayout)
    rounds: int = 10
    defense: str = "none"

    def __post_init__(self) -> None:
        if self.defense not in DEFENSES:
            raise ValueError(f"unknown defense {self.defense!r}")
        if len(self.key) != 16:
            raise ValueError("key must be 16 bytes")

    def preload_duration(self, geometry: Geometry) -> int:
        """Ticks the defense prologue occupies; the encryption starts after."""
        return table_line_count(geometry) if self.defense != "none" else 0

    def events_for_set(
        self,
        plaintext: bytes,
        set_index: int,
        geometry: Geometry,
    ) -> list[tuple[int, str, int]]:
        """The victim's accesses that land in one set, in schedule order.

        Each set holds exactly one table line, so traffic to other sets
        cannot move this set's replacement state or evict its lines.
        """
        events: list[tuple[int, str, int]] = []
        start = self.preload_duration(geometry)
        if self.defense != "none":
            for tick, line in enumerate(self.layout.preload_lines(geometry)):
                if map_set(geometry, line) == set_index:
                    events.append((tick, "write", line))
        trace = encrypt_trace(self.key, plaintext, self.rounds)
        for pos, (r, table, index) in enumerate(trace.accesses):
            if self.layout.set_of(table, index, geometry) == set_index:
                events.append((start + pos, "read", self.layout.line_of(table, index, geometry)))
        return events


@dataclass
class HeatmapResult:
    monitored_sets: tuple[int, ...]
    counts: dict[tuple[int, int], int]  # (p0, set) -> positive trials
    trials: dict[tuple[int, int], int]
    true_sets: list[int]  # per p0
    aborted_trials: int = 0
    aborts_by_attacker: int = 0
    victim_evictions_by_attacker: int = 0

    def frequency(self, p0: int, set_index: int) -> float:
        n = self.trials.get((p0, set_index), 0)
        return self.counts.get((p0, set_index), 0) / n if n else 0.0

    def row(self, p0: int) -> list[float]:
        return [self.frequency(p0, s) for s in self.monitored_sets]

    def argmax_set(self, p0: int) -> int:
        row = self.row(p0)
        return self.monitored_sets[row.index(max(row))]


def heatmap_experiment(
    attack: str = "retouch",
    defense: str = "lock",
    encryptions_per_byte: int = 500,
    monitored_sets=tuple(range(16)),
    probe_after_round: int = 3,
    key: bytes = bytes(16),
    seed: int = 0,
    geometry: Geometry = PROFILES["x86-cfl"],
    mode: str = "aware",
) -> HeatmapResult:
    """Detection-frequency matrix over (plaintext byte 0, monitored set).

    One set is monitored per encryption, round-robin.  The retouch attack
    counts bucket-A classifications; the probe attack counts encryptions
    with at least one probe miss.  Plaintext bytes 1..15 are drawn from the
    seeded generator; byte 0 sweeps 0..255.
    """
    if attack not in ("retouch", "probe"):
        raise ValueError(f"unknown attack {attack!r}")
    # The table base must not share tag columns with the attacker's primed
    # entries (columns 0..W-1 of each set); a span multiple keeps the
    # documented set mapping while landing every table line in the column
    # the sessions label V.
    layout = TableLayout(base=geometry.ways * geometry.span)
    victim = AesVictim(key=key, layout=layout, rounds=probe_after_round, defense=defense)
    monitored = tuple(monitored_sets)
    if not monitored or any(not 0 <= s < geometry.sets for s in monitored):
        raise ValueError("monitored sets must be non-empty and within the geometry")
    rng = random.Random(seed)
    model = CacheModel(geometry, PolicySpec("tree-plru"), cold_fill="victim")
    sessions = {s: AttackSession(model, s, mode) for s in monitored}
    counts: dict[tuple[int, int], int] = {}
    trials: dict[tuple[int, int], int] = {}
    result = HeatmapResult(monitored, counts, trials, [])
    tx_owner = VICTIM if defense == "lock" else None
    for p0 in range(256):
        result.true_sets.append(victim.layout.set_of(0, p0 ^ victim.key[0], geometry))
        for k in range(encryptions_per_byte):
            s = monitored[k % len(monitored)]
            plaintext = bytes([p0]) + rng.randbytes(15)
            events = victim.events_for_set(plaintext, s, geometry)
            cell = (p0, s)
            trials[cell] = trials.get(cell, 0) + 1
            if attack == "retouch":
                outcome = run_trial(
                    sessions[s],
                    events,
                    retouch_tick=victim.preload_duration(geometry),
                    tx_owner=tx_owner,
                )
                positive = outcome.bucket is Bucket.SYNC_ACCESS
                result.victim_evictions_by_attacker += outcome.victim_evictions_by_attacker
                if outcome.aborted:
                    result.aborted_trials += 1
                    if outcome.abort_by == ATTACKER:
                        result.aborts_by_attacker += 1
            else:
                positive = _prime_probe_trial(model, sessions[s], events, tx_owner, result)
            if positive:
                counts[cell] = counts.get(cell, 0) + 1
    return result


def _prime_probe_trial(
    model: CacheModel,
    session: AttackSession,
    victim_events,
    tx_owner: str | None,
    result: HeatmapResult,
) -> bool:
    """Classic prime, victim activity, probe; detection is any probe miss."""
    session.reset()
    session.prime()
    monitor = model.tx_begin(tx_owner) if tx_owner else None
    for _, op, addr in victim_events:
        session.victim_access(op, addr)
    probe_misses = 0
    for addr in session.entry_addrs:
        out = model.access(addr, ATTACKER, "read")
        if not out.hit:
            probe_misses += 1
    if monitor is not None:
        model.tx_end()
        if monitor.aborted:
            result.aborted_trials += 1
            if monitor.abort_by == ATTACKER:
                result.aborts_by_attacker += 1
    return probe_misses > 0
