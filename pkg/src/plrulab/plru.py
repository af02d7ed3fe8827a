"""Tree-PLRU state machine and reference replacement policies.

The way tree for an associativity of W (a power of two) stores W-1 one-bit
flags in level order: node k has children 2k+1 and 2k+2, and the leaves map
to ways 0..W-1 left to right.  Flag value 0 means the LEFT subtree holds the
less recently used side, so the victim chase descends left on 0 and right on
1.  Touching a way sets every flag on its root-to-leaf path to point away
from that way; the chase from the resulting state can therefore never return
the way that was just touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

SUPPORTED_WAYS = (2, 4, 8, 16)


def _check_ways(ways: int) -> None:
    if ways not in SUPPORTED_WAYS:
        raise ValueError(
            f"unsupported associativity {ways!r}; expected one of {SUPPORTED_WAYS}"
        )


@lru_cache(maxsize=None)
def _touch_masks(ways: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Per-way (clear_mask, set_mask) pairs so touch is two bit ops."""
    clears = []
    sets = []
    for way in range(ways):
        clear = 0
        setb = 0
        node = ways - 1 + way
        while node > 0:
            parent = (node - 1) // 2
            if node == 2 * parent + 1:  # path went left: flag points right
                setb |= 1 << parent
            else:  # path went right: flag points left
                clear |= 1 << parent
            node = parent
        clears.append(clear)
        sets.append(setb)
    return tuple(clears), tuple(sets)


@lru_cache(maxsize=None)
def _victim_table(ways: int) -> tuple[int, ...]:
    """Chase result for every flag pattern, indexed by the bits integer."""
    out = []
    for bits in range(1 << (ways - 1)):
        node = 0
        while node < ways - 1:
            node = 2 * node + 1 + ((bits >> node) & 1)
        out.append(node - (ways - 1))
    return tuple(out)


@dataclass(frozen=True)
class TreeState:
    """Immutable PLRU flag vector for one cache set.

    ``bits`` holds node k's flag at bit position k (level order).
    """

    ways: int
    bits: int

    def flag(self, node: int) -> int:
        return (self.bits >> node) & 1

    def dump(self) -> str:
        """Flags as a bit string, root first, levels separated by '|'."""
        parts = []
        node = 0
        width = 1
        while node < self.ways - 1:
            parts.append(
                "".join(str((self.bits >> (node + i)) & 1) for i in range(width))
            )
            node += width
            width *= 2
        return "|".join(parts)


def initial_state(ways: int) -> TreeState:
    """All-zero flags: the chase lands on way 0."""
    _check_ways(ways)
    return TreeState(ways, 0)


def plru_way(state: TreeState) -> int:
    """Way the policy evicts next: follow flags from the root."""
    return _victim_table(state.ways)[state.bits]


def touch(state: TreeState, way: int) -> TreeState:
    """Point every flag on the way's path away from it."""
    if not 0 <= way < state.ways:
        raise ValueError(f"way {way} out of range for {state.ways} ways")
    clears, sets = _touch_masks(state.ways)
    return TreeState(state.ways, (state.bits & ~clears[way]) | sets[way])


def parse_dump(text: str) -> TreeState:
    """Inverse of TreeState.dump."""
    levels = text.split("|")
    flat = "".join(levels)
    ways = len(flat) + 1
    _check_ways(ways)
    width = 1
    for level in levels:
        if len(level) != width or set(level) - {"0", "1"}:
            raise ValueError(f"malformed tree dump {text!r}")
        width *= 2
    bits = 0
    for pos, ch in enumerate(flat):
        bits |= int(ch) << pos
    return TreeState(ways, bits)


@dataclass(frozen=True)
class PolicySpec:
    """Replacement policy selector: kind plus an optional generator seed."""

    kind: str  # "tree-plru" | "true-lru" | "fifo" | "random"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(
                f"unknown policy {self.kind!r}; expected one of {sorted(POLICY_KINDS)}"
            )
        if self.kind == "random" and self.seed is None:
            object.__setattr__(self, "seed", 0)


class ReplacementPolicy:
    """Per-set replacement state: a victim query plus hit/fill bookkeeping.

    ``victim()`` is a pure query; ``update(way, hit)`` records a hit on or a
    (re)fill of ``way``.
    """

    def victim(self) -> int:
        raise NotImplementedError

    def update(self, way: int, hit: bool) -> None:
        raise NotImplementedError

    def reset(self) -> None:
        raise NotImplementedError

    def dump(self) -> str:
        raise NotImplementedError


class TreePlru(ReplacementPolicy):
    def __init__(self, ways: int):
        _check_ways(ways)
        self.ways = ways
        self.bits = 0
        self._clears, self._sets = _touch_masks(ways)
        self._victims = _victim_table(ways)

    def victim(self) -> int:
        return self._victims[self.bits]

    def update(self, way: int, hit: bool) -> None:
        self.bits = (self.bits & ~self._clears[way]) | self._sets[way]

    def reset(self) -> None:
        self.bits = 0

    def state(self) -> TreeState:
        return TreeState(self.ways, self.bits)

    def dump(self) -> str:
        return self.state().dump()


class TrueLru(ReplacementPolicy):
    """Exact recency order; victim is the least recently used way."""

    def __init__(self, ways: int):
        self.ways = ways
        self.order: list[int] = list(range(ways))  # front = least recent

    def victim(self) -> int:
        return self.order[0]

    def update(self, way: int, hit: bool) -> None:
        self.order.remove(way)
        self.order.append(way)

    def reset(self) -> None:
        self.order = list(range(self.ways))

    def dump(self) -> str:
        return "lru:" + ",".join(map(str, self.order))


class Fifo(ReplacementPolicy):
    """Rotating fill pointer; hits do not move it."""

    def __init__(self, ways: int):
        self.ways = ways
        self.pointer = 0

    def victim(self) -> int:
        return self.pointer

    def update(self, way: int, hit: bool) -> None:
        if not hit:
            self.pointer = (self.pointer + 1) % self.ways

    def reset(self) -> None:
        self.pointer = 0

    def dump(self) -> str:
        return f"fifo:{self.pointer}"


def _splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 generator; portable 64-bit arithmetic."""
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4B9FB) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return state, z ^ (z >> 31)


class SeededRandom(ReplacementPolicy):
    """Uniform victim choice from a splitmix64 stream.

    The pre-drawn victim stays stable between fills so victim() is a pure
    query.  reset() does not rewind the stream; reproducibility comes from
    the construction seed.
    """

    def __init__(self, ways: int, seed: int = 0):
        self.ways = ways
        self.seed = seed
        self._state = seed & 0xFFFFFFFFFFFFFFFF
        self._next = self._draw()

    def _draw(self) -> int:
        self._state, word = _splitmix64(self._state)
        return word % self.ways

    def victim(self) -> int:
        return self._next

    def update(self, way: int, hit: bool) -> None:
        if not hit:
            self._next = self._draw()

    def reset(self) -> None:
        self._next = self._draw()

    def dump(self) -> str:
        return f"random:{self._next}"


POLICY_KINDS = {
    "tree-plru": TreePlru,
    "true-lru": TrueLru,
    "fifo": Fifo,
    "random": SeededRandom,
}


def make_policy(spec: PolicySpec, ways: int) -> ReplacementPolicy:
    if spec.kind == "random":
        return SeededRandom(ways, spec.seed or 0)
    return POLICY_KINDS[spec.kind](ways)


@dataclass(frozen=True)
class DivergenceWitness:
    """A state where the tree's victim differs from the true-LRU victim."""

    fill_order: tuple[int, ...]
    hit_way: int
    tree_victim: int
    lru_victim: int
    state: TreeState


def divergence_witness(ways: int = 8) -> DivergenceWitness:
    """Fill every way in order, then hit one way in the right half.

    The single hit leaves true LRU pointing at the oldest fill while the
    tree chase lands inside the opposite subtree.
    """
    _check_ways(ways)
    state = initial_state(ways)
    lru = TrueLru(ways)
    fills = []
    for _ in range(ways):
        w = plru_way(state)
        fills.append(w)
        state = touch(state, w)
        lru.update(w, False)
    hit_way = fills[ways // 2]  # an early fill that landed in the right half
    state = touch(state, hit_way)
    lru.update(hit_way, True)
    tree_victim = plru_way(state)
    lru_victim = lru.victim()
    if tree_victim == lru_victim:
        raise RuntimeError("witness construction failed to diverge")
    return DivergenceWitness(tuple(fills), hit_way, tree_victim, lru_victim, state)
