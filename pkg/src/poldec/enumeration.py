"""Counting, exhaustive enumeration and uniform sampling of input-trees.

The count of decompositions for ``n`` states and ``m`` inputs sums over the
number of input groups ``r`` (2..m) and the number of leaves ``k``::

    N(n, m) = sum_r  S(m, r)/r! * sum_k  C(r, k) (D(r-1, r-k) + D(r-1, r-k+1))
                                        * sum_i  C(n, i) D(n-i, k) (r-k)^i

where ``D(a, b)`` counts surjections from an a-set onto a b-set. Only proper
decompositions (``r >= 2``) are counted; the undecomposed system is not one.

Tree shapes are rooted forests on ``r`` labelled groups, encoded as Prüfer
sequences of length ``r - 1`` over ``0..r`` where label ``r`` is the virtual
root. A label of ``0..r-1`` appears in the sequence iff that group has
children.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial
from typing import Iterator

import numpy as np

from .input_tree import InputTree

__all__ = [
    "DecompositionCount",
    "EnumerationCapExceeded",
    "surjections",
    "stirling2",
    "count_decompositions",
    "enumerate_all",
    "sample_uniform",
    "prufer_to_parents",
    "set_partitions",
]

DEFAULT_CAP = 10**6


class EnumerationCapExceeded(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} decompositions exceed the enumeration cap of {cap}")
        self.count = count
        self.cap = cap


@lru_cache(maxsize=None)
def surjections(a: int, b: int) -> int:
    """Number of onto maps from an ``a``-set to a ``b``-set."""
    if a < 0 or b < 0:
        raise ValueError("surjections needs a, b >= 0")
    if b == 0:
        return 1 if a == 0 else 0
    if a < b:
        return 0
    return sum((-1) ** c * comb(b, c) * (b - c) ** a for c in range(b))


@lru_cache(maxsize=None)
def stirling2(a: int, b: int) -> int:
    """Partitions of an ``a``-set into exactly ``b`` nonempty blocks."""
    return surjections(a, b) // factorial(b)


def _shape_count(r: int, k: int) -> int:
    """Rooted forests on ``r`` labelled nodes with exactly ``k`` leaves."""
    return comb(r, k) * (surjections(r - 1, r - k) + surjections(r - 1, r - k + 1))


def _assignment_count(n: int, r: int, k: int) -> int:
    """State assignments to ``r`` nodes that leave none of the ``k`` leaves empty."""
    return sum(comb(n, i) * surjections(n - i, k) * (r - k) ** i for i in range(0, n - k + 1))


@dataclass(frozen=True)
class DecompositionCount:
    n: int
    m: int
    total: int
    per_r_k: dict[tuple[int, int], int] = field(default_factory=dict)

    def per_r(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for (r, _), v in self.per_r_k.items():
            out[r] = out.get(r, 0) + v
        return out


def count_decompositions(n: int, m: int) -> DecompositionCount:
    if n < 1:
        raise ValueError("need at least one state variable")
    if m < 2:
        raise ValueError(f"no decompositions exist for m={m} inputs (need m >= 2)")
    table: dict[tuple[int, int], int] = {}
    for r in range(2, m + 1):
        groups = stirling2(m, r)
        for k in range(1, r + 1):
            table[(r, k)] = groups * _shape_count(r, k) * _assignment_count(n, r, k)
    return DecompositionCount(n, m, sum(table.values()), table)


# tree shapes -------------------------------------------------------------


def prufer_to_parents(code: tuple[int, ...] | list[int], r: int) -> list[int | None]:
    """Decode a Prüfer sequence over labels ``0..r`` into parent pointers.

    Label ``r`` is the virtual root; the returned list has one entry per group,
    ``None`` meaning "child of the root".
    """
    size = r + 1
    if len(code) != size - 2:
        raise ValueError(f"code of length {len(code)} does not describe a tree on {size} labels")
    degree = [1] * size
    for c in code:
        degree[c] += 1
    edges = []
    for c in code:
        leaf = next(i for i in range(size) if degree[i] == 1)
        edges.append((leaf, c))
        degree[leaf] -= 1
        degree[c] -= 1
    u, v = (i for i in range(size) if degree[i] == 1)
    edges.append((u, v))

    adj: dict[int, list[int]] = {i: [] for i in range(size)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parent: list[int | None] = [None] * r
    stack, seen = [r], {r}
    while stack:
        cur = stack.pop()
        for nb in adj[cur]:
            if nb not in seen:
                seen.add(nb)
                parent[nb] = None if cur == r else cur
                stack.append(nb)
    return parent


def _forests(r: int) -> Iterator[list[int | None]]:
    if r == 1:
        yield [None]
        return
    for code in itertools.product(range(r + 1), repeat=r - 1):
        yield prufer_to_parents(code, r)


def set_partitions(items: list[int], blocks: int) -> Iterator[list[list[int]]]:
    """Every partition of ``items`` into exactly ``blocks`` nonempty blocks."""
    if blocks == 0:
        if not items:
            yield []
        return
    if len(items) < blocks:
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest, blocks - 1):
        yield [[first], *part]
    for part in set_partitions(rest, blocks):
        for i in range(len(part)):
            yield part[:i] + [[first, *part[i]]] + part[i + 1 :]


def enumerate_all(n: int, m: int, cap: int = DEFAULT_CAP) -> Iterator[InputTree]:
    """Yield every decomposition of an ``n``-state, ``m``-input system once."""
    total = count_decompositions(n, m).total
    if total > cap:
        raise EnumerationCapExceeded(total, cap)
    return _enumerate(n, m)


def _enumerate(n: int, m: int) -> Iterator[InputTree]:
    for r in range(2, m + 1):
        forests = list(_forests(r))
        for part in set_partitions(list(range(m)), r):
            for parents in forests:
                has_kids = {p for p in parents if p is not None}
                leaves = [g for g in range(r) if g not in has_kids]
                for labels in itertools.product(range(r), repeat=n):
                    if any(leaf not in labels for leaf in leaves):
                        continue
                    groups = [
                        (part[g], [i for i, lab in enumerate(labels) if lab == g], parents[g])
                        for g in range(r)
                    ]
                    yield InputTree.from_groups(groups, n, m)


# sampling ----------------------------------------------------------------


def _weighted_index(rng: np.random.Generator, weights: list[int]) -> int:
    """Draw an index with probability proportional to big-integer ``weights``."""
    total = sum(weights)
    if total <= 0:
        raise ValueError("all weights are zero")
    # exact for any weight size: draw a uniform integer in [0, total)
    target = _randbelow(rng, total)
    acc = 0
    for i, w in enumerate(weights):
        acc += w
        if target < acc:
            return i
    return len(weights) - 1


def _randbelow(rng: np.random.Generator, bound: int) -> int:
    if bound < 2**62:
        return int(rng.integers(bound))
    nbytes = (bound.bit_length() + 7) // 8
    while True:
        val = int.from_bytes(rng.bytes(nbytes), "little") >> (8 * nbytes - bound.bit_length())
        if val < bound:
            return val


def _uniform_partition(rng: np.random.Generator, items: list[int], blocks: int) -> list[list[int]]:
    """Uniform partition of ``items`` into exactly ``blocks`` blocks.

    Unranks a uniform index with the Stirling recurrence instead of listing
    all partitions: the last item either opens a new block or joins one of
    the existing ones.
    """
    rank = _randbelow(rng, stirling2(len(items), blocks))
    return _unrank_partition(items, blocks, rank)


def _unrank_partition(items: list[int], blocks: int, rank: int) -> list[list[int]]:
    if not items:
        return []
    if blocks == len(items):
        return [[it] for it in items]
    if blocks == 1:
        return [list(items)]
    *head, last = items
    alone = stirling2(len(head), blocks - 1)
    if rank < alone:
        return _unrank_partition(head, blocks - 1, rank) + [[last]]
    rank -= alone
    sub = stirling2(len(head), blocks)
    which, rank = divmod(rank, sub)
    part = _unrank_partition(head, blocks, rank)
    part[which] = part[which] + [last]
    return part


def _uniform_surjection(rng: np.random.Generator, length: int, targets: list[int]) -> list[int]:
    blocks = _uniform_partition(rng, list(range(length)), len(targets))
    perm = rng.permutation(len(targets))
    seq = [0] * length
    for b, block in enumerate(blocks):
        for pos in block:
            seq[pos] = targets[perm[b]]
    return seq


def sample_shape(rng: np.random.Generator, r: int, k: int) -> list[int | None]:
    """Uniform rooted forest on ``r`` groups with exactly ``k`` leaves."""
    if r == 1:
        return [None]
    inner = r - k
    without_root = surjections(r - 1, inner)
    with_root = surjections(r - 1, inner + 1)
    labels = sorted(int(v) for v in rng.choice(r, size=inner, replace=False)) if inner else []
    if _weighted_index(rng, [without_root, with_root]) == 1:
        labels = labels + [r]
    code = _uniform_surjection(rng, r - 1, labels)
    return prufer_to_parents(code, r)


def sample_uniform(n: int, m: int, rng: np.random.Generator) -> InputTree:
    """Draw one decomposition uniformly from all ``N(n, m)`` of them."""
    counts = count_decompositions(n, m)
    rs = list(range(2, m + 1))
    r = rs[_weighted_index(rng, [sum(counts.per_r_k[(r, k)] for k in range(1, r + 1)) for r in rs])]
    groups = _uniform_partition(rng, list(range(m)), r)
    k = 1 + _weighted_index(rng, [counts.per_r_k[(r, k)] for k in range(1, r + 1)])
    parents = sample_shape(rng, r, k)
    has_kids = {p for p in parents if p is not None}
    leaves = [g for g in range(r) if g not in has_kids]
    while True:
        labels = rng.integers(r, size=n)
        if all(np.any(labels == leaf) for leaf in leaves):
            break
    built = [(groups[g], np.flatnonzero(labels == g).tolist(), parents[g]) for g in range(r)]
    return InputTree.from_groups(built, n, m)
