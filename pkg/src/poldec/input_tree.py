"""Input-trees: the representation of a policy decomposition.

Every non-root node holds a group of inputs together with the state variables
attached to it. Inputs on one branch are cascaded (lower nodes are solved first
and their policies are fed upward), inputs on sibling branches are decoupled.
The virtual root is implicit: a node whose ``parent`` is ``None`` hangs
directly below it.

Indices are zero-based internally; the text format uses one-based labels
``u1..um`` and ``x1..xn``::

    [(u2,u3|x2,x3)->[(u4|x1)], (u1|x4)]
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TreeNode",
    "InputTree",
    "TreeKey",
    "Subsystem",
    "InvalidTreeError",
    "validate",
    "hash_key",
    "subsystem_of",
    "mutate",
    "undecomposed",
    "MUTATION_RETRIES",
]

MUTATION_RETRIES = 20


class InvalidTreeError(ValueError):
    """Raised when an operation needs a valid input-tree and gets something else."""


@dataclass(frozen=True)
class TreeNode:
    node_id: int
    inputs: tuple[int, ...]
    states: tuple[int, ...]
    parent: int | None = None


@dataclass(frozen=True, eq=False)
class InputTree:
    """Immutable input-tree over ``n_states`` state variables and ``m_inputs`` inputs.

    Equality and hashing go through :func:`hash_key`, so two trees that denote
    the same decomposition compare equal regardless of node numbering.
    """

    nodes: tuple[TreeNode, ...]
    n_states: int
    m_inputs: int

    @classmethod
    def from_groups(
        cls,
        groups: Sequence[tuple[Iterable[int], Iterable[int], int | None]],
        n_states: int,
        m_inputs: int,
    ) -> "InputTree":
        """Build a tree from ``(inputs, states, parent_position)`` triples.

        ``parent_position`` indexes into ``groups`` (``None`` for the root). The
        result is renumbered canonically: nodes sorted by their smallest input.
        """
        raw = [(tuple(sorted(set(u))), tuple(sorted(set(x))), p) for u, x, p in groups]
        order = sorted(range(len(raw)), key=lambda i: raw[i][0][0] if raw[i][0] else -1)
        new_id = {old: new for new, old in enumerate(order)}
        nodes = []
        for old in order:
            u, x, p = raw[old]
            nodes.append(TreeNode(new_id[old], u, x, None if p is None else new_id.get(p, p)))
        return cls(tuple(nodes), n_states, m_inputs)

    # structure -----------------------------------------------------------

    @cached_property
    def children(self) -> dict[int | None, tuple[int, ...]]:
        kids: dict[int | None, list[int]] = {None: []}
        for node in self.nodes:
            kids.setdefault(node.node_id, [])
        for node in self.nodes:
            kids.setdefault(node.parent, []).append(node.node_id)
        return {k: tuple(v) for k, v in kids.items()}

    def node(self, node_id: int) -> TreeNode:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise KeyError(f"no node with id {node_id}")

    def leaves(self) -> list[int]:
        return [nd.node_id for nd in self.nodes if not self.children.get(nd.node_id)]

    def is_leaf(self, node_id: int) -> bool:
        return not self.children.get(node_id)

    def descendants(self, node_id: int) -> list[int]:
        """Node ids strictly below ``node_id``."""
        out: list[int] = []
        stack = list(self.children.get(node_id, ()))
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(self.children.get(nid, ()))
        return out

    def ancestors(self, node_id: int) -> list[int]:
        """Node ids strictly above ``node_id``, nearest first."""
        out = []
        parent = self.node(node_id).parent
        seen = set()
        while parent is not None and parent not in seen:
            seen.add(parent)
            out.append(parent)
            parent = self.node(parent).parent
        return out

    def depth(self, node_id: int) -> int:
        return len(self.ancestors(node_id))

    def node_of_input(self, j: int) -> int:
        for node in self.nodes:
            if j in node.inputs:
                return node.node_id
        raise KeyError(f"input {j} not in tree")

    def solve_order(self) -> list[int]:
        """Child-first order: all leaves, then nodes whose children are done, and so on."""
        pending = {nd.node_id: len(self.children.get(nd.node_id, ())) for nd in self.nodes}
        ready = sorted(nid for nid, c in pending.items() if c == 0)
        order: list[int] = []
        while ready:
            order.extend(ready)
            nxt = []
            for nid in ready:
                parent = self.node(nid).parent
                if parent is not None:
                    pending[parent] -= 1
                    if pending[parent] == 0:
                        nxt.append(parent)
            ready = sorted(nxt)
        return order

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    # identity ------------------------------------------------------------

    @cached_property
    def key(self) -> bytes:
        return hash_key(self).to_bytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InputTree):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    # text form -----------------------------------------------------------

    def to_string(self) -> str:
        def forest(ids: Sequence[int]) -> str:
            items = []
            for nid in sorted(ids, key=lambda i: self.node(i).inputs):
                nd = self.node(nid)
                u = ",".join(f"u{j + 1}" for j in nd.inputs)
                x = ",".join(f"x{i + 1}" for i in nd.states)
                s = f"({u}|{x})"
                kids = self.children.get(nid, ())
                if kids:
                    s += "->" + forest(kids)
                items.append(s)
            return "[" + ", ".join(items) + "]"

        return forest(self.children.get(None, ()))

    def __str__(self) -> str:
        return self.to_string()

    def __repr__(self) -> str:
        return f"InputTree({self.to_string()!r}, n={self.n_states}, m={self.m_inputs})"

    @classmethod
    def parse(cls, text: str, n_states: int | None = None, m_inputs: int | None = None) -> "InputTree":
        """Parse the bracket notation produced by :meth:`to_string`.

        ``n_states``/``m_inputs`` default to the largest label seen.
        """
        tokens = re.findall(r"->|[\[\]\(\)|,]|[ux]\d+|\S", text)
        pos = 0
        groups: list[tuple[list[int], list[int], int | None]] = []

        def expect(tok: str) -> None:
            nonlocal pos
            if pos >= len(tokens) or tokens[pos] != tok:
                got = tokens[pos] if pos < len(tokens) else "end of input"
                raise ValueError(f"expected {tok!r}, got {got!r} in {text!r}")
            pos += 1

        def labels(prefix: str, stop: str) -> list[int]:
            nonlocal pos
            out = []
            while pos < len(tokens) and tokens[pos] != stop:
                tok = tokens[pos]
                if tok == ",":
                    pos += 1
                    continue
                if not tok.startswith(prefix) or not tok[1:].isdigit():
                    raise ValueError(f"bad label {tok!r} in {text!r}")
                out.append(int(tok[1:]) - 1)
                pos += 1
            return out

        def parse_forest(parent: int | None) -> None:
            nonlocal pos
            expect("[")
            if pos < len(tokens) and tokens[pos] == "]":
                pos += 1
                return
            while True:
                expect("(")
                u = labels("u", "|")
                expect("|")
                x = labels("x", ")")
                expect(")")
                groups.append((u, x, parent))
                me = len(groups) - 1
                if pos < len(tokens) and tokens[pos] == "->":
                    pos += 1
                    parse_forest(me)
                if pos < len(tokens) and tokens[pos] == ",":
                    pos += 1
                    continue
                expect("]")
                return

        parse_forest(None)
        if pos != len(tokens):
            raise ValueError(f"trailing characters in {text!r}")
        all_u = [j for g in groups for j in g[0]]
        all_x = [i for g in groups for i in g[1]]
        m = m_inputs if m_inputs is not None else (max(all_u) + 1 if all_u else 0)
        n = n_states if n_states is not None else (max(all_x) + 1 if all_x else 0)
        return cls.from_groups(groups, n, m)


def undecomposed(n_states: int, m_inputs: int) -> InputTree:
    """The single-node tree: all inputs computed jointly over the full state."""
    return InputTree.from_groups([(range(m_inputs), range(n_states), None)], n_states, m_inputs)


# validation ----------------------------------------------------------------


def validate(tree: InputTree) -> tuple[bool, list[str]]:
    """Check every structural rule; returns ``(ok, diagnostics)``.

    The first diagnostic names the first violated rule. Never raises.
    """
    diags: list[str] = []
    ids = [nd.node_id for nd in tree.nodes]
    if len(set(ids)) != len(ids):
        diags.append("duplicate node ids")
        return False, diags
    if not tree.nodes:
        return False, ["tree has no nodes"]
    idset = set(ids)
    for nd in tree.nodes:
        if not nd.inputs:
            diags.append(f"node {nd.node_id} has an empty input set")
        if nd.parent is not None and nd.parent not in idset:
            diags.append(f"node {nd.node_id} has unknown parent {nd.parent}")
    if diags:
        return False, diags

    # every node must reach the virtual root without revisiting
    parent = {nd.node_id: nd.parent for nd in tree.nodes}
    for nid in ids:
        seen = {nid}
        p = parent[nid]
        while p is not None:
            if p in seen:
                return False, [f"cycle through node {nid}"]
            seen.add(p)
            p = parent[p]

    inputs = [j for nd in tree.nodes for j in nd.inputs]
    if sorted(inputs) != list(range(tree.m_inputs)):
        missing = sorted(set(range(tree.m_inputs)) - set(inputs))
        dup = sorted({j for j in inputs if inputs.count(j) > 1})
        out_of_range = sorted(j for j in set(inputs) if not 0 <= j < tree.m_inputs)
        diags.append(
            f"input sets do not partition u1..u{tree.m_inputs}"
            f" (missing={missing}, repeated={dup}, out_of_range={out_of_range})"
        )
    states = [i for nd in tree.nodes for i in nd.states]
    if len(states) != len(set(states)):
        diags.append("state sets are not pairwise disjoint")
    if any(not 0 <= i < tree.n_states for i in states):
        diags.append("state index out of range")
    if set(states) != set(range(tree.n_states)):
        diags.append("not every state variable is assigned to a node")
    for nid in tree.leaves():
        if not tree.node(nid).states:
            diags.append(f"leaf node {nid} has an empty state set")
            break
    return not diags, diags


def _require_valid(tree: InputTree) -> None:
    ok, diags = validate(tree)
    if not ok:
        raise InvalidTreeError(diags[0])


# keys ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TreeKey:
    """Connectivity matrix ``C`` (m x m) and state-dependence matrix ``S`` (m x n)."""

    connectivity: np.ndarray
    state_dependence: np.ndarray

    def to_bytes(self) -> bytes:
        m, n = self.state_dependence.shape
        bits = np.concatenate([self.connectivity.ravel(), self.state_dependence.ravel()])
        return m.to_bytes(2, "little") + n.to_bytes(2, "little") + np.packbits(bits.astype(np.uint8)).tobytes()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TreeKey) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


def hash_key(tree: InputTree) -> TreeKey:
    _require_valid(tree)
    m, n = tree.m_inputs, tree.n_states
    C = np.zeros((m, m), dtype=np.uint8)
    S = np.zeros((m, n), dtype=np.uint8)
    for nd in tree.nodes:
        parent_inputs = tree.node(nd.parent).inputs if nd.parent is not None else ()
        for j in nd.inputs:
            for k in nd.inputs:
                if k != j:
                    C[j, k] = 1
            for k in parent_inputs:
                C[j, k] = 1
            S[j, list(nd.states)] = 1
    return TreeKey(C, S)


# subsystems ------------------------------------------------------------------


@dataclass(frozen=True)
class Subsystem:
    """What a node sees when its sub-policy is computed.

    ``states`` is the union of state sets in the sub-tree, ``cascaded`` the
    inputs strictly below the node (their policies are substituted),
    ``decoupled`` every other complement input (frozen). Complement states
    (``held_states``) stay at the goal.
    """

    node_id: int
    inputs: tuple[int, ...]
    states: tuple[int, ...]
    cascaded: tuple[int, ...]
    decoupled: tuple[int, ...]
    held_states: tuple[int, ...] = field(default=())


def subsystem_of(tree: InputTree, node_id: int) -> Subsystem:
    try:
        nd = tree.node(node_id)
    except KeyError:
        raise KeyError(f"unknown node id {node_id}") from None
    below = tree.descendants(node_id)
    states = set(nd.states)
    cascaded: set[int] = set()
    for nid in below:
        states.update(tree.node(nid).states)
        cascaded.update(tree.node(nid).inputs)
    complement = set(range(tree.m_inputs)) - set(nd.inputs)
    return Subsystem(
        node_id=node_id,
        inputs=nd.inputs,
        states=tuple(sorted(states)),
        cascaded=tuple(sorted(cascaded)),
        decoupled=tuple(sorted(complement - cascaded)),
        held_states=tuple(sorted(set(range(tree.n_states)) - states)),
    )


# mutation --------------------------------------------------------------------


class _Draft:
    """Mutable working copy used by the mutation operators."""

    def __init__(self, tree: InputTree):
        self.n = tree.n_states
        self.m = tree.m_inputs
        self.inputs = {nd.node_id: set(nd.inputs) for nd in tree.nodes}
        self.states = {nd.node_id: set(nd.states) for nd in tree.nodes}
        self.parent = {nd.node_id: nd.parent for nd in tree.nodes}
        self._next = max(self.inputs) + 1

    def ids(self) -> list[int]:
        return sorted(self.inputs)

    def new_node(self, inputs, states, parent) -> int:
        nid = self._next
        self._next += 1
        self.inputs[nid] = set(inputs)
        self.states[nid] = set(states)
        self.parent[nid] = parent
        return nid

    def remove(self, nid: int) -> None:
        del self.inputs[nid], self.states[nid], self.parent[nid]

    def kids(self, nid: int | None) -> list[int]:
        return sorted(k for k, p in self.parent.items() if p == nid)

    def descendants(self, nid: int) -> set[int]:
        out: set[int] = set()
        stack = self.kids(nid)
        while stack:
            k = stack.pop()
            out.add(k)
            stack.extend(self.kids(k))
        return out

    def ancestors(self, nid: int) -> list[int]:
        out = []
        p = self.parent[nid]
        while p is not None:
            out.append(p)
            p = self.parent[p]
        return out

    def depth(self, nid: int) -> int:
        return len(self.ancestors(nid))

    def repair(self, rng: np.random.Generator) -> bool:
        """Give every empty leaf one state from its nearest stocked ancestor."""
        changed = True
        while changed:
            changed = False
            for nid in self.ids():
                if self.kids(nid) or self.states[nid]:
                    continue
                donor = next((a for a in self.ancestors(nid) if self.states[a]), None)
                if donor is None:
                    return False
                pool = sorted(self.states[donor])
                pick = pool[rng.integers(len(pool))]
                self.states[donor].discard(pick)
                self.states[nid].add(pick)
                changed = True
        return True

    def freeze(self) -> InputTree:
        ids = self.ids()
        pos = {nid: i for i, nid in enumerate(ids)}
        groups = [
            (self.inputs[nid], self.states[nid], None if self.parent[nid] is None else pos[self.parent[nid]])
            for nid in ids
        ]
        return InputTree.from_groups(groups, self.n, self.m)


def _choice(rng: np.random.Generator, seq):
    seq = list(seq)
    return seq[int(rng.integers(len(seq)))]


def _op_swap(d: _Draft, rng) -> bool:
    stocked = [nid for nid in d.ids() if d.states[nid]]
    if len(stocked) < 2:
        return False
    a, b = rng.choice(stocked, size=2, replace=False)
    sa = _choice(rng, sorted(d.states[a]))
    sb = _choice(rng, sorted(d.states[b]))
    d.states[a].remove(sa)
    d.states[b].remove(sb)
    d.states[a].add(sb)
    d.states[b].add(sa)
    return True


def _op_move_state(d: _Draft, rng) -> bool:
    stocked = [nid for nid in d.ids() if d.states[nid]]
    if not stocked or len(d.ids()) < 2:
        return False
    src = _choice(rng, stocked)
    dst = _choice(rng, [nid for nid in d.ids() if nid != src])
    s = _choice(rng, sorted(d.states[src]))
    d.states[src].remove(s)
    d.states[dst].add(s)
    return True


def _op_move_subtree(d: _Draft, rng) -> bool:
    movable = []
    for nid in d.ids():
        blocked = d.descendants(nid) | {nid}
        targets = [t for t in [None, *d.ids()] if t not in blocked and t != d.parent[nid]]
        if targets:
            movable.append((nid, targets))
    if not movable:
        return False
    nid, targets = movable[int(rng.integers(len(movable)))]
    d.parent[nid] = targets[int(rng.integers(len(targets)))]
    return True


def _op_couple(d: _Draft, rng, a: int, b: int, min_nodes: int) -> bool:
    if len(d.ids()) - 1 < min_nodes:
        return False
    da, db = d.depth(a), d.depth(b)
    if da > db or (da == db and rng.random() < 0.5):
        a, b = b, a
    # a is the shallower node and keeps its position
    d.inputs[a] |= d.inputs[b]
    d.states[a] |= d.states[b]
    for k in d.kids(b):
        d.parent[k] = a
    d.remove(b)
    return True


def _op_decouple(d: _Draft, rng, nid: int, j: int, k: int) -> bool:
    inputs = sorted(d.inputs[nid])
    first, second = {j}, {k}
    for u in inputs:
        if u not in (j, k):
            (first if rng.random() < 0.5 else second).add(u)
    states = sorted(d.states[nid])
    s1 = {s for s in states if rng.random() < 0.5}
    s2 = set(states) - s1
    kids = d.kids(nid)
    parent = d.parent[nid]
    d.inputs[nid] = first
    d.states[nid] = s1
    other = d.new_node(second, s2, parent)
    for kid in kids:
        if rng.random() < 0.5:
            d.parent[kid] = other
    return True


def mutate(
    tree: InputTree,
    rng: np.random.Generator,
    retries: int = MUTATION_RETRIES,
    min_nodes: int = 2,
    split: tuple[float, float, float] = (0.25, 0.25, 0.25),
) -> InputTree:
    """Apply one randomly drawn mutation operator.

    Swap-states, move-state and move-subtree get the shares in ``split``
    (a quarter each by default).
    Otherwise two distinct inputs are drawn: inputs in different nodes get
    their nodes coupled, inputs sharing a node get it split in two. A draw that
    cannot be applied, or that leaves a leaf without states after repair, is
    redrawn; after ``retries`` draws the input tree is returned unchanged.

    Coupling never reduces the tree below ``min_nodes`` nodes, which keeps the
    undecomposed system out of the search space by default.
    """
    _require_valid(tree)
    c1, c2, c3 = np.cumsum(split)
    if c3 > 1 + 1e-12 or min(split) < 0:
        raise ValueError("operator shares must be nonnegative and sum to at most 1")
    for _ in range(retries):
        d = _Draft(tree)
        roll = rng.random()
        if roll < c1:
            ok = _op_swap(d, rng)
        elif roll < c2:
            ok = _op_move_state(d, rng)
        elif roll < c3:
            ok = _op_move_subtree(d, rng)
        else:
            if tree.m_inputs < 2:
                continue
            j, k = (int(v) for v in rng.choice(tree.m_inputs, size=2, replace=False))
            nj, nk = tree.node_of_input(j), tree.node_of_input(k)
            if nj == nk:
                ok = _op_decouple(d, rng, nj, j, k)
            else:
                ok = _op_couple(d, rng, nj, nk, min_nodes)
        if not ok or not d.repair(rng):
            continue
        out = d.freeze()
        if validate(out)[0] and out != tree:
            return out
    return tree
