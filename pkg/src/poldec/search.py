"""Search over input-trees: genetic algorithm, MCTS, random sampling, Pareto mode.

All engines minimise the fitness ``F`` (ties broken by compute cost, then by
suboptimality) and share a :class:`MemoTable` keyed by the canonical tree key,
so a decomposition is evaluated at most once per run. The undecomposed system
has ``F = 0`` by construction and is therefore never a search result; only
proper decompositions are scored, except as the Pareto anchor.

Budgets combine wall-clock seconds with step and evaluation counts. With
``deterministic=True`` the clock is ignored and only counted budgets apply,
which makes a run reproducible bit for bit.
"""

from __future__ import annotations

import itertools
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .enumeration import enumerate_all, sample_uniform
from .grid import GridSpec
from .input_tree import InputTree, mutate, undecomposed, validate
from .lqr_metrics import DecompositionMetrics, FitnessEvaluator
from .systems import SystemModel

__all__ = [
    "MemoTable",
    "Budget",
    "GaConfig",
    "MctsConfig",
    "RandomConfig",
    "ParetoConfig",
    "SearchReport",
    "ParetoFront",
    "MctsNode",
    "run_ga",
    "run_mcts",
    "run_random",
    "run_pareto",
    "run_exhaustive",
    "split_children",
    "dominates",
    "non_dominated_sort",
    "crowding_distance",
    "uct_scores",
]

logger = logging.getLogger(__name__)

# nominal evaluation rate used to turn a seconds budget into a count when deterministic
DETERMINISTIC_EVALS_PER_SECOND = 200


# memo ------------------------------------------------------------------------


class MemoTable:
    """Canonical key -> metrics, insert-if-absent, first writer wins."""

    def __init__(self):
        self._table: dict[bytes, DecompositionMetrics] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, key: bytes) -> bool:
        return key in self._table

    @property
    def unique(self) -> int:
        return len(self._table)

    def get(self, key: bytes) -> DecompositionMetrics | None:
        with self._lock:
            val = self._table.get(key)
            if val is not None:
                self.hits += 1
            return val

    def insert(self, key: bytes, metrics: DecompositionMetrics) -> DecompositionMetrics:
        with self._lock:
            stored = self._table.setdefault(key, metrics)
            if stored is metrics:
                self.misses += 1
            return stored

    def lookup(self, tree: InputTree, compute: Callable[[InputTree], DecompositionMetrics]) -> DecompositionMetrics:
        hit = self.get(tree.key)
        if hit is not None:
            return hit
        return self.insert(tree.key, compute(tree))

    def items(self):
        return self._table.items()


class _Scorer:
    """Evaluation front-end: memo lookups, optional worker pool, validity guard."""

    def __init__(self, evaluator: FitnessEvaluator, memo: MemoTable | None, workers: int, on_new=None):
        self.evaluator = evaluator
        self.memo = memo if memo is not None else MemoTable()
        self.workers = max(1, int(workers))
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self.requests = 0
        self.on_new = on_new

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _checked(self, tree: InputTree) -> DecompositionMetrics:
        ok, diags = validate(tree)
        if not ok:
            raise AssertionError(f"search produced an invalid tree: {diags[0]}")
        return self.evaluator(tree)

    def score(self, tree: InputTree) -> DecompositionMetrics:
        return self.score_many([tree])[0]

    def score_many(self, trees: Sequence[InputTree]) -> list[DecompositionMetrics]:
        self.requests += len(trees)
        out: list[DecompositionMetrics | None] = [self.memo.get(t.key) for t in trees]
        todo: dict[bytes, InputTree] = {}
        for t, got in zip(trees, out):
            if got is None and t.key not in todo:
                todo[t.key] = t
        if todo:
            fresh = list(todo.values())
            if self.pool is not None:
                results = list(self.pool.map(self._checked, fresh))
            else:
                results = [self._checked(t) for t in fresh]
            # insert in submission order so the first-writer rule is deterministic
            for t, res in zip(fresh, results):
                stored = self.memo.insert(t.key, res)
                if stored is res and self.on_new is not None:
                    self.on_new(t, res)
            for i, t in enumerate(trees):
                if out[i] is None:
                    out[i] = self.memo._table[t.key]
        return out  # type: ignore[return-value]


# budgets and reports ---------------------------------------------------------


@dataclass
class Budget:
    max_seconds: float | None = None
    max_steps: int | None = None
    max_evaluations: int | None = None
    deterministic: bool = False

    def __post_init__(self):
        if self.deterministic and self.max_seconds is not None:
            converted = int(self.max_seconds * DETERMINISTIC_EVALS_PER_SECOND)
            self.max_evaluations = converted if self.max_evaluations is None else min(self.max_evaluations, converted)
            self.max_seconds = None
        if self.max_seconds is None and self.max_steps is None and self.max_evaluations is None:
            raise ValueError("a search needs at least one budget (seconds, steps or evaluations)")
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._start

    def exhausted(self, steps: int, evaluations: int) -> bool:
        if self.max_steps is not None and steps >= self.max_steps:
            return True
        if self.max_evaluations is not None and evaluations >= self.max_evaluations:
            return True
        if self.max_seconds is not None and self.elapsed() >= self.max_seconds:
            return True
        return False


@dataclass
class SearchReport:
    method: str
    model: str
    seed: int
    best_tree: InputTree | None
    best_metrics: DecompositionMetrics | None
    unique_evaluations: int
    requests: int
    steps: int
    elapsed: float
    history: list[dict] = field(default_factory=list)
    deterministic: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self, timing: bool | None = None) -> dict:
        timing = (not self.deterministic) if timing is None else timing
        hist = [
            {k: v for k, v in h.items() if timing or k != "elapsed_s"} for h in self.history
        ]
        d = {
            "method": self.method,
            "model": self.model,
            "seed": self.seed,
            "best_tree": None if self.best_tree is None else self.best_tree.to_string(),
            "best_metrics": None if self.best_metrics is None else self.best_metrics.to_dict(),
            "unique_decompositions": self.unique_evaluations,
            "fitness_requests": self.requests,
            "steps": self.steps,
            "deterministic": self.deterministic,
            "history": hist,
        }
        if timing:
            d["elapsed_s"] = self.elapsed
        d.update(self.extra)
        return d


class _Tracker:
    def __init__(self, budget: Budget):
        self.budget = budget
        self.best_tree: InputTree | None = None
        self.best: DecompositionMetrics | None = None
        self.history: list[dict] = []

    def offer(self, tree: InputTree, metrics: DecompositionMetrics, step: int, evaluations: int) -> None:
        if self.best is None or metrics.rank < self.best.rank:
            self.best_tree, self.best = tree, metrics
            self.history.append(
                {
                    "step": step,
                    "evaluations": evaluations,
                    "elapsed_s": round(self.budget.elapsed(), 6),
                    "best_F": metrics.F,
                    "best_tree": tree.to_string(),
                }
            )


def _setup(model: SystemModel, grid: GridSpec | None, evaluator: FitnessEvaluator | None):
    if evaluator is None:
        evaluator = FitnessEvaluator(model, grid)
    if model.m < 2:
        raise ValueError(f"{model.name} has a single input; there is nothing to decompose")
    return evaluator


def _report(method, model, cfg, tracker, scorer, steps, budget, **extra) -> SearchReport:
    return SearchReport(
        method=method,
        model=model.name,
        seed=cfg.seed,
        best_tree=tracker.best_tree,
        best_metrics=tracker.best,
        unique_evaluations=scorer.memo.unique,
        requests=scorer.requests,
        steps=steps,
        elapsed=budget.elapsed(),
        history=tracker.history,
        deterministic=cfg.deterministic,
        extra=extra,
    )


# genetic algorithm -----------------------------------------------------------


@dataclass
class GaConfig:
    population_size: int = 100
    elite_fraction: float = 0.1
    tournament_size: int = 3
    operator_split: tuple[float, float, float] = (0.25, 0.25, 0.25)
    max_seconds: float | None = None
    max_generations: int | None = None
    max_evaluations: int | None = None
    seed: int = 0
    workers: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if not 0 < self.elite_fraction < 1:
            raise ValueError("elite_fraction must lie in (0, 1)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be positive")


def _tournament(rng, scores: Sequence[DecompositionMetrics], size: int) -> int:
    picks = rng.integers(len(scores), size=size)
    return int(min(picks, key=lambda i: scores[i].rank))


def run_ga(
    model: SystemModel,
    grid: GridSpec | None = None,
    config: GaConfig | None = None,
    memo: MemoTable | None = None,
    evaluator: FitnessEvaluator | None = None,
    on_generation: Callable[[int, list[InputTree], list[DecompositionMetrics]], None] | None = None,
) -> SearchReport:
    """Evolve uniformly sampled trees by tournament selection, elitism and mutation."""
    cfg = config or GaConfig(max_generations=50)
    evaluator = _setup(model, grid, evaluator)
    budget = Budget(cfg.max_seconds, cfg.max_generations, cfg.max_evaluations, cfg.deterministic)
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(evaluator, memo, 1 if cfg.deterministic else cfg.workers)
    tracker = _Tracker(budget)
    n, m = model.n, model.m
    try:
        pop = [sample_uniform(n, m, rng) for _ in range(cfg.population_size)]
        scores = scorer.score_many(pop)
        for t, s in zip(pop, scores):
            tracker.offer(t, s, 0, scorer.memo.unique)
        if on_generation:
            on_generation(0, pop, scores)
        n_elite = max(1, int(round(cfg.elite_fraction * cfg.population_size)))
        gen = 0
        while not budget.exhausted(gen, scorer.memo.unique):
            order = sorted(range(len(pop)), key=lambda i: scores[i].rank)
            nxt = [pop[i] for i in order[:n_elite]]
            while len(nxt) < cfg.population_size:
                parent = pop[_tournament(rng, scores, cfg.tournament_size)]
                nxt.append(mutate(parent, rng, split=cfg.operator_split))
            pop = nxt
            scores = scorer.score_many(pop)
            gen += 1
            for t, s in zip(pop, scores):
                tracker.offer(t, s, gen, scorer.memo.unique)
            if on_generation:
                on_generation(gen, pop, scores)
    finally:
        scorer.close()
    return _report("ga", model, cfg, tracker, scorer, gen, budget)


# MCTS ------------------------------------------------------------------------


def split_children(tree: InputTree) -> list[InputTree]:
    """Every tree obtained by splitting one leaf in two, cascaded or decoupled.

    A cascade puts one part at the leaf's position and the other below it (the
    lower part needs states); a decoupled split makes the parts siblings (both
    need states).
    """
    out: dict[bytes, InputTree] = {}
    groups = [(nd.inputs, nd.states, nd.parent) for nd in tree.nodes]
    index = {nd.node_id: i for i, nd in enumerate(tree.nodes)}
    for leaf in tree.leaves():
        li = index[leaf]
        U, X, parent = groups[li]
        if len(U) < 2:
            continue
        rest = [(u, x, None if p is None else index[p]) for k, (u, x, p) in enumerate(groups) if k != li]
        # map positions: rest keeps its order; parents referring past li shift down by one
        fixed = []
        for u, x, p in rest:
            if p is not None and p > li:
                p -= 1
            fixed.append((u, x, p))
        leaf_parent = None if parent is None else index[parent]
        if leaf_parent is not None and leaf_parent > li:
            leaf_parent -= 1
        base = len(fixed)
        for size in range(1, len(U)):
            for U1 in itertools.combinations(U, size):
                U2 = tuple(u for u in U if u not in U1)
                for mask in range(1 << len(X)):
                    X1 = tuple(x for b, x in enumerate(X) if mask >> b & 1)
                    X2 = tuple(x for b, x in enumerate(X) if not mask >> b & 1)
                    if X2:
                        cand = fixed + [(U1, X1, leaf_parent), (U2, X2, base)]
                        t = InputTree.from_groups(cand, tree.n_states, tree.m_inputs)
                        out.setdefault(t.key, t)
                    if X1 and X2 and U1[0] < U2[0]:
                        cand = fixed + [(U1, X1, leaf_parent), (U2, X2, leaf_parent)]
                        t = InputTree.from_groups(cand, tree.n_states, tree.m_inputs)
                        out.setdefault(t.key, t)
    return list(out.values())


@dataclass
class MctsNode:
    tree: InputTree
    own: float = math.inf
    Q: float = math.inf
    N: int = 0
    children: list[bytes] | None = None
    exhausted: bool = False
    metrics: DecompositionMetrics | None = None

    @property
    def expanded(self) -> bool:
        return self.children is not None


@dataclass
class MctsConfig:
    max_seconds: float | None = None
    max_rollouts: int | None = None
    max_evaluations: int | None = None
    max_children: int | None = None
    seed: int = 0
    workers: int = 1
    deterministic: bool = False


def uct_scores(Q: np.ndarray, N: np.ndarray, parent_visits: int) -> np.ndarray:
    """``Q - sqrt(2 ln(N_parent + 1) / N_child)``; unvisited children score -inf."""
    Q = np.asarray(Q, float)
    N = np.asarray(N, float)
    with np.errstate(divide="ignore"):
        bonus = np.sqrt(2.0 * math.log(parent_visits + 1) / N)
    return np.where(N > 0, Q - bonus, -np.inf)


def _argmin_random(rng, values: np.ndarray) -> int:
    best = np.flatnonzero(values == values.min())
    return int(best[rng.integers(best.size)]) if best.size > 1 else int(best[0])


def run_mcts(
    model: SystemModel,
    grid: GridSpec | None = None,
    config: MctsConfig | None = None,
    memo: MemoTable | None = None,
    evaluator: FitnessEvaluator | None = None,
    on_rollout: Callable[[list[MctsNode], list[tuple[MctsNode, bool]], dict[bytes, MctsNode]], None] | None = None,
) -> SearchReport:
    """Top-down search from the undecomposed system by repeated leaf splits.

    Search nodes are shared between paths that reach the same decomposition.
    A node whose reachable nodes have all been expanded is marked exhausted and
    drops out of selection; the search ends early once the root is exhausted.
    ``on_rollout(path, selections, nodes)`` is called after every backup, with
    ``selections`` recording each chosen child and whether it was exhausted at
    the moment it was chosen.
    """
    cfg = config or MctsConfig(max_rollouts=1000)
    evaluator = _setup(model, grid, evaluator)
    budget = Budget(cfg.max_seconds, cfg.max_rollouts, cfg.max_evaluations, cfg.deterministic)
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(evaluator, memo, 1)
    tracker = _Tracker(budget)
    nodes: dict[bytes, MctsNode] = {}
    rollouts = 0

    def expand(node: MctsNode, is_root: bool) -> None:
        if not is_root:
            node.metrics = scorer.score(node.tree)
            node.own = node.metrics.F
            tracker.offer(node.tree, node.metrics, rollouts, scorer.memo.unique)
        node.Q = node.own
        kids = split_children(node.tree)
        if cfg.max_children is not None and len(kids) > cfg.max_children:
            keep = np.sort(rng.choice(len(kids), size=cfg.max_children, replace=False))
            kids = [kids[i] for i in keep]
        node.children = []
        for t in kids:
            if t.key not in nodes:
                nodes[t.key] = MctsNode(t)
            node.children.append(t.key)
        node.exhausted = not node.children

    root = MctsNode(undecomposed(model.n, model.m))
    nodes[root.tree.key] = root
    expand(root, is_root=True)
    try:
        while not root.exhausted and not budget.exhausted(rollouts, scorer.memo.unique):
            path = [root]
            selections: list[tuple[MctsNode, bool]] = []
            node = root
            while node.children:
                live = [nodes[k] for k in node.children if not nodes[k].exhausted]
                if not live:
                    break
                fresh = [c for c in live if not c.expanded]
                if fresh:
                    child = fresh[int(rng.integers(len(fresh)))]
                else:
                    scores = uct_scores([c.Q for c in live], [c.N for c in live], node.N)
                    child = live[_argmin_random(rng, scores)]
                selections.append((child, child.exhausted))
                if not child.expanded:
                    expand(child, is_root=False)
                path.append(child)
                node = child
            rollouts += 1
            for nd in reversed(path):
                nd.N += 1
                kids = [nodes[k] for k in nd.children or ()]
                nd.Q = min([nd.own] + [c.Q for c in kids if c.expanded])
                nd.exhausted = all(c.exhausted for c in kids)
            if on_rollout:
                on_rollout(path, selections, nodes)
    finally:
        scorer.close()
    return _report(
        "mcts", model, cfg, tracker, scorer, rollouts, budget,
        root_Q=root.Q, search_nodes=len(nodes), exhausted=root.exhausted,
    )


# random sampling -------------------------------------------------------------


@dataclass
class RandomConfig:
    max_seconds: float | None = None
    max_draws: int | None = None
    max_evaluations: int | None = None
    batch_size: int = 64
    seed: int = 0
    workers: int = 1
    deterministic: bool = False


def run_random(
    model: SystemModel,
    grid: GridSpec | None = None,
    config: RandomConfig | None = None,
    memo: MemoTable | None = None,
    evaluator: FitnessEvaluator | None = None,
) -> SearchReport:
    """Uniform draws until the budget runs out; the report counts unique keys."""
    cfg = config or RandomConfig(max_draws=1000)
    evaluator = _setup(model, grid, evaluator)
    budget = Budget(cfg.max_seconds, cfg.max_draws, cfg.max_evaluations, cfg.deterministic)
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(evaluator, memo, 1 if cfg.deterministic else cfg.workers)
    tracker = _Tracker(budget)
    draws = 0
    try:
        while not budget.exhausted(draws, scorer.memo.unique):
            size = cfg.batch_size
            if cfg.max_draws is not None:
                size = min(size, cfg.max_draws - draws)
            batch = [sample_uniform(model.n, model.m, rng) for _ in range(size)]
            for i, (t, s) in enumerate(zip(batch, scorer.score_many(batch))):
                tracker.offer(t, s, draws + i + 1, scorer.memo.unique)
            draws += size
    finally:
        scorer.close()
    return _report("random", model, cfg, tracker, scorer, draws, budget)


# exhaustive ------------------------------------------------------------------


def run_exhaustive(
    model: SystemModel,
    grid: GridSpec | None = None,
    memo: MemoTable | None = None,
    evaluator: FitnessEvaluator | None = None,
    cap: int = 10**5,
) -> SearchReport:
    """Score every decomposition; the reference answer for small systems."""
    evaluator = _setup(model, grid, evaluator)
    budget = Budget(max_steps=cap + 1, deterministic=True)
    scorer = _Scorer(evaluator, memo, 1)
    tracker = _Tracker(budget)
    steps = 0
    for t in enumerate_all(model.n, model.m, cap=cap):
        steps += 1
        tracker.offer(t, scorer.score(t), steps, scorer.memo.unique)
    return _report("exhaustive", model, _Seedless(), tracker, scorer, steps, budget)


@dataclass
class _Seedless:
    seed: int = 0
    deterministic: bool = True


# Pareto ----------------------------------------------------------------------


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """``a`` is no worse than ``b`` everywhere and better somewhere (minimisation)."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def non_dominated_sort(points: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fronts of indices, best first (fast non-dominated sort)."""
    n = len(points)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(points[p], points[q]):
                dominated_by[p].append(q)
            elif dominates(points[q], points[p]):
                count[p] += 1
        if count[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                count[q] -= 1
                if count[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    return fronts[:-1]


def crowding_distance(points: Sequence[Sequence[float]], front: Sequence[int]) -> dict[int, float]:
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: math.inf for i in front}
    for k in range(len(points[front[0]])):
        ordered = sorted(front, key=lambda i: points[i][k])
        lo, hi = points[ordered[0]][k], points[ordered[-1]][k]
        dist[ordered[0]] = dist[ordered[-1]] = math.inf
        if hi == lo:
            continue
        for a, b, c in zip(ordered, ordered[1:], ordered[2:]):
            dist[b] += (points[c][k] - points[a][k]) / (hi - lo)
    return dist


@dataclass
class ParetoConfig:
    population_size: int = 100
    max_seconds: float | None = None
    max_generations: int | None = None
    max_evaluations: int | None = None
    seed: int = 0
    workers: int = 1
    deterministic: bool = False


@dataclass
class ParetoFront:
    members: list[tuple[InputTree, DecompositionMetrics]]
    report: SearchReport | None = None

    def objectives(self) -> list[tuple[float, float]]:
        return [(mt.F_err, mt.F_comp) for _, mt in self.members]

    def rows(self) -> list[dict]:
        return [{"tree": t.to_string(), "F_err": mt.F_err, "F_comp": mt.F_comp} for t, mt in self.members]


def _objectives(mt: DecompositionMetrics) -> tuple[float, float]:
    return (mt.F_err, mt.F_comp)


def _select(pop: list[InputTree], scores: list[DecompositionMetrics], size: int):
    pts = [_objectives(s) for s in scores]
    chosen: list[int] = []
    rank: dict[int, int] = {}
    crowd: dict[int, float] = {}
    for r, front in enumerate(non_dominated_sort(pts)):
        dist = crowding_distance(pts, front)
        for i in front:
            rank[i] = r
            crowd[i] = dist[i]
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
        else:
            by_crowd = sorted(front, key=lambda i: (-dist[i], i))
            chosen.extend(by_crowd[: size - len(chosen)])
            break
    return [pop[i] for i in chosen], [scores[i] for i in chosen], [rank[i] for i in chosen], [crowd[i] for i in chosen]


def run_pareto(
    model: SystemModel,
    grid: GridSpec | None = None,
    config: ParetoConfig | None = None,
    memo: MemoTable | None = None,
    evaluator: FitnessEvaluator | None = None,
) -> ParetoFront:
    """NSGA-II over ``(F_err, F_comp)`` with the GA mutation operators.

    The result is the non-dominated subset of the final population together
    with the undecomposed tree, sorted by ``F_err`` ascending. The
    undecomposed tree (``F_err = 0``, ``F_comp = 1``) only drops out when a
    decomposition is also exact and therefore dominates it.
    """
    cfg = config or ParetoConfig(max_generations=50)
    evaluator = _setup(model, grid, evaluator)
    budget = Budget(cfg.max_seconds, cfg.max_generations, cfg.max_evaluations, cfg.deterministic)
    rng = np.random.default_rng(cfg.seed)
    scorer = _Scorer(evaluator, memo, 1 if cfg.deterministic else cfg.workers)
    tracker = _Tracker(budget)
    n, m, P = model.n, model.m, cfg.population_size

    def fill_unique(trees: list[InputTree]) -> list[InputTree]:
        seen: dict[bytes, InputTree] = {}
        for t in trees:
            seen.setdefault(t.key, t)
        out = list(seen.values())
        tries = 0
        while len(out) < P and tries < 10 * P:
            t = sample_uniform(n, m, rng)
            tries += 1
            if t.key not in seen:
                seen[t.key] = t
                out.append(t)
        return out

    gen = 0
    try:
        pop = fill_unique([sample_uniform(n, m, rng) for _ in range(P)])
        scores = scorer.score_many(pop)
        for t, s in zip(pop, scores):
            tracker.offer(t, s, 0, scorer.memo.unique)
        pop, scores, rank, crowd = _select(pop, scores, P)
        while not budget.exhausted(gen, scorer.memo.unique):
            kids = []
            for _ in range(P):
                a, b = rng.integers(len(pop), size=2)
                better = a if (rank[a], -crowd[a]) <= (rank[b], -crowd[b]) else b
                kids.append(mutate(pop[better], rng))
            merged = fill_unique(pop + kids)
            merged_scores = scorer.score_many(merged)
            gen += 1
            for t, s in zip(merged, merged_scores):
                tracker.offer(t, s, gen, scorer.memo.unique)
            pop, scores, rank, crowd = _select(merged, merged_scores, P)
    finally:
        scorer.close()

    anchor = undecomposed(n, m)
    candidates = [(t, s) for t, s, r in zip(pop, scores, rank) if r == 0]
    candidates.append((anchor, evaluator(anchor)))
    pts = [_objectives(s) for _, s in candidates]
    keep = [
        candidates[i]
        for i in range(len(candidates))
        if not any(dominates(pts[j], pts[i]) for j in range(len(candidates)) if j != i)
    ]
    uniq: dict[bytes, tuple[InputTree, DecompositionMetrics]] = {}
    for t, s in keep:
        uniq.setdefault(t.key, (t, s))
    members = sorted(uniq.values(), key=lambda ts: (ts[1].F_err, ts[1].F_comp, ts[0].to_string()))
    report = _report("pareto", model, cfg, tracker, scorer, gen, budget, front_size=len(members))
    return ParetoFront(members, report)
