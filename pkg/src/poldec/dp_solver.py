"""Grid-based policy iteration for decomposed control problems.

Each node of an input-tree gets a lookup-table policy over its subsystem
states, computed by semi-Lagrangian policy iteration::

    V(x) <- min_u  c(x, u) t + exp(-lam t) V(x + t f(x, u))

with multilinear interpolation clamped to the state box. The step ``t`` is
the grid's ``h`` for fast cells and grows for slow cells (up to
``max_step``) so that every backup crosses about one cell; the stage cost is
then averaged over both ends of the step. With ``max_step=None`` the step is
fixed at ``h`` and the cost is taken at the start. Nodes are solved
children first, so the policies of cascaded inputs can be read during the
parent's solve. The resulting :class:`PolicyAssembly` evaluates all inputs
from a full state and can be simulated with RK4 or stored in a small
versioned binary format.
"""

from __future__ import annotations

import itertools
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import GridSpec
from .input_tree import InputTree, Subsystem, subsystem_of, validate
from .systems import DynamicsDomainError, SystemModel, get_model

__all__ = [
    "TabularPolicy",
    "PolicyAssembly",
    "SolveStats",
    "Trajectory",
    "BasinResult",
    "DPError",
    "interpolate",
    "solve_policy",
    "solve_decomposition",
    "parameter_count",
    "simulate",
    "simulate_batch",
    "basin_sweep",
    "save_policy",
    "load_policy",
    "POLICY_MAGIC",
    "POLICY_VERSION",
]

logger = logging.getLogger(__name__)

POLICY_MAGIC = b"PDPOLICY"
POLICY_VERSION = 1


class DPError(RuntimeError):
    """Policy iteration cannot run on the requested subsystem."""


# interpolation ---------------------------------------------------------------


def _corner_weights(axes: Sequence[np.ndarray], pts: np.ndarray):
    """Flat corner indices and weights of multilinear interpolation.

    ``pts`` has shape (N, d); coordinates are clamped to the box. Returns
    arrays of shape (N, 2**d).
    """
    N, d = pts.shape
    shape = [a.size for a in axes]
    idx = np.zeros((N, 1), dtype=np.int64)
    wts = np.ones((N, 1))
    for k, ax in enumerate(axes):
        stride = int(np.prod(shape[k + 1 :], dtype=np.int64))
        step = (ax[-1] - ax[0]) / (ax.size - 1)
        s = np.clip((pts[:, k] - ax[0]) / step, 0.0, ax.size - 1)
        i0 = np.minimum(s.astype(np.int64), ax.size - 2)
        t = (s - i0)[:, None]
        base = (idx + i0[:, None] * stride)
        idx = np.concatenate([base, base + stride], axis=1)
        wts = np.concatenate([wts * (1.0 - t), wts * t], axis=1)
    return idx, wts


def interpolate(axes: Sequence[np.ndarray], table: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``table`` (grid shape + trailing dims) at ``pts`` (..., d)."""
    pts = np.asarray(pts, dtype=float)
    lead = pts.shape[:-1]
    flat = pts.reshape(-1, len(axes))
    grid_size = int(np.prod([a.size for a in axes]))
    tail = table.shape[len(axes) :]
    vals = table.reshape(grid_size, -1)
    idx, wts = _corner_weights(axes, flat)
    out = np.einsum("nc,ncj->nj", wts, vals[idx])
    return out.reshape(lead + tail)


# policies --------------------------------------------------------------------


@dataclass
class TabularPolicy:
    """Lookup-table policy for one node: inputs as a function of subsystem states."""

    states: tuple[int, ...]
    inputs: tuple[int, ...]
    axes: list[np.ndarray]
    table: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    value: np.ndarray | None = None
    node_id: int = 0

    def __post_init__(self):
        expect = tuple(a.size for a in self.axes) + (len(self.inputs),)
        if self.table.shape != expect:
            raise ValueError(f"table shape {self.table.shape} does not match grid {expect}")

    @property
    def n_parameters(self) -> int:
        return int(self.table.size)

    def __call__(self, x_sub: np.ndarray) -> np.ndarray:
        """Inputs at subsystem states ``x_sub`` (..., |states|), clipped to limits."""
        return np.clip(interpolate(self.axes, self.table, x_sub), self.lower, self.upper)

    def value_at(self, x_sub: np.ndarray) -> np.ndarray:
        if self.value is None:
            raise ValueError("this policy carries no value table")
        return interpolate(self.axes, self.value, x_sub)


@dataclass
class SolveStats:
    iterations: int
    evaluation_sweeps: int
    converged: bool
    value_changes: list[float]
    policy_changes: list[float]
    seconds: float


def _cell_steps(fx: np.ndarray, spacing: np.ndarray, h: float, max_step: float) -> np.ndarray:
    """Per-cell step length: long enough to cross one cell, within ``[h, max_step]``.

    Slow cells near the goal would otherwise move a fraction of a cell per
    backup, and repeated interpolation smears the value function (an error
    of first order in the grid spacing that does not shrink with ``h``).
    """
    if max_step <= h:
        return np.full(fx.shape[0], h)
    rate = np.max(np.abs(fx) / spacing, axis=1)
    with np.errstate(divide="ignore"):
        t = np.where(rate > 0, 1.0 / rate, max_step)
    return np.clip(t, h, max_step)


def _subsystem_problem(model: SystemModel, grid: GridSpec, sub: Subsystem, decoupled_mode: str):
    if decoupled_mode not in ("trim", "zero"):
        raise ValueError("decoupled inputs are frozen either at 'trim' or at 'zero'")
    xs = list(sub.states)
    if not xs:
        raise DPError(f"node {sub.node_id} has no states to build a table over")
    lo, hi = grid.state_lower[xs], grid.state_upper[xs]
    goal = model.x_goal[xs]
    if np.any(goal < lo) or np.any(goal > hi):
        raise DPError(f"goal of node {sub.node_id} lies outside its grid box")
    axes = grid.axes(xs)
    u_base = model.u_goal.copy() if decoupled_mode == "trim" else np.zeros(model.m)
    return axes, u_base


def solve_policy(
    model: SystemModel,
    tree: InputTree,
    node_id: int,
    grid: GridSpec | None = None,
    lower_policies: dict[int, TabularPolicy] | None = None,
    decoupled_mode: str = "trim",
    return_stats: bool = False,
):
    """Policy iteration for the subsystem of one node.

    Complement states sit at the goal, decoupled inputs at the trim input (or
    zero with ``decoupled_mode="zero"``) and cascaded inputs follow
    ``lower_policies``, which must hold the policy of every node below.
    """
    grid = grid or model.grid
    lower_policies = lower_policies or {}
    sub = subsystem_of(tree, node_id)
    t0 = time.perf_counter()
    axes, u_base = _subsystem_problem(model, grid, sub, decoupled_mode)
    xs, us = list(sub.states), list(sub.inputs)

    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(xs))
    n_cells = mesh.shape[0]
    X = np.broadcast_to(model.x_goal, (n_cells, model.n)).copy()
    X[:, xs] = mesh

    U = np.broadcast_to(u_base, (n_cells, model.m)).copy()
    covered: set[int] = set()
    for nid in tree.descendants(node_id):
        pol = lower_policies.get(nid)
        if pol is None:
            raise DPError(f"policy of cascaded node {nid} is missing while solving node {node_id}")
        pos = [xs.index(s) for s in pol.states]
        U[:, list(pol.inputs)] = pol(mesh[:, pos])
        covered.update(pol.inputs)
    if covered != set(sub.cascaded):
        raise DPError(f"cascaded inputs {sorted(set(sub.cascaded) - covered)} have no policy")

    # cost on subsystem coordinates: own and cascaded inputs are charged
    charged = sorted(set(us) | set(sub.cascaded))
    Qs = model.Q[np.ix_(xs, xs)]
    Rs = model.R[np.ix_(charged, charged)]
    dx = mesh - model.x_goal[xs]
    state_cost = np.einsum("ni,ij,nj->n", dx, Qs, dx)

    actions = np.stack(np.meshgrid(*grid.action_values(us), indexing="ij"), -1).reshape(-1, len(us))
    n_act = actions.shape[0]
    h = grid.h
    max_step = h if grid.max_step is None else max(h, grid.max_step)
    spacing = np.array([a[1] - a[0] for a in axes])
    trapezoid = max_step > h
    shape = tuple(a.size for a in axes)

    def stage(a_rows: np.ndarray):
        """Next states and stage costs for per-cell actions ``a_rows`` (n_cells, |u|)."""
        Ua = U.copy()
        Ua[:, us] = a_rows
        try:
            fx = model.f(X, Ua)
        except DynamicsDomainError as exc:
            raise DPError(f"dynamics undefined on the grid of node {node_id}: {exc}") from exc
        if not np.all(np.isfinite(fx)):
            raise DPError(f"non-finite dynamics on the grid of node {node_id}")
        step = _cell_steps(fx[:, xs], spacing, h, max_step)
        nxt = mesh + step[:, None] * fx[:, xs]
        du = Ua[:, charged] - model.u_goal[charged]
        run = state_cost
        if trapezoid:
            dn = nxt - model.x_goal[xs]
            run = 0.5 * (state_cost + np.einsum("ni,ij,nj->n", dn, Qs, dn))
        cost = (run + np.einsum("ni,ij,nj->n", du, Rs, du)) * step
        return nxt, cost, np.exp(-model.discount * step)

    # initial policy: lattice action closest to the trim input
    start = int(np.argmin(np.sum((actions - model.u_goal[us]) ** 2, axis=1)))
    choice = np.full(n_cells, start, dtype=np.int64)
    V = np.zeros(n_cells)
    value_changes: list[float] = []
    policy_changes: list[float] = []
    sweeps = 0
    converged = False
    it = 0
    for it in range(1, grid.max_policy_iterations + 1):
        nxt, cost, gamma = stage(actions[choice])
        idx, wts = _corner_weights(axes, nxt)
        P = sp.csr_matrix(
            ((wts * gamma[:, None]).ravel(), idx.ravel(), np.arange(0, idx.size + 1, idx.shape[1])), shape=(n_cells, n_cells)
        )
        V_prev = V.copy()
        for _ in range(grid.max_evaluation_sweeps):
            V_new = cost + P @ V
            sweeps += 1
            delta = float(np.max(np.abs(V_new - V)))
            V = V_new
            if delta < grid.tolerance:
                break
        value_changes.append(float(np.max(np.abs(V - V_prev))))

        best = np.full(n_cells, np.inf)
        new_choice = choice.copy()
        for a in range(n_act):
            nxt_a, cost_a, gamma_a = stage(np.broadcast_to(actions[a], (n_cells, len(us))))
            q = cost_a + gamma_a * interpolate(axes, V.reshape(shape), nxt_a)
            better = q < best - 1e-12
            best = np.where(better, q, best)
            new_choice = np.where(better, a, new_choice)
        # keep the incumbent action unless strictly improved, which prevents cycling on ties
        q_inc = cost + gamma * interpolate(axes, V.reshape(shape), nxt)
        keep = q_inc <= best + 1e-12
        new_choice = np.where(keep, choice, new_choice)
        change = float(np.max(np.abs(actions[new_choice] - actions[choice]))) if n_cells else 0.0
        policy_changes.append(change)
        choice = new_choice
        if change < grid.tolerance:
            converged = True
            break

    table = actions[choice].reshape(shape + (len(us),))
    policy = TabularPolicy(
        states=tuple(xs),
        inputs=tuple(us),
        axes=axes,
        table=np.ascontiguousarray(table),
        lower=grid.input_lower[us].copy(),
        upper=grid.input_upper[us].copy(),
        value=V.reshape(shape),
        node_id=node_id,
    )
    stats = SolveStats(it, sweeps, converged, value_changes, policy_changes, time.perf_counter() - t0)
    logger.debug("node %d: %d cells, %d actions, %d rounds, converged=%s", node_id, n_cells, n_act, it, converged)
    return (policy, stats) if return_stats else policy


def parameter_count(tree: InputTree, grid: GridSpec) -> int:
    """Sum over nodes of |inputs| times the number of cells of the subsystem grid."""
    total = 0
    for nd in tree.nodes:
        sub = subsystem_of(tree, nd.node_id)
        total += len(sub.inputs) * grid.cells(sub.states)
    return total


@dataclass
class PolicyAssembly:
    """All node policies of a decomposition, queried with full states."""

    model: SystemModel
    tree: InputTree
    grid: GridSpec
    policies: dict[int, TabularPolicy]
    order: tuple[int, ...]
    node_seconds: dict[int, float] = field(default_factory=dict)
    stats: dict[int, SolveStats] = field(default_factory=dict)
    decoupled_mode: str = "trim"
    model_kwargs: dict = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        return sum(p.n_parameters for p in self.policies.values())

    @property
    def total_seconds(self) -> float:
        return float(sum(self.node_seconds.values()))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.broadcast_to(self.model.u_goal, x.shape[:-1] + (self.model.m,)).copy()
        for nid in self.order:
            pol = self.policies[nid]
            u[..., list(pol.inputs)] = pol(x[..., list(pol.states)])
        return u


def solve_decomposition(
    model: SystemModel,
    tree: InputTree,
    grid: GridSpec | None = None,
    decoupled_mode: str = "trim",
    model_kwargs: dict | None = None,
) -> PolicyAssembly:
    """Solve every node, children first, and assemble the full policy."""
    ok, diags = validate(tree)
    if not ok:
        raise DPError(f"invalid tree: {'; '.join(diags)}")
    if (tree.n_states, tree.m_inputs) != (model.n, model.m):
        raise DPError(f"tree is for n={tree.n_states}, m={tree.m_inputs}; model has n={model.n}, m={model.m}")
    grid = grid or model.grid
    order = tuple(tree.solve_order())
    policies: dict[int, TabularPolicy] = {}
    secs: dict[int, float] = {}
    stats: dict[int, SolveStats] = {}
    for nid in order:
        pol, st = solve_policy(model, tree, nid, grid, policies, decoupled_mode, return_stats=True)
        policies[nid] = pol
        secs[nid] = st.seconds
        stats[nid] = st
        logger.info("solved node %d (%s) in %.2fs", nid, tree.node(nid), st.seconds)
    return PolicyAssembly(model, tree, grid, policies, order, secs, stats, decoupled_mode, dict(model_kwargs or {}))


# simulation ------------------------------------------------------------------


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    diverged: bool
    divergence_time: float | None
    converged: bool
    final_error: float
    events: list[tuple[float, str]] = field(default_factory=list)

    def to_rows(self, state_names, input_names) -> tuple[list[str], list[list[float]]]:
        header = ["t", *state_names, *input_names]
        rows = [[float(self.t[k]), *map(float, self.x[k]), *map(float, self.u[k])] for k in range(self.t.size)]
        return header, rows


def _controller(model: SystemModel, ctrl) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(ctrl, PolicyAssembly) or callable(ctrl):
        return ctrl
    K = np.asarray(ctrl, dtype=float)
    if K.shape != (model.m, model.n):
        raise ValueError(f"gain must have shape {(model.m, model.n)}, got {K.shape}")
    return lambda x: model.u_goal - (np.asarray(x) - model.x_goal) @ K.T


def _scale(model: SystemModel) -> np.ndarray:
    return 0.5 * (model.x_upper - model.x_lower)


def goal_distance(model: SystemModel, x: np.ndarray) -> np.ndarray:
    """Goal distance with each state scaled by its box half-width."""
    return np.sqrt(np.sum(((np.asarray(x) - model.x_goal) / _scale(model)) ** 2, axis=-1))


def simulate_batch(
    model: SystemModel,
    controller,
    X0: np.ndarray,
    duration: float,
    dt: float = 0.002,
    tolerance: float = 0.05,
    escape: float = 10.0,
):
    """RK4 closed-loop rollouts for many initial states at once.

    Inputs are held over each step and saturated to the limits. A rollout
    diverges once its state turns non-finite, the dynamics become undefined,
    or its scaled goal distance exceeds ``escape``. Returns
    ``(final_states, converged, diverged, divergence_time)``.
    """
    pi = _controller(model, controller)
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim != 2 or X.shape[1] != model.n:
        raise ValueError(f"initial states must have shape (k, {model.n})")
    if not np.all(np.isfinite(X)):
        raise ValueError("initial states must be finite")
    k = X.shape[0]
    alive = np.ones(k, bool)
    div_time = np.full(k, np.nan)
    steps = int(round(duration / dt))

    def f_safe(x, u):
        try:
            return model.f(x, u)
        except DynamicsDomainError:
            out = np.empty_like(x)
            for i in range(x.shape[0]):
                try:
                    out[i] = model.f(x[i], u[i])
                except DynamicsDomainError:
                    out[i] = np.nan
            return out

    with np.errstate(all="ignore"):
        for s in range(steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            x = X[idx]
            u = model.saturate(pi(x))
            k1 = f_safe(x, u)
            k2 = f_safe(x + 0.5 * dt * k1, u)
            k3 = f_safe(x + 0.5 * dt * k2, u)
            k4 = f_safe(x + dt * k3, u)
            xn = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = ~np.all(np.isfinite(xn), axis=1)
            bad |= ~bad & (goal_distance(model, np.where(np.isfinite(xn), xn, 0.0)) > escape)
            X[idx] = xn
            dead = idx[bad]
            alive[dead] = False
            div_time[dead] = (s + 1) * dt
    diverged = ~alive
    dist = np.where(diverged, np.inf, goal_distance(model, np.where(np.isfinite(X), X, 0.0)))
    return X, (~diverged) & (dist < tolerance), diverged, div_time


def simulate(
    model: SystemModel,
    controller,
    x0: Sequence[float],
    duration: float,
    dt: float = 0.002,
    tolerance: float = 0.05,
    escape: float = 10.0,
) -> Trajectory:
    """Closed-loop trajectory under a policy assembly, a gain ``K`` or any callable.

    Gains act as ``u = u_goal - K (x - x_goal)``. Inputs are held over each
    RK4 step and saturated. Convergence means the box-scaled distance to the
    goal at the end is below ``tolerance``. Model events (such as a contact
    break) are logged with their first time of occurrence.
    """
    pi = _controller(model, controller)
    x = np.array(x0, dtype=float)
    if x.shape != (model.n,) or not np.all(np.isfinite(x)):
        raise ValueError(f"x0 must be a finite vector of length {model.n}")
    steps = int(round(duration / dt))
    ts = [0.0]
    xs = [x.copy()]
    us: list[np.ndarray] = []
    events: list[tuple[float, str]] = []
    seen: set[str] = set()
    diverged, t_div = False, None

    def note(t, state):
        if model.events is None:
            return
        ev = model.events(state)
        if ev and ev not in seen:
            seen.add(ev)
            events.append((t, ev))

    note(0.0, x)
    with np.errstate(all="ignore"):
        for s in range(steps):
            u = model.saturate(np.asarray(pi(x), dtype=float))
            us.append(u)
            try:
                k1 = model.f(x, u)
                k2 = model.f(x + 0.5 * dt * k1, u)
                k3 = model.f(x + 0.5 * dt * k2, u)
                k4 = model.f(x + dt * k3, u)
                x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            except DynamicsDomainError:
                x = np.full(model.n, np.nan)
            t = (s + 1) * dt
            ts.append(t)
            xs.append(x.copy())
            if not np.all(np.isfinite(x)) or goal_distance(model, x) > escape:
                diverged, t_div = True, t
                break
            note(t, x)
    us.append(model.saturate(np.asarray(pi(x), dtype=float)) if not diverged else np.full(model.m, np.nan))
    err = float("inf") if diverged else float(goal_distance(model, x))
    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        u=np.array(us),
        diverged=diverged,
        divergence_time=t_div,
        converged=(not diverged) and err < tolerance,
        final_error=err,
        events=events,
    )


@dataclass
class BasinResult:
    dims: tuple[int, int]
    axes: tuple[np.ndarray, np.ndarray]
    base: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray

    @property
    def fraction(self) -> float:
        return float(np.mean(self.converged))

    def rows(self) -> list[tuple[float, float, int]]:
        a, b = self.axes
        return [
            (float(a[i]), float(b[j]), int(self.converged[i, j])) for i in range(a.size) for j in range(b.size)
        ]


def basin_sweep(
    model: SystemModel,
    controller,
    dims: tuple[int, int],
    values: tuple[Sequence[float], Sequence[float]],
    duration: float,
    base: Sequence[float] | None = None,
    dt: float = 0.002,
    tolerance: float = 0.05,
) -> BasinResult:
    """Converged/diverged field over a 2D slice of initial states.

    States outside ``dims`` stay at ``base`` (the goal by default).
    """
    i, j = dims
    if i == j:
        raise ValueError("slice dimensions must differ")
    a, b = np.asarray(values[0], float), np.asarray(values[1], float)
    base_x = np.array(model.x_goal if base is None else base, dtype=float)
    A, B = np.meshgrid(a, b, indexing="ij")
    X0 = np.broadcast_to(base_x, A.shape + (model.n,)).copy()
    X0[..., i] = A
    X0[..., j] = B
    _, conv, div, _ = simulate_batch(model, controller, X0.reshape(-1, model.n), duration, dt, tolerance)
    return BasinResult((i, j), (a, b), base_x, conv.reshape(A.shape), div.reshape(A.shape))


# persistence -----------------------------------------------------------------


def save_policy(assembly: PolicyAssembly, path: str | Path, extra_header: dict | None = None) -> None:
    """Write a policy as magic, version, JSON header and little-endian float64 tables."""
    nodes = []
    for nid in assembly.order:
        pol = assembly.policies[nid]
        nodes.append({"node_id": nid, "states": list(pol.states), "inputs": list(pol.inputs), "shape": list(pol.table.shape)})
    header = {
        "model": assembly.model.name,
        "model_kwargs": assembly.model_kwargs,
        "tree": assembly.tree.to_string(),
        "grid": assembly.grid.to_dict(),
        "decoupled_mode": assembly.decoupled_mode,
        "nodes": nodes,
        "n_parameters": assembly.n_parameters,
        **(extra_header or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(POLICY_MAGIC)
        fh.write(struct.pack("<HI", POLICY_VERSION, len(blob)))
        fh.write(blob)
        for nid in assembly.order:
            fh.write(np.ascontiguousarray(assembly.policies[nid].table, dtype="<f8").tobytes())


def load_policy(path: str | Path, model: SystemModel | None = None) -> tuple[PolicyAssembly, dict]:
    """Read a policy file; the model is rebuilt from the header unless given."""
    data = Path(path).read_bytes()
    if data[: len(POLICY_MAGIC)] != POLICY_MAGIC:
        raise ValueError(f"{path} is not a policy file")
    off = len(POLICY_MAGIC)
    version, hlen = struct.unpack_from("<HI", data, off)
    if version != POLICY_VERSION:
        raise ValueError(f"unsupported policy file version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(data[off : off + hlen])
    off += hlen
    if model is None:
        model = get_model(header["model"], **header.get("model_kwargs", {}))
    grid = GridSpec.from_dict(header["grid"])
    tree = InputTree.parse(header["tree"], model.n, model.m)
    policies = {}
    order = []
    for nd in header["nodes"]:
        count = int(np.prod(nd["shape"]))
        table = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(nd["shape"]).astype(float)
        off += 8 * count
        us = tuple(nd["inputs"])
        policies[nd["node_id"]] = TabularPolicy(
            states=tuple(nd["states"]),
            inputs=us,
            axes=grid.axes(nd["states"]),
            table=table,
            lower=grid.input_lower[list(us)].copy(),
            upper=grid.input_upper[list(us)].copy(),
            node_id=nd["node_id"],
        )
        order.append(nd["node_id"])
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    asm = PolicyAssembly(
        model, tree, grid, policies, tuple(order),
        decoupled_mode=header.get("decoupled_mode", "trim"), model_kwargs=header.get("model_kwargs", {}),
    )
    return asm, header
