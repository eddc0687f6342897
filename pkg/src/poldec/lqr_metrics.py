"""Goal-point linearisation, discounted LQR and the fitness of a decomposition.

Discounting by ``exp(-lam t)`` is folded into the dynamics as the spectral
shift ``A -> A - (lam/2) I``; the Riccati and Lyapunov equations below are
written for the shifted matrix.

The value error of a decomposition is the box average of
``V_delta(x) - V_opt(x)`` for the linear model. Both value functions are
quadratic, so the average is ``trace((P_delta - P_opt) M)`` with ``M`` the
second moment of the uniform distribution over the box about the goal. The
difference ``D = P_delta - P_opt`` is solved for directly from

    A_cl^T D + D A_cl + (K - K*)^T R (K - K*) = 0,

which is algebraically the same as subtracting the two value matrices but
keeps ``D`` positive semidefinite and free of cancellation error.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .grid import GridSpec
from .input_tree import InputTree, subsystem_of, undecomposed
from .systems import SystemModel

__all__ = [
    "LinearModel",
    "GainAssembly",
    "DecompositionMetrics",
    "GoalNotEquilibriumError",
    "UnboundedValueError",
    "linearize",
    "solve_discounted_lqr",
    "riccati_residual",
    "lyapunov_residual",
    "closed_loop_value",
    "decomposed_gains",
    "box_second_moment",
    "value_error_estimate",
    "compute_cost_ratio",
    "flops",
    "FitnessEvaluator",
    "fitness",
]

logger = logging.getLogger(__name__)

TRIM_TOLERANCE = 1e-6
# err values this small relative to the optimal average value are round-off
ERR_FLOOR = 1e-18


class GoalNotEquilibriumError(ValueError):
    pass


class UnboundedValueError(ArithmeticError):
    """No stabilising solution exists: the discounted cost is unbounded."""


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    x_goal: np.ndarray
    u_goal: np.ndarray


def linearize(model: SystemModel) -> LinearModel:
    """Jacobians of the dynamics at the goal (analytic if the model has them)."""
    xg, ug = model.x_goal, model.u_goal
    residual = model.trim_residual()
    if residual > TRIM_TOLERANCE:
        raise GoalNotEquilibriumError(f"{model.name}: f(x_goal, u_goal) = {residual:.3g}, not an equilibrium")
    if model.jacobian is not None:
        A, B = model.jacobian(xg, ug)
        return LinearModel(np.array(A, float), np.array(B, float), xg.copy(), ug.copy())
    n, m = model.n, model.m
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        h = max(1e-6, 1e-6 * abs(xg[i]))
        e = np.zeros(n)
        e[i] = h
        A[:, i] = (model.f(xg + e, ug) - model.f(xg - e, ug)) / (2 * h)
    for j in range(m):
        h = max(1e-6, 1e-6 * abs(ug[j]))
        e = np.zeros(m)
        e[j] = h
        B[:, j] = (model.f(xg, ug + e) - model.f(xg, ug - e)) / (2 * h)
    return LinearModel(A, B, xg.copy(), ug.copy())


# Riccati / Lyapunov --------------------------------------------------------


def riccati_residual(A, B, Q, R, lam, P, S=None) -> float:
    """Frobenius norm of the discounted algebraic Riccati residual."""
    Al = A - 0.5 * lam * np.eye(A.shape[0])
    N = B.T @ P if S is None else B.T @ P + S.T
    res = Al.T @ P + P @ Al - N.T @ np.linalg.solve(R, N) + Q
    return float(np.linalg.norm(res, "fro"))


def lyapunov_residual(Acl, W, P) -> float:
    return float(np.linalg.norm(Acl.T @ P + P @ Acl + W, "fro"))


def _is_hurwitz(M: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(M).real < 0))


def _newton_kleinman(Al, B, Q, R, S, P, steps=3):
    """Polish a stabilising Riccati solution with a few Newton steps."""
    Rinv = np.linalg.inv(R)
    Sz = np.zeros((Al.shape[0], B.shape[1])) if S is None else S
    for _ in range(steps):
        K = Rinv @ (B.T @ P + Sz.T)
        Acl = Al - B @ K
        if not _is_hurwitz(Acl):
            break
        W = Q + K.T @ R @ K - Sz @ K - K.T @ Sz.T
        P_new = sla.solve_continuous_lyapunov(Acl.T, -W)
        P = 0.5 * (P_new + P_new.T)
    return P


def solve_discounted_lqr(A, B, Q, R, lam: float = 0.0, S=None) -> tuple[np.ndarray, np.ndarray]:
    """Value matrix ``P`` and gain ``K`` (``u = -K x``) of the discounted LQR.

    ``S`` is an optional state-input cross weight (cost ``x'Qx + u'Ru + 2x'Su``).
    Raises :class:`UnboundedValueError` if ``(A - lam/2 I, B)`` is not
    stabilisable.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    n = A.shape[0]
    Al = A - 0.5 * lam * np.eye(n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            P = sla.solve_continuous_are(Al, B, Q, R, s=S)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise UnboundedValueError(f"Riccati equation has no stabilising solution: {exc}") from None
    P = 0.5 * (P + P.T)
    tol = 1e-8 * (1 + np.linalg.norm(P))
    if not np.all(np.isfinite(P)):
        raise UnboundedValueError("Riccati solution is not finite")
    if riccati_residual(A, B, Q, R, lam, P, S) > tol:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            P = _newton_kleinman(Al, B, Q, R, S, P)
    N = B.T @ P if S is None else B.T @ P + S.T
    K = np.linalg.solve(R, N)
    if not _is_hurwitz(Al - B @ K):
        raise UnboundedValueError("no stabilising feedback for this pair")
    return P, K


def closed_loop_value(A, B, K, Q, R, lam: float = 0.0) -> np.ndarray:
    """Value matrix of the fixed feedback ``u = -K x`` under the discounted cost."""
    Acl = A - B @ K - 0.5 * lam * np.eye(A.shape[0])
    if not _is_hurwitz(Acl):
        raise UnboundedValueError("closed loop is not stable under the discount")
    W = Q + K.T @ R @ K
    P = sla.solve_continuous_lyapunov(Acl.T, -W)
    return 0.5 * (P + P.T)


# decomposition gains -------------------------------------------------------


@dataclass
class GainAssembly:
    K: np.ndarray
    node_gains: dict[int, np.ndarray] = field(default_factory=dict)
    stable: bool = True
    diagnostic: str = ""


def decomposed_gains(tree: InputTree, lin: LinearModel, Q, R, lam: float) -> GainAssembly:
    """Assemble the full gain from per-node LQR solves, children first.

    Each node sees the rows and columns of its sub-tree states, with the gains
    of the inputs below it substituted into the dynamics and their control
    cost added to the state cost. Decoupled inputs stay at zero deviation.
    """
    A, B = lin.A, lin.B
    Q = np.asarray(Q, float)
    R = np.asarray(R, float)
    n, m = B.shape
    K = np.zeros((m, n))
    out = GainAssembly(K)
    for nid in tree.solve_order():
        sub = subsystem_of(tree, nid)
        xs, us, cs = list(sub.states), list(sub.inputs), list(sub.cascaded)
        Ai = A[np.ix_(xs, xs)]
        Bi = B[np.ix_(xs, us)]
        Qi = Q[np.ix_(xs, xs)]
        Ri = R[np.ix_(us, us)]
        Si = None
        if cs:
            Kc = K[np.ix_(cs, xs)]
            Ai = Ai - B[np.ix_(xs, cs)] @ Kc
            Qi = Qi + Kc.T @ R[np.ix_(cs, cs)] @ Kc
            cross = -Kc.T @ R[np.ix_(cs, us)]
            if np.any(cross):
                Si = cross
        try:
            _, Ki = solve_discounted_lqr(Ai, Bi, Qi, Ri, lam, S=Si)
        except UnboundedValueError as exc:
            out.stable = False
            out.diagnostic = f"node {nid} ({tree.node(nid).inputs}): {exc}"
            return out
        out.node_gains[nid] = Ki
        K[np.ix_(us, xs)] = Ki
    return out


def box_second_moment(lower, upper, goal) -> np.ndarray:
    """``E[(x - goal)(x - goal)^T]`` for ``x`` uniform on the box."""
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    off = 0.5 * (lower + upper) - np.asarray(goal, float)
    return np.outer(off, off) + np.diag((upper - lower) ** 2 / 12.0)


def value_error_estimate(tree: InputTree, lin: LinearModel, Q, R, lam: float, lower, upper) -> float:
    """Box-averaged value gap between the decomposition and the joint LQR."""
    return _ErrorModel(lin, np.asarray(Q, float), np.asarray(R, float), lam, lower, upper).err(tree)


class _ErrorModel:
    def __init__(self, lin: LinearModel, Q, R, lam, lower, upper):
        self.lin, self.Q, self.R, self.lam = lin, Q, R, float(lam)
        self.M = box_second_moment(lower, upper, lin.x_goal)
        try:
            self.P_opt, self.K_opt = solve_discounted_lqr(lin.A, lin.B, Q, R, lam)
        except UnboundedValueError as exc:
            raise UnboundedValueError(f"the joint problem itself has no finite LQR value: {exc}") from None
        self.scale = max(float(np.trace(self.P_opt @ self.M)), np.finfo(float).tiny)
        self.last_diagnostic = ""

    def err(self, tree: InputTree) -> float:
        gains = decomposed_gains(tree, self.lin, self.Q, self.R, self.lam)
        if not gains.stable:
            self.last_diagnostic = gains.diagnostic
            return float("inf")
        n = self.lin.A.shape[0]
        Acl = self.lin.A - self.lin.B @ gains.K - 0.5 * self.lam * np.eye(n)
        if not _is_hurwitz(Acl):
            self.last_diagnostic = "assembled closed loop is unstable"
            return float("inf")
        dK = gains.K - self.K_opt
        W = dK.T @ self.R @ dK
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                D = sla.solve_continuous_lyapunov(Acl.T, -W)
        except (np.linalg.LinAlgError, ValueError) as exc:
            self.last_diagnostic = f"Lyapunov solve failed: {exc}"
            return float("inf")
        if not np.all(np.isfinite(D)):
            self.last_diagnostic = "Lyapunov solution is not finite"
            return float("inf")
        err = float(np.trace(0.5 * (D + D.T) @ self.M))
        self.last_diagnostic = ""
        if err < ERR_FLOOR * self.scale:
            return 0.0
        return err


# compute cost --------------------------------------------------------------


def flops(states, inputs, grid: GridSpec) -> float:
    """Policy-iteration flop estimate for one lookup table over ``states`` x ``inputs``."""
    cells = float(grid.cells(states))
    per_cell = grid.flop_eval * grid.max_evaluation_sweeps + grid.flop_update * float(grid.actions(inputs))
    return grid.max_policy_iterations * cells * per_cell * 2.0 ** len(states)


def compute_cost_ratio(tree: InputTree, grid: GridSpec) -> float:
    if grid.n != tree.n_states or grid.m != tree.m_inputs:
        raise ValueError(
            f"grid covers {grid.n} states/{grid.m} inputs, tree has {tree.n_states}/{tree.m_inputs}"
        )
    total = sum(
        flops(subsystem_of(tree, nd.node_id).states, nd.inputs, grid) for nd in tree.nodes
    )
    return total / flops(range(tree.n_states), range(tree.m_inputs), grid)


# fitness -------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionMetrics:
    err_lqr: float
    F_err: float
    F_comp: float
    F: float

    @classmethod
    def from_parts(cls, err: float, F_comp: float) -> "DecompositionMetrics":
        F_err = 1.0 if not np.isfinite(err) else float(-np.expm1(-err))
        return cls(float(err), F_err, float(F_comp), F_err * float(F_comp))

    @property
    def rank(self) -> tuple[float, float, float]:
        """Sort key: fitness first, then compute cost, then suboptimality."""
        return (self.F, self.F_comp, self.F_err)

    def to_dict(self) -> dict:
        return {
            "err_lqr": self.err_lqr if np.isfinite(self.err_lqr) else "inf",
            "F_err": self.F_err,
            "F_comp": self.F_comp,
            "F": self.F,
        }


class FitnessEvaluator:
    """Callable ``tree -> DecompositionMetrics`` with the linearisation cached."""

    def __init__(self, model: SystemModel, grid: GridSpec | None = None):
        self.model = model
        self.grid = grid if grid is not None else model.grid
        self.lin = linearize(model)
        self._errors = _ErrorModel(self.lin, model.Q, model.R, model.discount, model.x_lower, model.x_upper)

    @property
    def P_opt(self) -> np.ndarray:
        return self._errors.P_opt

    @property
    def K_opt(self) -> np.ndarray:
        return self._errors.K_opt

    @property
    def second_moment(self) -> np.ndarray:
        return self._errors.M

    def err(self, tree: InputTree) -> float:
        return self._errors.err(tree)

    def __call__(self, tree: InputTree) -> DecompositionMetrics:
        err = self._errors.err(tree)
        if not np.isfinite(err):
            logger.debug("%s: %s", tree, self._errors.last_diagnostic)
        return DecompositionMetrics.from_parts(err, compute_cost_ratio(tree, self.grid))

    def undecomposed(self) -> InputTree:
        return undecomposed(self.model.n, self.model.m)


def fitness(tree: InputTree, model: SystemModel, grid: GridSpec | None = None) -> DecompositionMetrics:
    return FitnessEvaluator(model, grid)(tree)
