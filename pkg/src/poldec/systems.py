"""Benchmark systems and synthetic oracle systems.

Every dynamics function is vectorised over leading axes: ``f(x, u)`` takes
``x`` of shape ``(..., n)`` and ``u`` of shape ``(..., m)``. Units are SI and
angles are in radians. Cost weights, boxes and action lattices shipped here
are defaults chosen for this package, not values from any published run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import GridSpec
from .input_tree import InputTree

__all__ = [
    "SystemModel",
    "DynamicsDomainError",
    "biped_model",
    "manipulator_model",
    "quadcopter_model",
    "pendulum_model",
    "scalar_integrator_model",
    "linear_model",
    "random_linear_model",
    "synthetic_separable",
    "get_model",
    "MODEL_NAMES",
    "GRAVITY",
]

GRAVITY = 9.81
TRIM_TOLERANCE = 1e-6


class DynamicsDomainError(ValueError):
    """The state lies outside the region where the dynamics are defined."""


@dataclass(frozen=True, eq=False)
class SystemModel:
    name: str
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x_goal: np.ndarray
    u_goal: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    discount: float
    u_lower: np.ndarray
    u_upper: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    grid: GridSpec
    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    jacobian: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    events: Callable[[np.ndarray], str | None] | None = None
    params: dict = field(default_factory=dict)
    reference_tree: InputTree | None = None

    @property
    def n(self) -> int:
        return self.x_goal.size

    @property
    def m(self) -> int:
        return self.u_goal.size

    def f(self, x, u) -> np.ndarray:
        return self.dynamics(np.asarray(x, dtype=float), np.asarray(u, dtype=float))

    def trim_residual(self) -> float:
        return float(np.max(np.abs(self.f(self.x_goal, self.u_goal))))

    def saturate(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.u_lower, self.u_upper)

    def cost(self, x, u) -> np.ndarray:
        dx = np.asarray(x) - self.x_goal
        du = np.asarray(u) - self.u_goal
        return np.einsum("...i,ij,...j->...", dx, self.Q, dx) + np.einsum("...i,ij,...j->...", du, self.R, du)

    def with_(self, **changes) -> "SystemModel":
        return replace(self, **changes)


def _default_grid(x_lower, x_upper, points, u_lower, u_upper, samples, discount, **kw) -> GridSpec:
    return GridSpec(
        state_lower=x_lower,
        state_upper=x_upper,
        state_points=points,
        input_lower=u_lower,
        input_upper=u_upper,
        input_samples=samples,
        discount=discount,
        **kw,
    )


def _finish(name, f, xg, ug, Q, R, lam, ul, uu, xl, xu, points, samples, snames, unames, **extra) -> SystemModel:
    xg, ug = np.asarray(xg, float), np.asarray(ug, float)
    xl, xu = np.asarray(xl, float), np.asarray(xu, float)
    ul, uu = np.asarray(ul, float), np.asarray(uu, float)
    grid_kw = extra.pop("grid_kw", {})
    grid = _default_grid(xl, xu, points, ul, uu, samples, lam, **grid_kw)
    model = SystemModel(
        name=name,
        dynamics=f,
        x_goal=xg,
        u_goal=ug,
        Q=np.asarray(Q, float),
        R=np.asarray(R, float),
        discount=float(lam),
        u_lower=ul,
        u_upper=uu,
        x_lower=xl,
        x_upper=xu,
        grid=grid,
        state_names=tuple(snames),
        input_names=tuple(unames),
        **extra,
    )
    check_model(model)
    return model


def check_model(model: SystemModel) -> None:
    res = model.trim_residual()
    if res > TRIM_TOLERANCE:
        raise ValueError(f"{model.name}: goal is not an equilibrium (trim residual {res:.3g})")
    if np.any(model.u_goal < model.u_lower) or np.any(model.u_goal > model.u_upper):
        raise ValueError(f"{model.name}: trim input outside input limits")
    if np.any(model.x_goal < model.x_lower) or np.any(model.x_goal > model.x_upper):
        raise ValueError(f"{model.name}: goal outside state box")
    if np.min(np.linalg.eigvalsh(0.5 * (model.Q + model.Q.T))) < -1e-12:
        raise ValueError(f"{model.name}: Q is not positive semidefinite")
    if np.min(np.linalg.eigvalsh(0.5 * (model.R + model.R.T))) <= 0:
        raise ValueError(f"{model.name}: R is not positive definite")


# biped -----------------------------------------------------------------------


def biped_model(
    mass=72.0,
    inertia=3.0,
    hip_offset=0.2,
    foot_distance=0.5,
    leg_rest_length=1.15,
    com_height=1.05,
    Q=None,
    R=None,
    discount=3.0,
    contact_mode="fail",
) -> SystemModel:
    """Planar biped in double stance with massless telescoping legs.

    States ``(l_r, alpha_r, xdot, zdot, theta, thetadot)``: right leg length and
    angle (COM position in polar coordinates about the right foot, which sits
    at the origin; the left foot is at ``-foot_distance``), COM velocity, and
    torso pitch. Inputs ``(F_l, F_r, tau_l, tau_r)``.
    """
    m, I, d, df, l0, g = mass, inertia, hip_offset, foot_distance, leg_rest_length, GRAVITY

    def left_leg(lr, ar):
        ll = np.sqrt(lr**2 + df**2 + 2 * lr * df * np.cos(ar))
        s = lr * np.sin(ar) / ll
        if np.any(np.abs(s) > 1.0):
            raise DynamicsDomainError("left-leg angle undefined for this configuration")
        return ll, np.arcsin(s)

    def f(x, u):
        lr, ar, vx, vz, th, dth = np.moveaxis(x, -1, 0)
        Fl, Fr, tl, tr = np.moveaxis(u, -1, 0)
        if np.any(lr <= 0):
            raise DynamicsDomainError("right leg length must be positive")
        ll, al = left_leg(lr, ar)
        ax = (Fr * np.cos(ar) + tr / lr * np.sin(ar) + Fl * np.cos(al) + tl / ll * np.sin(al)) / m
        az = (Fr * np.sin(ar) - tr / lr * np.cos(ar) + Fl * np.sin(al) - tl / ll * np.cos(al)) / m - g
        ath = (
            tr * (1 + d / lr * np.sin(ar - th))
            + Fr * d * np.cos(ar - th)
            + tl * (1 + d / ll * np.sin(al - th))
            + Fl * d * np.cos(al - th)
        ) / I
        dlr = vx * np.cos(ar) + vz * np.sin(ar)
        dar = (vz * np.cos(ar) - vx * np.sin(ar)) / lr
        return np.stack([dlr, dar, ax, az, dth, ath], axis=-1)

    x_com, z_com = -df / 2, com_height
    lr_d = float(np.hypot(x_com, z_com))
    ar_d = float(np.arctan2(z_com, x_com))
    F_d = m * g / (2 * np.sin(ar_d))
    xg = [lr_d, ar_d, 0.0, 0.0, 0.0, 0.0]
    ug = [F_d, F_d, 0.0, 0.0]
    tau_max = 0.25 * m * g / l0

    def events(x):
        lr, ar = x[0], x[1]
        ll = np.sqrt(lr**2 + df**2 + 2 * lr * df * np.cos(ar))
        if lr > l0 or ll > l0:
            return "contact_break"
        return None

    def leg_lengths(x):
        x = np.asarray(x, float)
        lr, ar = x[..., 0], x[..., 1]
        return lr, np.sqrt(lr**2 + df**2 + 2 * lr * df * np.cos(ar))

    def f_contact(x, u):
        # a leg longer than l0 exerts nothing
        lr, ll = leg_lengths(x)
        u = np.array(u, dtype=float, copy=True)
        u[..., [1, 3]] *= (lr <= l0)[..., None]
        u[..., [0, 2]] *= (ll <= l0)[..., None]
        return f(x, u)

    Q = np.diag([350.0, 700.0, 1.5, 1.5, 500.0, 5.0]) if Q is None else Q
    R = np.diag([1e-6, 1e-6, 1e-3, 1e-3]) if R is None else R
    return _finish(
        "biped",
        f_contact if contact_mode == "release" else f,
        xg,
        ug,
        Q,
        R,
        discount,
        [0.0, 0.0, -tau_max, -tau_max],
        [3 * m * g, 3 * m * g, tau_max, tau_max],
        [lr_d - 0.13, ar_d - 0.3, -0.3, -0.5, -np.pi / 8, -2.0],
        [l0, ar_d + 0.3, 0.3, 0.5, np.pi / 8, 2.0],
        [13, 13, 14, 19, 14, 21],
        [7, 7, 7, 7],
        ("l_r", "alpha_r", "xdot", "zdot", "theta", "thetadot"),
        ("F_l", "F_r", "tau_l", "tau_r"),
        events=events if contact_mode == "fail" else None,
        params=dict(
            mass=m, inertia=I, hip_offset=d, foot_distance=df, leg_rest_length=l0, com_height=com_height,
            contact_mode=contact_mode,
        ),
        grid_kw=dict(h=0.01),
    )


# manipulator -----------------------------------------------------------------


def _chain_terms(theta, dtheta, masses, lengths, g):
    """Absolute-angle mass matrix, velocity terms and gravity gradient of a point-mass chain."""
    n = len(masses)
    phi = np.cumsum(theta, axis=-1)
    dphi = np.cumsum(dtheta, axis=-1)
    tail = np.cumsum(np.asarray(masses)[::-1])[::-1]  # sum of masses from link k outward
    mu = tail[np.maximum.outer(np.arange(n), np.arange(n))]
    ll = np.outer(lengths, lengths)
    diff = phi[..., :, None] - phi[..., None, :]
    M = mu * ll * np.cos(diff)
    vel = np.einsum("...kl,...l->...k", mu * ll * np.sin(diff), dphi**2)
    dV = -g * np.asarray(lengths) * tail * np.sin(phi)
    return M, vel, dV


def manipulator_model(
    masses=(5.4, 1.8, 0.6, 0.2),
    lengths=(0.2, 0.5, 0.25, 0.125),
    torque_limits=(24.0, 15.0, 7.5, 1.0),
    Q=None,
    R=None,
    discount=3.0,
) -> SystemModel:
    """Fully actuated serial chain with point masses at the distal link ends.

    States ``(theta_1..theta_k, thetadot_1..thetadot_k)`` are relative joint
    angles, ``theta_1`` measured from the upward vertical; the goal is upright.
    """
    masses = np.asarray(masses, float)
    lengths = np.asarray(lengths, float)
    k = masses.size
    g = GRAVITY

    def f(x, u):
        th, dth = x[..., :k], x[..., k:]
        M, vel, dV = _chain_terms(th, dth, masses, lengths, g)
        # joint torques map to absolute-angle forces as tau_k - tau_{k+1}
        gen = u - np.concatenate([u[..., 1:], np.zeros_like(u[..., :1])], axis=-1)
        ddphi = np.linalg.solve(M, (gen - vel - dV)[..., None])[..., 0]
        ddth = ddphi - np.concatenate([np.zeros_like(ddphi[..., :1]), ddphi[..., :-1]], axis=-1)
        return np.concatenate([dth, ddth], axis=-1)

    limits = np.asarray(torque_limits, float)
    Q = np.diag([1.0] * k + [0.1] * k) if Q is None else Q
    R = np.diag(0.5 / limits**2) if R is None else R
    snames = tuple(f"theta{i + 1}" for i in range(k)) + tuple(f"thetadot{i + 1}" for i in range(k))
    return _finish(
        "manip4" if k == 4 else f"manip{k}",
        f,
        np.zeros(2 * k),
        np.zeros(k),
        Q,
        R,
        discount,
        -limits,
        limits,
        [-np.pi] * k + [-3 * np.pi] * k,
        [np.pi] * k + [3 * np.pi] * k,
        [17] * k + [13] * k,
        [9] * k,
        snames,
        tuple(f"tau{i + 1}" for i in range(k)),
        params=dict(masses=masses.tolist(), lengths=lengths.tolist(), torque_limits=limits.tolist()),
        grid_kw=dict(h=0.005),
    )


def manipulator_energy(model: SystemModel, x: np.ndarray) -> np.ndarray:
    """Kinetic plus potential energy of the chain (zero potential at the base)."""
    masses = np.asarray(model.params["masses"])
    lengths = np.asarray(model.params["lengths"])
    k = masses.size
    x = np.asarray(x, float)
    th, dth = x[..., :k], x[..., k:]
    M, _, _ = _chain_terms(th, dth, masses, lengths, GRAVITY)
    dphi = np.cumsum(dth, axis=-1)
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", dphi, M, dphi)
    heights = np.cumsum(lengths * np.cos(np.cumsum(th, axis=-1)), axis=-1)
    return kinetic + GRAVITY * np.sum(masses * heights, axis=-1)


def manipulator_mass_matrix(model: SystemModel, theta: np.ndarray) -> np.ndarray:
    """Mass matrix in joint coordinates, ``L^T M_abs L``."""
    masses = np.asarray(model.params["masses"])
    lengths = np.asarray(model.params["lengths"])
    k = masses.size
    theta = np.asarray(theta, float)
    M, _, _ = _chain_terms(theta, np.zeros_like(theta), masses, lengths, GRAVITY)
    L = np.tril(np.ones((k, k)))
    return L.T @ M @ L


# quadcopter --------------------------------------------------------------------


def quadcopter_model(
    mass=0.5,
    inertia=(4.86e-3, 4.86e-3, 8.8e-3),
    arm_length=0.225,
    moment_coefficient=0.0383,
    hover_height=1.0,
    Q=None,
    R=None,
    discount=3.0,
) -> SystemModel:
    """Quadcopter with Z-Y-X Euler angles, free in the horizontal position.

    States ``(z, phi, theta, psi, xdot, ydot, zdot, phidot, thetadot, psidot)``;
    inputs are net thrust and the roll, pitch and yaw differential thrusts
    ``(T, F_phi, F_theta, F_psi)``.
    """
    m, g, l, kM = mass, GRAVITY, arm_length, moment_coefficient
    Ivec = np.asarray(inertia, float)

    def f(x, u):
        z, ph, th, ps, vx, vy, vz, dph, dth, dps = np.moveaxis(x, -1, 0)
        T, Fph, Fth, Fps = np.moveaxis(u, -1, 0)
        cph, sph, cth, sth, cps, sps = np.cos(ph), np.sin(ph), np.cos(th), np.sin(th), np.cos(ps), np.sin(ps)
        ax = T / m * (cps * sth * cph + sps * sph)
        ay = T / m * (sps * sth * cph - cps * sph)
        az = T / m * cth * cph - g

        zero, one = np.zeros_like(ph), np.ones_like(ph)
        W = np.stack(
            [
                np.stack([one, zero, -sth], -1),
                np.stack([zero, cph, sph * cth], -1),
                np.stack([zero, -sph, cph * cth], -1),
            ],
            -2,
        )
        Wdot = np.stack(
            [
                np.stack([zero, zero, -cth * dth], -1),
                np.stack([zero, -sph * dph, cph * cth * dph - sph * sth * dth], -1),
                np.stack([zero, -cph * dph, -sph * cth * dph - cph * sth * dth], -1),
            ],
            -2,
        )
        deta = np.stack([dph, dth, dps], -1)
        nu = np.einsum("...ij,...j->...i", W, deta)
        tau = np.stack([l * Fph, l * Fth, kM * Fps], -1)
        dnu = (tau - np.cross(nu, Ivec * nu)) / Ivec
        rhs = dnu - np.einsum("...ij,...j->...i", Wdot, deta)
        ddeta = np.linalg.solve(W, rhs[..., None])[..., 0]
        return np.concatenate(
            [vz[..., None], deta, np.stack([ax, ay, az], -1), ddeta],
            axis=-1,
        )

    def events(x):
        if abs(x[2]) > np.pi / 2 - 1e-2:
            return "euler_singularity"
        return None

    Q = np.diag([5.0, 2.0, 2.0, 2.0, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1]) if Q is None else Q
    R = np.diag([0.1, 1.0, 1.0, 1.0]) if R is None else R
    mg = m * g
    return _finish(
        "quadcopter",
        f,
        [hover_height] + [0.0] * 9,
        [mg, 0.0, 0.0, 0.0],
        Q,
        R,
        discount,
        [0.0, -0.25 * mg, -0.25 * mg, -0.125 * mg],
        [2 * mg, 0.25 * mg, 0.25 * mg, 0.125 * mg],
        [hover_height - 0.5, -0.6, -0.6, -np.pi, -1.0, -1.0, -1.0, -3.0, -3.0, -3.0],
        [hover_height + 0.5, 0.6, 0.6, np.pi, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0],
        [7, 7, 7, 35, 7, 7, 7, 11, 11, 35],
        [7, 5, 5, 5],
        ("z", "phi", "theta", "psi", "xdot", "ydot", "zdot", "phidot", "thetadot", "psidot"),
        ("T", "F_phi", "F_theta", "F_psi"),
        events=events,
        params=dict(mass=m, inertia=Ivec.tolist(), arm_length=l, moment_coefficient=kM, hover_height=hover_height),
        grid_kw=dict(h=0.005),
    )


# T = sum F_i, F_phi = F4 - F2, F_theta = F3 - F1, F_psi = F2 + F4 - F1 - F3
_ROTOR_TO_INPUT = np.array(
    [
        [1.0, 1.0, 1.0, 1.0],
        [0.0, -1.0, 0.0, 1.0],
        [-1.0, 0.0, 1.0, 0.0],
        [-1.0, 1.0, -1.0, 1.0],
    ]
)
INPUT_TO_ROTOR = np.linalg.inv(_ROTOR_TO_INPUT)


def rotor_forces(u: np.ndarray) -> np.ndarray:
    """Rotor forces ``F_1..F_4`` from ``(T, F_phi, F_theta, F_psi)``."""
    return np.einsum("ij,...j->...i", INPUT_TO_ROTOR, np.asarray(u, float))


# small systems ---------------------------------------------------------------


def pendulum_model(mass=1.0, length=1.0, damping=0.0, torque_limit=None, Q=None, R=None, discount=1.0):
    """Single pendulum balanced upright (``theta = 0``)."""
    g = GRAVITY
    I = mass * length**2
    tmax = 2.0 * mass * g * length if torque_limit is None else torque_limit

    def f(x, u):
        th, dth = x[..., 0], x[..., 1]
        return np.stack([dth, (mass * g * length * np.sin(th) - damping * dth + u[..., 0]) / I], -1)

    def jac(x, u):
        th = float(x[0])
        A = np.array([[0.0, 1.0], [mass * g * length * np.cos(th) / I, -damping / I]])
        return A, np.array([[0.0], [1.0 / I]])

    return _finish(
        "pendulum",
        f,
        [0.0, 0.0],
        [0.0],
        np.diag([1.0, 0.1]) if Q is None else Q,
        np.diag([0.01]) if R is None else R,
        discount,
        [-tmax],
        [tmax],
        [-np.pi, -8.0],
        [np.pi, 8.0],
        [51, 51],
        [21],
        ("theta", "thetadot"),
        ("tau",),
        jacobian=jac,
        params=dict(mass=mass, length=length, damping=damping, torque_limit=tmax),
        grid_kw=dict(h=0.02),
    )


def linear_model(A, B, Q=None, R=None, discount=0.0, box=1.0, u_limit=None, points=21, samples=11, name="linear"):
    """Linear system ``xdot = A x + B u`` with goal at the origin."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    n, m = B.shape

    def f(x, u):
        return np.einsum("ij,...j->...i", A, x) + np.einsum("ij,...j->...i", B, u)

    def jac(x, u):
        return A.copy(), B.copy()

    box = np.broadcast_to(np.asarray(box, float), (n,))
    ulim = np.full(m, 1e3 if u_limit is None else u_limit, dtype=float)
    return _finish(
        name,
        f,
        np.zeros(n),
        np.zeros(m),
        np.eye(n) if Q is None else Q,
        np.eye(m) if R is None else R,
        discount,
        -ulim,
        ulim,
        -box,
        box,
        np.full(n, points),
        np.full(m, samples),
        tuple(f"x{i + 1}" for i in range(n)),
        tuple(f"u{j + 1}" for j in range(m)),
        jacobian=jac,
        params=dict(A=A.tolist(), B=B.tolist()),
        grid_kw=dict(h=0.05),
    )


def scalar_integrator_model(discount=0.1, box=1.0, u_limit=1.0, points=101, samples=51, h=0.01):
    """``xdot = u`` with cost ``x^2 + u^2``."""
    model = linear_model([[0.0]], [[1.0]], discount=discount, box=box, u_limit=u_limit,
                         points=points, samples=samples, name="scalar")
    return model.with_(grid=model.grid.with_(h=h))


def random_linear_model(n: int, m: int, seed: int = 0, discount: float = 1.0, **kw) -> SystemModel:
    """Dense random linear system, a generic search-test case.

    Extra keywords (``points``, ``samples``, ``box``, ...) go to :func:`linear_model`.
    """
    rng = np.random.default_rng(seed)
    A = rng.normal(scale=1.0 / np.sqrt(n), size=(n, n)) - 0.5 * np.eye(n)
    B = rng.normal(size=(n, m))
    return linear_model(A, B, discount=discount, name=f"toy-{n}x{m}-{seed}", **kw)


# separable composites --------------------------------------------------------


def _block(kind: str):
    """Return ``(n, m, f, Q, R, lower, upper, names)`` for a named block."""
    g = GRAVITY
    if kind == "di":
        f = lambda x, u: np.stack([x[..., 1], u[..., 0]], -1)  # noqa: E731
        return 2, 1, f, np.eye(2), np.eye(1), [-1.0, -1.0], [1.0, 1.0], ("p", "v"), ([-3.0], [3.0])
    if kind == "pend":
        f = lambda x, u: np.stack([x[..., 1], g * np.sin(x[..., 0]) + u[..., 0]], -1)  # noqa: E731
        return 2, 1, f, np.diag([1.0, 0.1]), np.diag([0.01]), [-1.0, -3.0], [1.0, 3.0], ("th", "om"), (
            [-20.0],
            [20.0],
        )
    if kind == "int":
        f = lambda x, u: u[..., :1] + 0.0 * x[..., :1]  # noqa: E731
        return 1, 1, f, np.eye(1), np.eye(1), [-1.0], [1.0], ("s",), ([-2.0], [2.0])
    raise ValueError(f"unknown block kind {kind!r} (use di, pend or int)")


def synthetic_separable(blocks, coupling: float = 0.0, discount: float = 1.0, points: int = 21, samples: int = 11):
    """Block-diagonal composition of independent subsystems.

    ``blocks`` is a list of block kinds (``"di"``, ``"pend"``, ``"int"``). With
    ``coupling > 0`` the last state derivative of each block picks up
    ``coupling`` times the first state of the next block (cyclically), which
    makes the block decomposition inexact. ``reference_tree`` holds the
    block-matching decoupled tree.
    """
    parts = [_block(k) for k in blocks]
    ns = [p[0] for p in parts]
    ms = [p[1] for p in parts]
    xoff = np.concatenate([[0], np.cumsum(ns)]).astype(int)
    uoff = np.concatenate([[0], np.cumsum(ms)]).astype(int)
    n, m = int(xoff[-1]), int(uoff[-1])

    def f(x, u):
        outs = []
        for b, p in enumerate(parts):
            xb = x[..., xoff[b] : xoff[b + 1]]
            ub = u[..., uoff[b] : uoff[b + 1]]
            outs.append(p[2](xb, ub))
        out = np.concatenate(outs, axis=-1)
        if coupling and len(parts) > 1:
            out = out.copy()
            for b in range(len(parts)):
                nxt = (b + 1) % len(parts)
                out[..., xoff[b + 1] - 1] += coupling * x[..., xoff[nxt]]
        return out

    def block_diag(mats):
        size = sum(a.shape[0] for a in mats)
        out = np.zeros((size, size))
        i = 0
        for a in mats:
            out[i : i + a.shape[0], i : i + a.shape[0]] = a
            i += a.shape[0]
        return out

    jac = None
    if all(k in ("di", "int") for k in blocks):
        # linear blocks: the Jacobian is constant
        def jac(x, u):
            A = np.zeros((n, n))
            B = np.zeros((n, m))
            for b, k in enumerate(blocks):
                if k == "di":
                    A[xoff[b], xoff[b] + 1] = 1.0
                    B[xoff[b] + 1, uoff[b]] = 1.0
                else:
                    B[xoff[b], uoff[b]] = 1.0
            if coupling and len(parts) > 1:
                for b in range(len(parts)):
                    A[xoff[b + 1] - 1, xoff[(b + 1) % len(parts)]] += coupling
            return A, B

    ref = InputTree.from_groups(
        [(range(uoff[b], uoff[b + 1]), range(xoff[b], xoff[b + 1]), None) for b in range(len(parts))], n, m
    )
    snames = tuple(f"{nm}{b + 1}" for b, p in enumerate(parts) for nm in p[7])
    unames = tuple(f"u{b + 1}" if p[1] == 1 else f"u{b + 1}_{j}" for b, p in enumerate(parts) for j in range(p[1]))
    return _finish(
        "sep-" + "+".join(blocks) + (f"~{coupling:g}" if coupling else ""),
        f,
        np.zeros(n),
        np.zeros(m),
        block_diag([p[3] for p in parts]),
        block_diag([p[4] for p in parts]),
        discount,
        np.concatenate([p[8][0] for p in parts]),
        np.concatenate([p[8][1] for p in parts]),
        np.concatenate([p[5] for p in parts]),
        np.concatenate([p[6] for p in parts]),
        np.full(n, points),
        np.full(m, samples),
        snames,
        unames,
        jacobian=jac,
        params=dict(blocks=list(blocks), coupling=coupling),
        reference_tree=ref,
        grid_kw=dict(h=0.05),
    )


# registry --------------------------------------------------------------------

MODEL_NAMES = ("biped", "manip4", "quadcopter", "pendulum", "scalar", "sep-<blocks>", "toy-<n>x<m>[-<seed>]")

_FACTORIES = {
    "biped": biped_model,
    "manip4": manipulator_model,
    "quadcopter": quadcopter_model,
    "pendulum": pendulum_model,
    "scalar": scalar_integrator_model,
}


def _parse_blocks(spec: str) -> tuple[list[str], float]:
    """``2di``, ``3pend``, ``di+pend``, ``2di~0.1`` -> block list and coupling."""
    coupling = 0.0
    if "~" in spec:
        spec, eps = spec.split("~", 1)
        coupling = float(eps)
    blocks: list[str] = []
    for part in spec.split("+"):
        mt = re.fullmatch(r"(\d*)([a-z]+)", part)
        if not mt:
            raise ValueError(f"bad block spec {part!r}")
        blocks += [mt.group(2)] * int(mt.group(1) or 1)
    return blocks, coupling


def get_model(name: str, **params) -> SystemModel:
    """Look a model up by registry name; keyword ``params`` go to its factory."""
    if name in _FACTORIES:
        return _FACTORIES[name](**params)
    if name.startswith("sep-"):
        blocks, coupling = _parse_blocks(name[4:])
        params.setdefault("coupling", coupling)
        model = synthetic_separable(blocks, **params)
        return model.with_(name=name)
    mt = re.fullmatch(r"toy-(\d+)x(\d+)(?:-(\d+))?", name)
    if mt:
        return random_linear_model(int(mt.group(1)), int(mt.group(2)), int(mt.group(3) or 0), **params)
    raise KeyError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
