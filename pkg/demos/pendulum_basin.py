"""Basins of attraction for a torque-limited pendulum.

The pendulum is balanced upright (``theta = 0``). Once the torque limit
falls below the gravity torque ``m g l``, a saturated controller can only
catch the pendulum from states where its momentum already carries it close
to upright. Sweeping the (theta, thetadot) plane shows the basin shrinking
as the limit drops. ``#`` marks initial states that converge.

A lookup-table policy from grid dynamic programming is swept too. It
accounts for the torque limit, so within a fixed time horizon it catches some
states the saturated LQR controller misses. The state box does not wrap the
angle, so swinging through the hanging position is outside what the table
can represent, and the two basins stay close.

Run with ``python3 demos/pendulum_basin.py``.
"""

import numpy as np

from poldec.dp_solver import basin_sweep, solve_decomposition
from poldec.input_tree import undecomposed
from poldec.lqr_metrics import linearize, solve_discounted_lqr
from poldec.systems import GRAVITY, pendulum_model


def lqr_gain(model):
    lin = linearize(model)
    _, K = solve_discounted_lqr(lin.A, lin.B, model.Q, model.R, model.discount)
    return K


def draw(res):
    a, b = res.axes
    rows = []
    for j in reversed(range(b.size)):
        cells = "".join("#" if c else "." for c in res.converged[:, j])
        rows.append(f"{b[j]:+6.2f} |{cells}|")
    rows.append(f"{'':6}  theta from {a[0]:+.2f} to {a[-1]:+.2f}")
    return "\n".join(rows)


def main():
    axes = (np.linspace(-np.pi, np.pi, 41), np.linspace(-8.0, 8.0, 21))
    print(f"gravity torque m g l = {GRAVITY:.2f} N m\n")

    print("saturated LQR, converged fraction of the slice:")
    for limit in [8.0, 4.0, 2.0, 1.0]:
        model = pendulum_model(torque_limit=limit)
        res = basin_sweep(model, lqr_gain(model), (0, 1), axes, duration=10.0)
        print(f"   limit {limit:4.1f} N m: {res.fraction:6.1%}")

    model = pendulum_model(torque_limit=2.0)
    res = basin_sweep(model, lqr_gain(model), (0, 1), axes, duration=10.0)
    print("\nsaturated LQR at 2 N m:")
    print(draw(res))

    asm = solve_decomposition(model, undecomposed(model.n, model.m))
    dp = basin_sweep(model, asm, (0, 1), axes, duration=10.0)
    gained = int(np.sum(dp.converged & ~res.converged))
    lost = int(np.sum(res.converged & ~dp.converged))
    print(f"\nDP table at 2 N m ({asm.n_parameters} parameters, solved in {asm.total_seconds:.1f} s): "
          f"{dp.fraction:.1%} converge")
    print(f"   cells caught only by DP: {gained}, only by LQR: {lost}")
    print(draw(dp))


if __name__ == "__main__":
    main()
