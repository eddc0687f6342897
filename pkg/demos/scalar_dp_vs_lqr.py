"""Grid dynamic programming against the analytic LQR solution.

For the scalar integrator ``xdot = u`` with cost ``x^2 + u^2`` and discount
``lambda``, the optimal value is ``V(x) = p x^2`` with
``p = (-lambda + sqrt(lambda^2 + 4)) / 2``. Policy iteration on a lookup
table should reproduce it, with errors that shrink as the state grid and
the action lattice are refined. Near the goal the relative error stays
large, because the value itself goes to zero there.

Run with ``python3 demos/scalar_dp_vs_lqr.py``.
"""

import numpy as np

from poldec.dp_solver import simulate, solve_decomposition
from poldec.input_tree import undecomposed
from poldec.systems import scalar_integrator_model


def solve(points, samples):
    model = scalar_integrator_model(points=points, samples=samples)
    asm = solve_decomposition(model, undecomposed(1, 1))
    return model, asm


def main():
    lam = 0.1
    p = (-lam + np.sqrt(lam**2 + 4)) / 2
    print(f"analytic value: V(x) = {p:.6f} x^2, optimal gain K = {p:.6f}\n")

    x = np.array([0.05, 0.1, 0.25, 0.5, 0.75, 1.0])
    print(f"{'grid':>10} " + " ".join(f"x={v:<6}" for v in x))
    for points, samples in [(51, 25), (101, 51), (201, 101)]:
        model, asm = solve(points, samples)
        pol = asm.policies[asm.order[0]]
        rel = np.abs(pol.value_at(x[:, None]) - p * x**2) / (p * x**2)
        print(f"{points:>4}/{samples:<5} " + " ".join(f"{r:8.2%}" for r in rel))

    # The tabulated policy should track u = -K x away from the action quantisation.
    model, asm = solve(101, 51)
    pol = asm.policies[asm.order[0]]
    xs = np.round(np.linspace(-0.9, 0.9, 7), 2) + 0.0
    print("\npolicy at 101 points:")
    for xi, ui in zip(xs, pol(xs[:, None])[:, 0]):
        print(f"   x = {xi:+.2f}  u = {ui:+.4f}  (LQR {-p * xi + 0.0:+.4f})")

    # Near the goal the lattice step (0.04) exceeds -K x, so the table pushes harder than LQR there.
    tr = simulate(model, asm, np.array([0.8]), 5.0)
    print(f"\nclosed loop from x = 0.8: x(5 s) = {tr.x[-1, 0]:+.4f}, "
          f"LQR would give {0.8 * np.exp(-p * 5):+.4f}; converged = {tr.converged}")


if __name__ == "__main__":
    main()
