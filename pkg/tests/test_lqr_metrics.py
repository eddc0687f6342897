import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poldec.enumeration import enumerate_all, sample_uniform
from poldec.grid import GridSpec
from poldec.input_tree import InputTree, undecomposed
from poldec.lqr_metrics import (
    DecompositionMetrics,
    FitnessEvaluator,
    GoalNotEquilibriumError,
    UnboundedValueError,
    box_second_moment,
    closed_loop_value,
    compute_cost_ratio,
    decomposed_gains,
    fitness,
    linearize,
    lyapunov_residual,
    riccati_residual,
    solve_discounted_lqr,
    value_error_estimate,
)
from poldec.systems import get_model, linear_model, pendulum_model, quadcopter_model, synthetic_separable


def _random_stabilizable(rng, n, m):
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    Q = np.diag(rng.uniform(0.1, 2.0, n))
    R = np.diag(rng.uniform(0.1, 2.0, m))
    lam = float(rng.uniform(0, 2))
    return A, B, Q, R, lam


def mc_value_error(model, tree, samples, rng):
    """Box average of the value gap, estimated by sampling."""
    ev = FitnessEvaluator(model)
    gains = decomposed_gains(tree, ev.lin, model.Q, model.R, model.discount)
    P_delta = closed_loop_value(ev.lin.A, ev.lin.B, gains.K, model.Q, model.R, model.discount)
    X = rng.uniform(model.x_lower, model.x_upper, size=(samples, model.n)) - model.x_goal
    gap = np.einsum("ij,jk,ik->i", X, P_delta - ev.P_opt, X)
    return gap.mean(), gap.std() / np.sqrt(samples)


def test_linearize_double_integrator():
    lin = linearize(linear_model([[0, 1], [0, 0]], [[0], [1]]))
    assert np.allclose(lin.A, [[0, 1], [0, 0]])
    assert np.allclose(lin.B, [[0], [1]])


def test_linearize_quadcopter_thrust_column():
    model = quadcopter_model()
    lin = linearize(model)
    zdd = model.state_names.index("zdot")
    assert lin.B[zdd, 0] == pytest.approx(1.0 / model.params["mass"], rel=1e-6)


def test_linearize_pendulum_upright_unstable():
    lin = linearize(pendulum_model())
    assert np.max(np.linalg.eigvals(lin.A).real) > 0


def test_linearize_finite_difference_path():
    model = pendulum_model().with_(jacobian=None)
    lin_fd = linearize(model)
    lin_an = linearize(pendulum_model())
    assert np.allclose(lin_fd.A, lin_an.A, atol=1e-6)
    assert np.allclose(lin_fd.B, lin_an.B, atol=1e-6)


def test_linearize_rejects_non_equilibrium():
    model = linear_model([[0.0]], [[1.0]])
    shifted = model.with_(dynamics=lambda x, u: x * 0 + 1.0, jacobian=None)
    with pytest.raises(GoalNotEquilibriumError):
        linearize(shifted)


def test_scalar_lqr():
    P, K = solve_discounted_lqr([[0.0]], [[1.0]], [[1.0]], [[1.0]], 0.0)
    assert P[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert K[0, 0] == pytest.approx(1.0, abs=1e-12)


@given(lam=st.floats(0.0, 5.0))
def test_scalar_discounted_lqr(lam):
    P, _ = solve_discounted_lqr([[0.0]], [[1.0]], [[1.0]], [[1.0]], lam)
    assert abs(P[0, 0] - (-lam + np.sqrt(lam**2 + 4)) / 2) <= 1e-10


def test_residuals_on_random_systems():
    rng = np.random.default_rng(0)
    done = 0
    while done < 100:
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, n + 1))
        A, B, Q, R, lam = _random_stabilizable(rng, n, m)
        P, K = solve_discounted_lqr(A, B, Q, R, lam)
        tol = 1e-8 * (1 + np.linalg.norm(P))
        assert riccati_residual(A, B, Q, R, lam, P) <= tol
        assert np.linalg.norm(P - P.T) <= 1e-10 * np.linalg.norm(P)
        assert np.min(np.linalg.eigvalsh(P)) >= -1e-8
        Acl = A - B @ K - 0.5 * lam * np.eye(n)
        Pc = closed_loop_value(A, B, K, Q, R, lam)
        assert lyapunov_residual(Acl, Q + K.T @ R @ K, Pc) <= 1e-8 * (1 + np.linalg.norm(Pc))
        assert np.allclose(Pc, P, atol=1e-7 * (1 + np.linalg.norm(P)))
        done += 1


def test_unstabilizable_raises():
    A = np.diag([1.0, 2.0])
    B = np.array([[1.0], [0.0]])
    with pytest.raises(UnboundedValueError):
        solve_discounted_lqr(A, B, np.eye(2), np.eye(1), 0.0)


def test_discount_rescues_mild_instability():
    # (A - lam/2 I) is stable when lam > 2a, so no control is needed
    P, _ = solve_discounted_lqr([[0.5]], [[0.0]], [[1.0]], [[1.0]], 2.0)
    assert P[0, 0] == pytest.approx(1.0, rel=1e-9)


def test_box_second_moment():
    M = box_second_moment([-1, -1], [1, 1], [0, 0])
    assert np.allclose(M, np.eye(2) / 3)
    # P_delta - P_opt = I gives err = 2/3
    assert np.trace(np.eye(2) @ M) == pytest.approx(2 / 3)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(10**6, 2))
    assert np.mean(np.sum(X * X, axis=1)) == pytest.approx(2 / 3, rel=0.01)


def test_box_second_moment_off_center():
    lower, upper, goal = np.array([0.0, -1.0]), np.array([2.0, 3.0]), np.array([0.5, 0.0])
    rng = np.random.default_rng(1)
    X = rng.uniform(lower, upper, size=(10**6, 2)) - goal
    assert np.allclose(box_second_moment(lower, upper, goal), X.T @ X / len(X), rtol=0.01, atol=0.01)


def test_separable_block_tree_exact():
    model = synthetic_separable(["di", "di"])
    ev = FitnessEvaluator(model)
    assert ev.err(model.reference_tree) <= 1e-10
    gains = decomposed_gains(model.reference_tree, ev.lin, model.Q, model.R, model.discount)
    assert np.allclose(gains.K, ev.K_opt, atol=1e-8)
    m = ev(model.reference_tree)
    assert m.F == 0.0 and m.F_comp < 1


def test_undecomposed_gain_matches_joint():
    model = get_model("toy-4x3-2")
    ev = FitnessEvaluator(model)
    gains = decomposed_gains(undecomposed(4, 3), ev.lin, model.Q, model.R, model.discount)
    assert np.allclose(gains.K, ev.K_opt, atol=1e-10)
    assert ev.err(undecomposed(4, 3)) == 0.0


def test_fig3_gain_sparsity(fig3_tree):
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 4)) - 3 * np.eye(4)
    model = linear_model(A, rng.normal(size=(4, 4)))
    lin = linearize(model)
    gains = decomposed_gains(fig3_tree, lin, model.Q, model.R, model.discount)
    assert gains.stable
    assert np.all(gains.K[1:3, 3] == 0)
    # every input row is zero outside its own sub-tree states
    assert np.all(gains.K[3, 1:] == 0)
    assert np.all(gains.K[0, :3] == 0)


@pytest.mark.parametrize("seed", range(4))
def test_err_matches_monte_carlo(seed):
    model = get_model(f"toy-4x3-{seed}")
    rng = np.random.default_rng(seed)
    ev = FitnessEvaluator(model)
    checked = 0
    for tree in enumerate_all(4, 3):
        err = ev.err(tree)
        if not np.isfinite(err) or err < 1e-3:
            continue
        mean, se = mc_value_error(model, tree, 200_000, rng)
        assert abs(mean - err) <= max(0.01 * err, 5 * se)
        checked += 1
        if checked >= 3:
            break
    assert checked > 0


def test_value_error_estimate_matches_evaluator(fig3_tree):
    model = get_model("toy-4x4-3")
    ev = FitnessEvaluator(model)
    direct = value_error_estimate(fig3_tree, ev.lin, model.Q, model.R, model.discount, model.x_lower, model.x_upper)
    assert direct == ev.err(fig3_tree)


def test_err_nonnegative_everywhere():
    model = get_model("toy-3x3-1")
    ev = FitnessEvaluator(model)
    errs = [ev.err(t) for t in enumerate_all(3, 3)]
    assert min(errs) >= 0.0


def test_instability_gives_infinite_err():
    # in this split u1 only sees x1 but has no authority over it
    A = np.array([[1.0, 0.0], [0.0, -1.0]])
    B = np.array([[0.0, 1.0], [1.0, 0.0]])
    model = linear_model(A, B)
    tree = InputTree.parse("[(u1|x1), (u2|x2)]", 2, 2)
    m = fitness(tree, model)
    assert m.err_lqr == float("inf")
    assert m.F_err == 1.0 and m.F == m.F_comp


def test_metrics_from_parts():
    zero = DecompositionMetrics.from_parts(0.0, 0.3)
    assert zero.F_err == 0.0 and zero.F == 0.0
    inf = DecompositionMetrics.from_parts(float("inf"), 0.3)
    assert inf.F_err == 1.0 and inf.F == 0.3
    mid = DecompositionMetrics.from_parts(0.5, 0.3)
    assert mid.F_err == pytest.approx(1 - np.exp(-0.5))
    assert mid.F == pytest.approx(mid.F_err * 0.3)


def _grid_4x2(points=31, samples=10, **kw):
    return GridSpec(
        state_lower=-np.ones(4), state_upper=np.ones(4), state_points=np.full(4, points),
        input_lower=-np.ones(2), input_upper=np.ones(2), input_samples=np.full(2, samples), **kw,
    )


def test_cost_ratio_undecomposed_is_one():
    assert compute_cost_ratio(undecomposed(4, 2), _grid_4x2()) == 1.0


@pytest.mark.parametrize("ce,ie,cu", [(1.0, 200, 1.0), (0.001, 1, 1.0), (2.0, 10, 0.5)])
def test_cost_ratio_formula(ce, ie, cu):
    grid = _grid_4x2(flop_eval=ce, max_evaluation_sweeps=ie, flop_update=cu)
    tree = InputTree.parse("[(u1|x1,x2), (u2|x3,x4)]", 4, 2)
    expect = (2 * 31**2 * (ce * ie + cu * 10) * 2**2) / (31**4 * (ce * ie + cu * 10**2) * 2**4)
    assert compute_cost_ratio(tree, grid) == pytest.approx(expect, rel=1e-12)


def test_cost_ratio_limit_when_updates_dominate():
    grid = _grid_4x2(flop_eval=1e-9, max_evaluation_sweeps=1)
    tree = InputTree.parse("[(u1|x1,x2), (u2|x3,x4)]", 4, 2)
    assert compute_cost_ratio(tree, grid) == pytest.approx(2 * 10 / (4 * 31**2 * 100), rel=1e-4)


def test_cost_ratio_grid_mismatch():
    with pytest.raises(ValueError):
        compute_cost_ratio(undecomposed(3, 2), _grid_4x2())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_decoupled_trees_are_cheaper(seed):
    # forests without cascades split the joint table, so they never cost more
    rng = np.random.default_rng(seed)
    tree = sample_uniform(4, 2, rng)
    if any(nd.parent is not None for nd in tree.nodes):
        return
    assert 0 < compute_cost_ratio(tree, _grid_4x2()) <= 1


def test_fitness_deterministic():
    model = get_model("toy-3x2-4")
    tree = InputTree.parse("[(u1|x1)->[(u2|x2,x3)]]", 3, 2)
    assert fitness(tree, model) == fitness(tree, model)
