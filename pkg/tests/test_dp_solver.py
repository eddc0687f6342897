import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poldec.dp_solver import (
    DPError,
    basin_sweep,
    goal_distance,
    interpolate,
    load_policy,
    parameter_count,
    save_policy,
    simulate,
    simulate_batch,
    solve_decomposition,
    solve_policy,
)
from poldec.enumeration import sample_uniform
from poldec.grid import GridSpec
from poldec.input_tree import InputTree, subsystem_of, undecomposed
from poldec.lqr_metrics import FitnessEvaluator, solve_discounted_lqr
from poldec.systems import get_model, linear_model, manipulator_model, pendulum_model, scalar_integrator_model

P_SCALAR = (-0.1 + np.sqrt(4.01)) / 2


def _scalar_policy(points=101, samples=51):
    asm = solve_decomposition(scalar_integrator_model(points=points, samples=samples), undecomposed(1, 1))
    return asm.policies[asm.order[0]]


@pytest.fixture(scope="module")
def sep2():
    return get_model("sep-2di", points=11)


@pytest.fixture(scope="module")
def sep2_assembly(sep2):
    return solve_decomposition(sep2, sep2.reference_tree)


# interpolation ---------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(
    coef=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    seed=st.integers(0, 2**31),
)
def test_interpolation_exact_on_bilinear(coef, seed):
    a, b, c, d = coef
    axes = [np.linspace(-1, 1, 5), np.linspace(0, 2, 7)]
    X, Y = np.meshgrid(*axes, indexing="ij")
    table = (a + b * X + c * Y + d * X * Y)[..., None]
    pts = np.random.default_rng(seed).uniform([-1, 0], [1, 2], size=(50, 2))
    got = interpolate(axes, table, pts)[:, 0]
    want = a + b * pts[:, 0] + c * pts[:, 1] + d * pts[:, 0] * pts[:, 1]
    assert np.allclose(got, want, atol=1e-12)


def test_interpolation_clamps_to_box():
    axes = [np.linspace(0, 1, 3)]
    table = np.array([[0.0], [1.0], [4.0]])
    out = interpolate(axes, table, np.array([[-5.0], [9.0]]))
    assert out[:, 0].tolist() == [0.0, 4.0]


def test_interpolation_hits_nodes():
    axes = [np.linspace(-1, 1, 4), np.linspace(-2, 2, 3), np.linspace(0, 1, 2)]
    table = np.random.default_rng(0).normal(size=(4, 3, 2, 2))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    assert np.allclose(interpolate(axes, table, grid), table.reshape(-1, 2), atol=1e-14)


# scalar toy ------------------------------------------------------------------


def test_scalar_value_default_grid():
    pol = _scalar_policy(101)
    assert pol.value_at(np.array([[0.5]]))[0] == pytest.approx(P_SCALAR * 0.25, rel=0.05)


def test_scalar_value_fine_grid():
    pol = _scalar_policy(201)
    assert pol.value_at(np.array([[0.5]]))[0] == pytest.approx(P_SCALAR * 0.25, rel=0.01)


@pytest.mark.parametrize("points,samples,tol", [(101, 51, 0.05), (201, 101, 0.01)])
def test_scalar_value_random_points(points, samples, tol):
    # relative error grows like (grid step / |x|)^2, so points stay clear of the goal
    rng = np.random.default_rng(0)
    x = rng.uniform(0.25, 1.0, 100) * rng.choice([-1.0, 1.0], 100)
    V = _scalar_policy(points, samples).value_at(x[:, None])
    exact = P_SCALAR * x**2
    assert np.max(np.abs(V - exact) / exact) <= tol


def test_scalar_policy_close_to_lqr():
    pol = _scalar_policy(101)
    x = np.linspace(-0.9, 0.9, 19)[:, None]
    assert np.max(np.abs(pol(x)[:, 0] + P_SCALAR * x[:, 0])) < 0.05


def test_policy_values_within_limits():
    model = pendulum_model(torque_limit=3.0)
    grid = model.grid.with_(state_points=np.array([15, 15]), max_policy_iterations=10)
    asm = solve_decomposition(model, undecomposed(2, 1), grid)
    table = asm.policies[asm.order[0]].table
    assert table.min() >= -3.0 and table.max() <= 3.0
    assert set(np.round(np.unique(table), 12)) <= set(np.round(grid.action_values([0])[0], 12))


def test_value_change_monotone():
    model = scalar_integrator_model()
    tree = undecomposed(1, 1)
    _, stats = solve_policy(model, tree, tree.nodes[0].node_id, return_stats=True)
    dv = stats.value_changes
    assert len(dv) >= 2
    for a, b in zip(dv[1:], dv[2:]):
        assert b <= a + 1e-9


# decompositions --------------------------------------------------------------


def test_decomposed_matches_independent_blocks(sep2, sep2_assembly):
    block = get_model("sep-di", points=11)
    alone = solve_decomposition(block, undecomposed(2, 1))
    ref = alone.policies[alone.order[0]]
    for pol in sep2_assembly.policies.values():
        assert np.array_equal(pol.table, ref.table)
        assert np.array_equal(pol.value, ref.value)


@pytest.mark.slow
def test_decomposed_matches_joint_slice(sep2, sep2_assembly):
    joint = solve_decomposition(sep2, undecomposed(4, 2))
    jp = joint.policies[joint.order[0]]
    axes = sep2.grid.axes([0, 1])
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
    pad = np.zeros_like(X)
    full = np.concatenate([X, pad], axis=1)
    first = next(p for p in sep2_assembly.policies.values() if p.inputs == (0,))
    assert np.allclose(jp(full)[:, 0], first(X)[:, 0], atol=1e-9)
    V_block = first.value_at(X) + first.value_at(np.zeros((1, 2)))
    assert np.allclose(jp.value_at(full), V_block, rtol=1e-6, atol=1e-8)


def test_solve_order_fig3(fig3_tree):
    model = get_model("toy-4x4-0", points=5, samples=3)
    grid = model.grid.with_(max_policy_iterations=2, max_evaluation_sweeps=5)
    asm = solve_decomposition(model, fig3_tree, grid)
    first_two = {asm.policies[n].inputs for n in asm.order[:2]}
    assert first_two == {(0,), (3,)}
    assert asm.policies[asm.order[-1]].inputs == (1, 2)
    assert asm.n_parameters == parameter_count(fig3_tree, grid)


def test_undecomposed_equals_direct_solve():
    model = get_model("sep-di", points=11)
    tree = undecomposed(2, 1)
    asm = solve_decomposition(model, tree)
    direct = solve_policy(model, tree, tree.nodes[0].node_id)
    assert np.array_equal(asm.policies[asm.order[0]].table, direct.table)


def test_parameter_count_two_blocks():
    grid = GridSpec(
        state_lower=-np.ones(4), state_upper=np.ones(4), state_points=np.full(4, 31),
        input_lower=-np.ones(2), input_upper=np.ones(2), input_samples=np.full(2, 10),
    )
    tree = InputTree.parse("[(u1|x1,x2), (u2|x3,x4)]", 4, 2)
    assert parameter_count(tree, grid) == 2 * 31**2 == 1922


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_parameter_count_rule(seed):
    model = get_model("biped")
    tree = sample_uniform(6, 4, np.random.default_rng(seed))
    expect = sum(len(nd.inputs) * model.grid.cells(subsystem_of(tree, nd.node_id).states) for nd in tree.nodes)
    assert parameter_count(tree, model.grid) == expect


def test_invalid_tree_rejected():
    model = get_model("sep-2di", points=5)
    bad = InputTree.from_groups([([0], [0, 1, 2, 3], None), ([1], [], None)], 4, 2)
    with pytest.raises(DPError):
        solve_decomposition(model, bad)


def test_goal_outside_box_rejected():
    model = scalar_integrator_model(points=11)
    shifted = model.with_(x_goal=np.array([2.0]))
    with pytest.raises(DPError):
        solve_decomposition(shifted, undecomposed(1, 1))


# simulation ------------------------------------------------------------------


def test_equilibrium_stays_put(sep2_assembly):
    model = sep2_assembly.model
    traj = simulate(model, sep2_assembly, model.x_goal, 1.0)
    assert np.allclose(traj.x, model.x_goal)
    assert np.allclose(traj.u, model.u_goal)
    assert traj.converged and not traj.diverged


def test_scalar_closed_form_response():
    model = scalar_integrator_model()
    K = np.array([[P_SCALAR]])
    # inputs are held over each step, so the discrete response is geometric
    traj = simulate(model, K, [0.5], 2.0, dt=0.01)
    steps = np.arange(traj.t.size)
    assert np.allclose(traj.x[:, 0], 0.5 * (1 - P_SCALAR * 0.01) ** steps, rtol=1e-12)
    fine = simulate(model, K, [0.5], 2.0, dt=1e-4)
    assert np.allclose(fine.x[:, 0], 0.5 * np.exp(-P_SCALAR * fine.t), atol=1e-4)


def test_unstable_gain_diverges():
    model = linear_model([[0, 1], [0, 0]], [[0], [1]])
    traj = simulate(model, np.array([[-1.0, -1.0]]), [0.1, 0.0], 20.0)
    assert traj.diverged and traj.divergence_time is not None
    assert not traj.converged


def test_manipulator_destabilizing_gain():
    model = manipulator_model()
    K = FitnessEvaluator(model).K_opt
    x0 = model.x_goal + 0.05
    bad = simulate(model, -K, x0, 10.0)
    assert bad.diverged and bad.divergence_time < 10.0
    good = simulate(model, K, x0, 5.0)
    assert good.converged and not good.diverged


def test_simulate_rejects_bad_x0():
    model = scalar_integrator_model()
    with pytest.raises(ValueError):
        simulate(model, np.eye(1), [np.nan], 1.0)


def test_batch_matches_single():
    model = pendulum_model()
    K = FitnessEvaluator(model).K_opt
    X0 = np.array([[0.3, 0.0], [-0.2, 1.0]])
    Xf, conv, div, _ = simulate_batch(model, K, X0, 2.0)
    for k in range(2):
        traj = simulate(model, K, X0[k], 2.0)
        assert np.allclose(traj.x[-1], Xf[k])
        assert traj.converged == conv[k]


def test_basin_full_for_stable_linear():
    model = linear_model([[0, 1], [-1, -1]], [[0], [1]])
    K = FitnessEvaluator(model).K_opt
    grid = np.linspace(-1, 1, 9)
    basin = basin_sweep(model, K, (0, 1), (grid, grid), 20.0)
    assert basin.converged.all()
    assert basin.fraction == 1.0


def test_basin_partial_for_torque_limited_pendulum():
    model = pendulum_model(torque_limit=3.0)
    K = FitnessEvaluator(model).K_opt
    th = np.linspace(-np.pi, np.pi, 21)
    om = np.linspace(-8, 8, 21)
    basin = basin_sweep(model, K, (0, 1), (th, om), 10.0)
    assert 0.0 < basin.fraction < 1.0
    goal = basin.converged[10, 10]
    assert goal
    assert len(basin.rows()) == 21 * 21


def test_goal_distance_scaling():
    model = pendulum_model()
    assert goal_distance(model, model.x_goal) == 0.0
    assert goal_distance(model, np.array([np.pi, 0.0])) == pytest.approx(1.0)


# persistence -----------------------------------------------------------------


def test_save_load_roundtrip(tmp_path, sep2_assembly):
    path = tmp_path / "policy.bin"
    save_policy(sep2_assembly, path, {"seed": 3})
    loaded, header = load_policy(path)
    assert header["seed"] == 3
    assert header["n_parameters"] == sep2_assembly.n_parameters
    assert loaded.tree == sep2_assembly.tree
    for nid, pol in sep2_assembly.policies.items():
        assert np.array_equal(loaded.policies[nid].table, pol.table)
    x0 = [0.5, -0.3, -0.4, 0.2]
    a = simulate(sep2_assembly.model, sep2_assembly, x0, 2.0)
    b = simulate(loaded.model, loaded, x0, 2.0)
    assert np.array_equal(a.x, b.x)


def test_load_rejects_garbage(tmp_path, sep2_assembly):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a policy")
    with pytest.raises(ValueError):
        load_policy(bad)
    good = tmp_path / "good.bin"
    save_policy(sep2_assembly, good)
    bad.write_bytes(good.read_bytes() + b"\0")
    with pytest.raises(ValueError):
        load_policy(bad)


def test_lqr_helper_consistent():
    P, K = solve_discounted_lqr([[0.0]], [[1.0]], [[1.0]], [[1.0]], 0.1)
    assert P[0, 0] == pytest.approx(P_SCALAR)
    assert K[0, 0] == pytest.approx(P_SCALAR)
