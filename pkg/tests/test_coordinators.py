import numpy as np
import pytest

from capcoord.coordinators import (CoordinatorNorms, DualSearchConfig,
                                   GridBestResponsePlanner, MPCCoordinator,
                                   NeuralCoordinator, NeuralCoordinatorConfig,
                                   Snapshot, TeacherForcingCoordinator,
                                   coordinator_feature_columns,
                                   coordinator_feature_names, dual_search,
                                   mpc_coordinate, simulate_horizon,
                                   snapshot_from_ctx)
from capcoord.idp_core import (CapacityPath, ContractViolation, ExoSeries,
                               Population, ZeroPriceCoordinator, rollout)
from capcoord.policies import BaseStockPolicy, NeuralPolicy
from capcoord.tape import Tape, Var, value_of
from tests.test_policies import make_ctx, make_pop


def slack(T, level=1e9):
    return CapacityPath(np.full(T, level), np.full(T, level))


# --- teacher forcing ---------------------------------------------------

def test_teacher_forcing_indexing_example():
    T, L = 5, 2
    costs = np.column_stack([np.arange(1, T + 1)] * 2).astype(float)
    coord = TeacherForcingCoordinator(costs, forecast_steps=L)
    pop = make_pop(np.full((1, T), 1.0))
    ctx = make_ctx(pop, week=2, onhand=[0.0], forecast_steps=L)
    traj = coord.announce(ctx)
    tup = traj.announcement_tuple()
    assert tup[0::2] == (3.0, 3.0, 4.0, 5.0)
    assert tup[1::2] == (3.0, 3.0, 4.0, 5.0)


def test_teacher_forcing_pads_past_horizon():
    costs = np.array([[1.0, 2.0], [3.0, 4.0]])
    coord = TeacherForcingCoordinator(costs, forecast_steps=3)
    pop = make_pop(np.full((1, 2), 1.0))
    ctx = make_ctx(pop, week=1, onhand=[0.0], forecast_steps=3)
    traj = coord.announce(ctx)
    assert np.allclose(traj.current_values(), [3.0, 4.0])
    assert np.allclose(traj.forecast_values(), [[3.0, 4.0]] * 3)


def test_teacher_forcing_zero_costs_penalized_equals_raw():
    pop = make_pop(np.full((2, 4), 2.0))
    coord = TeacherForcingCoordinator(np.zeros((4, 2)))
    res = rollout(pop, np.array([3.0, 1.0]), BaseStockPolicy(), coord,
                  slack(4), seed=1)
    assert np.allclose(res.ledger.penalized, res.ledger.reward)


def test_teacher_forcing_ignores_history():
    costs = np.random.default_rng(0).uniform(0, 1, size=(6, 2))
    coord = TeacherForcingCoordinator(costs)
    pop_a = make_pop(np.full((1, 6), 1.0))
    pop_b = make_pop(np.random.default_rng(1).uniform(0, 9, size=(1, 6)))
    res_a = rollout(pop_a, np.zeros(1), BaseStockPolicy(), coord, slack(6))
    res_b = rollout(pop_b, np.zeros(1), BaseStockPolicy(), coord, slack(6))
    assert np.allclose(res_a.ledger.prices, res_b.ledger.prices)


def test_teacher_forcing_validation():
    with pytest.raises(ContractViolation):
        TeacherForcingCoordinator(np.zeros((4, 3)))
    with pytest.raises(ContractViolation):
        TeacherForcingCoordinator(-np.ones((4, 2)))
    coord = TeacherForcingCoordinator(np.zeros((2, 2)))
    pop = make_pop(np.full((1, 5), 1.0))
    ctx = make_ctx(pop, week=0, onhand=[0.0])
    with pytest.raises(ContractViolation):
        coord.announce(ctx)


# --- forward simulation ------------------------------------------------

def test_simulate_horizon_matches_hand_computation():
    # one product, demand 2 per week, no orders: inventory drains 5 -> 3 -> 1
    pop = make_pop(np.full((1, 4), 2.0), w=1.0, u=1.0)
    snap = Snapshot(onhand=np.array([5.0]), pending=np.zeros((1, 5)), week=0)

    class NoOrder:
        def actions(self, ctx):
            return np.zeros(ctx.n)

    lam = np.zeros((3, 2))
    agg_i, agg_j, reward = simulate_horizon(pop, snap, 3, lam, NoOrder(),
                                            np.random.default_rng(0))
    assert np.allclose(agg_i, [3.0, 1.0, 0.0])
    assert np.allclose(agg_j, 0.0)
    # price 10, fulfilled 2, 2, 1
    assert reward == pytest.approx(10.0 * (2 + 2 + 1))


def test_simulate_horizon_planned_actions_enter_pipeline():
    pop = make_pop(np.zeros((1, 4)), lead=1, u=2.0)
    snap = Snapshot(onhand=np.zeros(1), pending=np.zeros((1, 5)), week=0)
    planned = np.array([[3.0, 0.0, 0.0]])
    agg_i, agg_j, _ = simulate_horizon(pop, snap, 3, np.zeros((3, 2)), None,
                                       np.random.default_rng(0),
                                       planned=planned)
    assert np.allclose(agg_j, [0.0, 6.0, 0.0])   # u * arrivals, lead 1


# --- dual search -------------------------------------------------------

def test_dual_search_slack_limits_stay_zero():
    rng = np.random.default_rng(0)
    pop = make_pop(rng.uniform(1, 4, size=(3, 10)))
    snap = Snapshot(onhand=np.zeros(3), pending=np.zeros((3, 12)), week=6)
    cfg = DualSearchConfig(horizon=4, steps=10, samples=3)
    lam, value = dual_search(pop, slack(10), snap, cfg,
                             rng=np.random.default_rng(1))
    assert np.allclose(lam, 0.0)


def test_dual_search_no_history_returns_zero():
    pop = make_pop(np.full((2, 6), 3.0))
    snap = Snapshot(onhand=np.zeros(2), pending=np.zeros((2, 8)), week=0)
    cfg = DualSearchConfig(horizon=3, steps=5)
    lam, value = dual_search(pop, slack(6), snap, cfg)
    assert np.allclose(lam, 0.0) and value == 0.0


def test_dual_search_tight_limits_raise_prices():
    rng = np.random.default_rng(5)
    pop = make_pop(rng.uniform(2, 5, size=(4, 12)))
    snap = Snapshot(onhand=np.full(4, 4.0), pending=np.zeros((4, 14)), week=8)
    cfg = DualSearchConfig(horizon=4, steps=15, samples=4)
    tight = CapacityPath(np.full(12, 1.0), np.full(12, 1.0))
    lam, _ = dual_search(pop, tight, snap, cfg, rng=np.random.default_rng(2))
    assert lam.max() > 0.0
    assert np.all(lam >= 0.0)


def test_dual_search_tightening_monotone():
    rng = np.random.default_rng(7)
    pop = make_pop(rng.uniform(2, 6, size=(5, 12)))
    snap = Snapshot(onhand=np.full(5, 5.0), pending=np.zeros((5, 14)), week=8)
    cfg = DualSearchConfig(horizon=4, steps=20, samples=4)
    base_limit = 12.0
    loose = CapacityPath(np.full(12, base_limit), np.full(12, 1e9))
    tight = CapacityPath(np.full(12, base_limit / 2), np.full(12, 1e9))
    lam_loose, _ = dual_search(pop, loose, snap, cfg,
                               rng=np.random.default_rng(3))
    lam_tight, _ = dual_search(pop, tight, snap, cfg,
                               rng=np.random.default_rng(3))
    assert np.all(lam_tight[:, 0] >= lam_loose[:, 0] - 1e-12)


def test_dual_search_config_validation():
    with pytest.raises(ContractViolation):
        DualSearchConfig(horizon=0)
    with pytest.raises(ContractViolation):
        DualSearchConfig(tol=0.0)
    with pytest.raises(ContractViolation):
        DualSearchConfig(demand_mode="psychic")


def test_mpc_coordinate_returns_trajectory():
    rng = np.random.default_rng(1)
    pop = make_pop(rng.uniform(1, 4, size=(3, 10)))
    snap = Snapshot(onhand=np.zeros(3), pending=np.zeros((3, 12)), week=5)
    cfg = DualSearchConfig(horizon=5, steps=5, samples=2)
    traj = mpc_coordinate(pop, slack(10), snap, cfg,
                          rng=np.random.default_rng(0))
    assert traj.current_values().shape == (2,)
    assert traj.forecast_values().shape == (4, 2)
    traj.validate()


def test_mpc_coordinator_in_rollout_slack_stays_zero():
    rng = np.random.default_rng(2)
    pop = make_pop(rng.uniform(1, 4, size=(3, 8)))
    coord = MPCCoordinator(DualSearchConfig(horizon=4, steps=5, samples=2))
    res = rollout(pop, np.zeros(3), BaseStockPolicy(), coord, slack(8), seed=0)
    assert np.allclose(res.ledger.prices, 0.0)


# --- grid best response -------------------------------------------------

def test_grid_planner_prefers_profitable_orders():
    # margin 7/unit, demand 2/week: optimal grid plan orders ~demand
    pop = make_pop(np.full((1, 5), 2.0), price=10.0, cost=3.0, lead=1)
    snap = Snapshot(onhand=np.zeros(1), pending=np.zeros((1, 7)), week=0)
    planner = GridBestResponsePlanner(grid=(0.0, 1.0, 2.0, 3.0))
    plan = planner.plan(pop, snap, 3, np.zeros((3, 2)))
    assert plan.shape == (1, 3)
    assert plan.sum() > 0.0


def test_grid_planner_huge_prices_suppress_orders():
    pop = make_pop(np.full((1, 5), 2.0), price=10.0, cost=3.0, lead=1)
    snap = Snapshot(onhand=np.zeros(1), pending=np.zeros((1, 7)), week=0)
    planner = GridBestResponsePlanner(grid=(0.0, 1.0, 2.0, 3.0))
    lam = np.full((3, 2), 100.0)
    plan = planner.plan(pop, snap, 3, lam)
    assert np.allclose(plan, 0.0)


# --- neural coordinator --------------------------------------------------

def test_neural_coordinator_zero_params_softplus():
    pop = make_pop(np.full((2, 8), 3.0))
    coord = NeuralCoordinator(NeuralCoordinatorConfig(forecast_steps=3))
    coord.params.values[:] = 0.0
    coord.calibrate(pop)
    ctx = make_ctx(pop, week=4, onhand=np.zeros(2), forecast_steps=3)
    traj = coord.announce(ctx)
    assert np.allclose(traj.current_values(), np.log(2.0))
    assert np.allclose(traj.forecast_values(), np.log(2.0))


def test_neural_coordinator_deterministic():
    pop = make_pop(np.full((2, 8), 3.0))
    coord = NeuralCoordinator(seed=3)
    coord.calibrate(pop)
    ctx = make_ctx(pop, week=5, onhand=np.array([1.0, 2.0]))
    a = coord.announce(ctx).current_values()
    b = coord.announce(ctx).current_values()
    assert np.array_equal(a, b)


def test_neural_coordinator_taped_output_is_var():
    pop = make_pop(np.full((2, 6), 3.0))
    coord = NeuralCoordinator(seed=1)
    coord.calibrate(pop)
    ctx = make_ctx(pop, week=2, onhand=np.zeros(2))
    ctx.tape = Tape()
    ctx.onhand = ctx.tape.leaf(np.zeros(2))
    traj = coord.announce(ctx)
    assert isinstance(traj.current, Var)
    assert isinstance(traj.forecast, Var)
    traj.validate()


def test_coordinator_feature_names_and_columns_align():
    pop = make_pop(np.full((3, 8), 2.0))
    ctx = make_ctx(pop, week=3, onhand=np.zeros(3))
    norms = CoordinatorNorms.from_population(pop)
    cols = coordinator_feature_columns(ctx, norms, 4)
    assert len(cols) == len(coordinator_feature_names(4))
    assert all(np.isfinite(float(value_of(c))) for c in cols)


def test_snapshot_from_ctx_shapes():
    pop = make_pop(np.full((2, 6), 3.0), lead=2)
    ctx = make_ctx(pop, week=3, onhand=np.array([1.0, 4.0]))
    snap = snapshot_from_ctx(ctx)
    assert snap.week == 3
    assert snap.onhand.shape == (2,)
    assert snap.pending.shape[0] == 2


def test_rollout_with_neural_coordinator_runs_end_to_end():
    rng = np.random.default_rng(4)
    pop = make_pop(rng.uniform(1, 4, size=(3, 8)))
    coord = NeuralCoordinator(seed=2)
    res = rollout(pop, np.zeros(3), NeuralPolicy(seed=1), coord, slack(8),
                  seed=0)
    assert np.all(res.ledger.prices >= 0.0)
    assert res.ledger.forecasts.shape == (8, 4, 2)
