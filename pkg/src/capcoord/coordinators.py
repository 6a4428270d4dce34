"""Coordination mechanisms: teacher forcing, MPC dual search, neural forecaster.

Every mechanism announces a current capacity price pair plus an L-step
forecast. Teacher forcing replays a fixed cost sequence; the MPC coordinator
runs projected dual ascent against forward simulations of an inner policy;
the neural coordinator is an MLP over aggregate features trained elsewhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .idp_core import (CapacityPath, ContractViolation, Population,
                       PriceTrajectory, RolloutContext)
from .policies import BaseStockPolicy, init_mlp_params, mlp_forward
from .tape import NumericFault, ParamVector, Var, param_leaves, value_of


class TeacherForcingCoordinator:
    """Announces a fixed cost sequence, ignoring history."""

    def __init__(self, costs: np.ndarray, forecast_steps: int = 4):
        costs = np.asarray(costs, dtype=float)
        if costs.ndim != 2 or costs.shape[1] != 2:
            raise ContractViolation("teacher-forced costs must have shape (T, 2)")
        if np.any(costs < 0):
            raise ContractViolation("teacher-forced costs must be nonnegative")
        self.costs = costs
        self.forecast_steps = forecast_steps

    def _padded(self, t: int) -> np.ndarray:
        T = self.costs.shape[0]
        idx = np.minimum(np.arange(t, t + self.forecast_steps + 1), T - 1)
        return self.costs[idx]

    def announce(self, ctx: RolloutContext) -> PriceTrajectory:
        if ctx.horizon > self.costs.shape[0]:
            raise ContractViolation("cost sequence shorter than the horizon")
        window = self._padded(ctx.week)
        return PriceTrajectory(current=window[0].copy(), forecast=window[1:].copy())


def teacher_forcing(costs: np.ndarray, forecast_steps: int = 4) -> TeacherForcingCoordinator:
    return TeacherForcingCoordinator(costs, forecast_steps)


@dataclass
class DualSearchConfig:
    horizon: int = 5
    steps: int = 25
    step_size: float | None = None      # auto-scaled from price/limit units
    decay: float = 0.1
    tol: float = 1e-5
    samples: int = 8
    demand_mode: str = "bootstrap"      # or "oracle"
    window: int = 13
    discount: float = 1.0

    def __post_init__(self):
        if self.horizon < 1 or self.steps < 1:
            raise ContractViolation("horizon and steps must be >= 1")
        if self.tol <= 0:
            raise ContractViolation("tolerance must be positive")
        if self.demand_mode not in ("bootstrap", "oracle"):
            raise ContractViolation(f"unknown demand mode: {self.demand_mode}")


@dataclass
class Snapshot:
    """Frozen endogenous state used by the dual search and DAGGER oracle."""

    onhand: np.ndarray              # (n,)
    pending: np.ndarray             # (n, S) arrivals by absolute week
    week: int


def snapshot_from_ctx(ctx: RolloutContext) -> Snapshot:
    pending = np.stack([np.broadcast_to(np.asarray(value_of(p), dtype=float), (ctx.n,))
                        for p in ctx.pending], axis=1)
    return Snapshot(onhand=np.asarray(value_of(ctx.onhand), dtype=float).copy(),
                    pending=pending, week=ctx.week)


class _HorizonContext:
    """Duck-typed RolloutContext stand-in for inner horizon simulations."""

    def __init__(self, pop, week, onhand, pending, prices, rng, forecast_steps):
        self.pop = pop
        self.week = week
        self.onhand = onhand
        self.pending = pending
        self.current_prices = prices
        self.rng = rng
        self.forecast_steps = forecast_steps
        self.cap = None
        self.tape = None

    @property
    def n(self):
        return self.pop.n

    @property
    def horizon(self):
        return self.pop.horizon

    def pipeline_position(self):
        pos = self.onhand.copy()
        for s in range(self.week, len(self.pending)):
            pos = pos + self.pending[s]
        return pos


def _trajectory_from(lam: np.ndarray, s: int, forecast_steps: int) -> PriceTrajectory:
    H = lam.shape[0]
    idx = np.minimum(np.arange(s, s + forecast_steps + 1), H - 1)
    window = lam[idx]
    return PriceTrajectory(current=window[0], forecast=window[1:])


def simulate_horizon(ext_pop: Population, snap: Snapshot, horizon: int,
                     lam: np.ndarray, inner_policy, rng: np.random.Generator,
                     discount: float = 1.0, planned: np.ndarray | None = None):
    """Roll the inner policy forward ``horizon`` weeks from a snapshot.

    ``ext_pop`` extends the true history with forecasted exogenous values so
    trailing-window features inside the horizon stay well defined. Returns
    (agg_storage, agg_inbound, penalized-free reward total) over the window.
    """
    n = ext_pop.n
    t0 = snap.week
    n_slots = ext_pop.horizon + int(ext_pop.lead_time.max()) + 1
    pending = [np.zeros(n) for _ in range(n_slots)]
    for s in range(min(snap.pending.shape[1], n_slots)):
        pending[s] = snap.pending[:, s].copy()
    onhand = snap.onhand.copy()

    agg_storage = np.zeros(horizon)
    agg_inbound = np.zeros(horizon)
    reward = 0.0
    ctx = _HorizonContext(ext_pop, t0, onhand, pending, None, rng,
                          forecast_steps=max(lam.shape[0] - 1, 1))
    for s in range(horizon):
        t = t0 + s
        ctx.week = t
        ctx.onhand = onhand
        ctx.current_prices = _trajectory_from(lam, s, ctx.forecast_steps)
        if planned is not None:
            a = planned[:, s]
        else:
            a = np.asarray(inner_policy.actions(ctx), dtype=float)
        arrivals = pending[t]
        pre = onhand + arrivals
        D = ext_pop.demand[:, t]
        fulfilled = np.minimum(D, pre)
        onhand = np.maximum(pre - D, 0.0)
        leads = ext_pop.lead_time[:, t]
        for v in np.unique(leads):
            due = t + max(int(v), 1)
            if due < n_slots:
                pending[due] = pending[due] + a * (leads == v)
        agg_storage[s] = float((ext_pop.w * onhand).sum())
        agg_inbound[s] = float((ext_pop.u * arrivals).sum())
        reward += discount ** s * float(
            (ext_pop.price[:, t] * fulfilled - ext_pop.cost[:, t] * a).sum())
    return agg_storage, agg_inbound, reward


def _extend_population(pop: Population, snap: Snapshot, horizon: int,
                       demand_future: np.ndarray) -> Population:
    """History up to the snapshot week plus forecasted exogenous columns."""
    t0 = snap.week
    T = pop.horizon
    need = t0 + horizon

    def extend(mat, future=None):
        if need <= T and future is None:
            return mat[:, :need]
        hist = mat[:, :min(t0, T)]
        if future is None:
            last = mat[:, min(max(t0 - 1, 0), T - 1)][:, None]
            future_block = np.repeat(last, horizon, axis=1)
        else:
            future_block = future
        return np.concatenate([hist, future_block], axis=1)

    return Population(
        demand=np.concatenate([pop.demand[:, :t0], demand_future], axis=1),
        price=extend(pop.price) if need > T else pop.price[:, :need],
        cost=extend(pop.cost) if need > T else pop.cost[:, :need],
        lead_time=(extend(pop.lead_time).astype(int) if need > T
                   else pop.lead_time[:, :need]),
        w=pop.w, u=pop.u)


def _demand_samples(pop: Population, snap: Snapshot, cfg: DualSearchConfig,
                    rng: np.random.Generator) -> np.ndarray | None:
    """(n_samples, n, H) demand paths over the planning window."""
    t0, H = snap.week, cfg.horizon
    T = pop.horizon
    if cfg.demand_mode == "oracle":
        idx = np.minimum(np.arange(t0, t0 + H), T - 1)
        return pop.demand[:, idx][None, :, :]
    window = pop.demand[:, max(0, t0 - cfg.window):t0]
    if window.shape[1] == 0:
        return None  # no history yet: dual search degenerates to zero prices
    n = pop.n
    idx = rng.integers(0, window.shape[1], size=(cfg.samples, n, H))
    return np.take_along_axis(window[None, :, :], idx, axis=2)


def dual_search(pop: Population, cap: CapacityPath, snap: Snapshot,
                cfg: DualSearchConfig, inner_policy=None,
                rng: np.random.Generator | None = None,
                warm: np.ndarray | None = None):
    """Projected dual ascent over the next H weeks' capacity prices.

    Returns (lam (H, 2), lagrangian value at the final prices). The value is
    mean-over-samples of discounted reward plus sum_s lam_s . (K_s - usage_s).
    """
    rng = rng or np.random.default_rng(0)
    inner_policy = inner_policy or BaseStockPolicy()
    H = cfg.horizon
    t0 = snap.week
    T = pop.horizon
    limit_idx = np.minimum(np.arange(t0, t0 + H), T - 1)
    K = np.stack([cap.storage_limit[limit_idx], cap.inbound_limit[limit_idx]], axis=1)

    lam = np.zeros((H, 2)) if warm is None else np.array(warm, dtype=float).reshape(H, 2)
    samples = _demand_samples(pop, snap, cfg, rng)
    if samples is None:
        return lam * 0.0, 0.0

    ext_pops = [_extend_population(pop, snap, H, samples[j])
                for j in range(samples.shape[0])]
    ref_price = pop.reference_price()
    eps = 1e-9
    if cfg.step_size is not None:
        eta = np.array([cfg.step_size, cfg.step_size])
    else:
        eta = np.array([ref_price / (K[:, 0].mean() + eps + 1.0),
                        ref_price / (K[:, 1].mean() + eps + 1.0)])
    limit_scale = np.maximum(K.mean(axis=0), 1.0)

    planned_fn = getattr(inner_policy, "plan", None)
    # Common random numbers: fix per-sample seeds so usage is a deterministic
    # function of the prices across ascent iterations.
    sim_seeds = rng.integers(2 ** 63, size=len(ext_pops))

    def usage(lam_now):
        agg_I = np.zeros((len(ext_pops), H))
        agg_J = np.zeros((len(ext_pops), H))
        rewards = np.zeros(len(ext_pops))
        for j, ext in enumerate(ext_pops):
            planned = planned_fn(ext, snap, H, lam_now) if planned_fn else None
            agg_I[j], agg_J[j], rewards[j] = simulate_horizon(
                ext, snap, H, lam_now, inner_policy,
                np.random.default_rng(sim_seeds[j]),
                discount=cfg.discount, planned=planned)
        return agg_I.mean(axis=0), agg_J.mean(axis=0), rewards.mean()

    for k in range(cfg.steps):
        agg_I, agg_J, _ = usage(lam)
        if not (np.all(np.isfinite(agg_I)) and np.all(np.isfinite(agg_J))):
            raise NumericFault("non-finite residuals in dual search")
        residual = np.stack([agg_I - K[:, 0], agg_J - K[:, 1]], axis=1)
        step = eta / (1.0 + cfg.decay * k)
        new_lam = np.maximum(lam + step * residual, 0.0)
        delta = np.abs(new_lam - lam).max()
        lam = new_lam
        if delta < cfg.tol * ref_price:
            break

    agg_I, agg_J, reward = usage(lam)
    gamma_pow = cfg.discount ** np.arange(H)
    value = reward + float((gamma_pow * lam[:, 0] * (K[:, 0] - agg_I)).sum()
                           + (gamma_pow * lam[:, 1] * (K[:, 1] - agg_J)).sum())
    return lam, value


def mpc_coordinate(pop: Population, cap: CapacityPath, snap: Snapshot,
                   cfg: DualSearchConfig, inner_policy=None,
                   rng: np.random.Generator | None = None,
                   warm: np.ndarray | None = None) -> PriceTrajectory:
    """One MPC announcement: dual search then first-H-entries trajectory."""
    lam, _ = dual_search(pop, cap, snap, cfg, inner_policy, rng, warm)
    return PriceTrajectory(current=lam[0].copy(), forecast=lam[1:].copy())


class MPCCoordinator:
    """Receding-horizon dual-cost search with warm-started prices."""

    def __init__(self, cfg: DualSearchConfig | None = None, inner_policy=None,
                 seed: int = 0):
        self.cfg = cfg or DualSearchConfig()
        self.inner_policy = inner_policy or BaseStockPolicy()
        self.rng = np.random.default_rng(seed)
        self._warm: np.ndarray | None = None

    def reset(self) -> None:
        self._warm = None

    def announce(self, ctx: RolloutContext) -> PriceTrajectory:
        snap = snapshot_from_ctx(ctx)
        lam, _ = dual_search(ctx.pop, ctx.cap, snap, self.cfg,
                             self.inner_policy, self.rng, warm=self._warm)
        # shift one week for next announcement's warm start
        self._warm = np.vstack([lam[1:], lam[-1:]])
        traj = _pad_to_steps(lam, ctx.forecast_steps)
        return traj


def _pad_to_steps(lam: np.ndarray, forecast_steps: int) -> PriceTrajectory:
    H = lam.shape[0]
    if H - 1 == forecast_steps:
        return PriceTrajectory(current=lam[0].copy(), forecast=lam[1:].copy())
    idx = np.minimum(np.arange(1, forecast_steps + 1), H - 1)
    return PriceTrajectory(current=lam[0].copy(), forecast=lam[idx].copy())


class GridBestResponsePlanner:
    """Exact per-product best response over a discrete action grid.

    Only usable at tiny scale (grid^H sequences per product); serves as the
    inner maximizer for oracle comparisons of the dual search.
    """

    def __init__(self, grid=(0.0, 1.0, 2.0, 3.0), discount: float = 1.0):
        self.grid = tuple(float(g) for g in grid)
        self.discount = discount

    def plan(self, ext_pop: Population, snap: Snapshot, horizon: int,
             lam: np.ndarray) -> np.ndarray:
        n = ext_pop.n
        actions = np.zeros((n, horizon))
        for i in range(n):
            actions[i] = self._best_single(ext_pop, snap, horizon, lam, i)
        return actions

    def _best_single(self, ext_pop, snap, horizon, lam, i) -> np.ndarray:
        t0 = snap.week
        best_val, best_seq = -np.inf, None
        for seq in itertools.product(self.grid, repeat=horizon):
            val = self._value(ext_pop, snap, horizon, lam, i, seq)
            if val > best_val:
                best_val, best_seq = val, seq
        return np.array(best_seq)

    def _value(self, ext_pop, snap, horizon, lam, i, seq) -> float:
        t0 = snap.week
        slots = ext_pop.horizon + int(ext_pop.lead_time.max()) + 1
        pending = np.zeros(slots)
        upto = min(snap.pending.shape[1], slots)
        pending[:upto] = snap.pending[i, :upto]
        onhand = snap.onhand[i]
        total = 0.0
        for s in range(horizon):
            t = t0 + s
            arrivals = pending[t]
            pre = onhand + arrivals
            D = ext_pop.demand[i, t]
            fulfilled = min(D, pre)
            onhand = max(pre - D, 0.0)
            due = t + max(int(ext_pop.lead_time[i, t]), 1)
            if due < slots:
                pending[due] += seq[s]
            r = (ext_pop.price[i, t] * fulfilled - ext_pop.cost[i, t] * seq[s]
                 - lam[s, 0] * ext_pop.w[i] * onhand
                 - lam[s, 1] * ext_pop.u[i] * arrivals)
            total += self.discount ** s * r
        return total


@dataclass
class NeuralCoordinatorConfig:
    hidden: tuple[int, ...] = (24, 24)
    forecast_steps: int = 4
    output_scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise ContractViolation("all widths must be >= 1")
        if self.forecast_steps < 1:
            raise ContractViolation("forecast_steps must be >= 1")


@dataclass
class CoordinatorNorms:
    """Population-level scales that keep coordinator features near unit size."""

    storage_demand: float = 1.0
    inbound_demand: float = 1.0
    price: float = 1.0
    lam_storage: float = 1.0
    lam_inbound: float = 1.0

    @classmethod
    def from_population(cls, pop: Population) -> "CoordinatorNorms":
        eps = 1e-9
        price = pop.reference_price()
        return cls(
            storage_demand=pop.mean_weekly_storage_demand() + eps,
            inbound_demand=pop.mean_weekly_inbound_demand() + eps,
            price=price + eps,
            lam_storage=price / (pop.w.mean() + eps) + eps,
            lam_inbound=price / (pop.u.mean() + eps) + eps)


def coordinator_feature_names(forecast_steps: int) -> list[str]:
    names = ["agg_storage", "agg_inbound_lag", "agg_orders_lag",
             "agg_demand_lag", "agg_demand_trail", "inventory_after_drain",
             "headroom_now", "phase_sin", "phase_cos", "mean_price",
             "lam_storage_lag", "lam_inbound_lag"]
    names += [f"storage_limit_l{l}" for l in range(forecast_steps + 1)]
    names += [f"inbound_limit_l{l}" for l in range(forecast_steps + 1)]
    return names


def coordinator_feature_columns(ctx: RolloutContext, norms: CoordinatorNorms,
                                forecast_steps: int) -> list:
    """Scalar aggregate features; endogenous entries stay taped."""
    t = ctx.week
    pop = ctx.pop
    T = pop.horizon
    cur_storage = tp.mul(tp.total(tp.mul(pop.w, ctx.onhand)), 1.0 / norms.storage_demand)
    inbound_lag = (tp.mul(ctx.agg_inbound_hist[-1], 1.0 / norms.inbound_demand)
                   if ctx.agg_inbound_hist else 0.0)
    orders_lag = (tp.mul(ctx.agg_orders_hist[-1], 1.0 / norms.inbound_demand)
                  if ctx.agg_orders_hist else 0.0)
    w_demand = (pop.w[:, None] * pop.demand)
    demand_lag = float(w_demand[:, t - 1].sum() / norms.storage_demand) if t >= 1 else 0.0
    trail_weeks = w_demand[:, max(0, t - 4):t]
    demand_trail = (float(trail_weeks.sum(axis=0).mean() / norms.storage_demand)
                    if trail_weeks.shape[1] else 0.0)
    drained = tp.sub(cur_storage, forecast_steps * demand_trail)
    limit_idx = np.minimum(np.arange(t, t + forecast_steps + 1), T - 1)
    k1 = ctx.cap.storage_limit[limit_idx] / norms.storage_demand
    k2 = ctx.cap.inbound_limit[limit_idx] / norms.inbound_demand
    headroom = tp.sub(cur_storage, float(k1[0]))
    phase = 2 * np.pi * (t % 52) / 52.0
    wsum = pop.demand[:, t].sum()
    mean_price = float((pop.price[:, t] * pop.demand[:, t]).sum()
                       / (wsum * norms.price)) if wsum > 0 else 1.0
    if ctx.price_history:
        prev = ctx.price_history[-1].current
        if isinstance(prev, Var):
            lam1_lag = tp.mul(tp.take(prev, 0), 1.0 / norms.lam_storage)
            lam2_lag = tp.mul(tp.take(prev, 1), 1.0 / norms.lam_inbound)
        else:
            lam1_lag = float(prev[0]) / norms.lam_storage
            lam2_lag = float(prev[1]) / norms.lam_inbound
    else:
        lam1_lag = lam2_lag = 0.0
    cols = [cur_storage, inbound_lag, orders_lag, demand_lag, demand_trail,
            drained, headroom, np.sin(phase), np.cos(phase), mean_price,
            lam1_lag, lam2_lag]
    cols += [float(v) for v in k1]
    cols += [float(v) for v in k2]
    return cols


class NeuralCoordinator:
    """MLP forecaster of capacity prices over aggregate features."""

    def __init__(self, cfg: NeuralCoordinatorConfig | None = None,
                 params: ParamVector | None = None, seed: int = 0,
                 norms: CoordinatorNorms | None = None):
        self.cfg = cfg or NeuralCoordinatorConfig()
        self.in_dim = len(coordinator_feature_names(self.cfg.forecast_steps))
        self.out_dim = 2 * (self.cfg.forecast_steps + 1)
        self.n_layers = len(self.cfg.hidden) + 1
        self.params = params if params is not None else init_mlp_params(
            self.in_dim, self.cfg.hidden, self.out_dim,
            np.random.default_rng(seed))
        self.norms = norms
        self._tape = None
        self._leaves: dict | None = None

    def calibrate(self, pop: Population) -> None:
        self.norms = CoordinatorNorms.from_population(pop)

    def _weights(self, ctx: RolloutContext) -> dict:
        if ctx.tape is None:
            return {name: self.params.view(name) for name, _ in self.params.layout}
        if self._tape is not ctx.tape:
            self._tape = ctx.tape
            self._leaves = param_leaves(ctx.tape, self.params)
        return self._leaves

    def announce(self, ctx: RolloutContext) -> PriceTrajectory:
        if self.norms is None:
            self.calibrate(ctx.pop)
        L = self.cfg.forecast_steps
        cols = coordinator_feature_columns(ctx, self.norms, L)
        feats = tp.column_stack(cols)
        if not np.all(np.isfinite(value_of(feats))):
            raise NumericFault(f"non-finite coordinator features at week {ctx.week}")
        out = mlp_forward(feats, self._weights(ctx), self.n_layers)
        vec = tp.softplus(tp.reshape(out, (self.out_dim,)))
        scale = np.tile(np.asarray(self.cfg.output_scale, dtype=float), L + 1)
        vec = tp.mul(vec, scale)
        current = tp.take(vec, np.array([0, 1]))
        forecast = tp.reshape(tp.take(vec, np.arange(2, self.out_dim)), (L, 2))
        if ctx.tape is None:
            current, forecast = value_of(current), value_of(forecast)
        return PriceTrajectory(current=current, forecast=forecast)


def neural_coordinate(ctx: RolloutContext, params: ParamVector,
                      cfg: NeuralCoordinatorConfig | None = None,
                      norms: CoordinatorNorms | None = None) -> PriceTrajectory:
    """Functional form of the neural announcement (one week)."""
    coord = NeuralCoordinator(cfg, params=params, norms=norms)
    return coord.announce(ctx)
