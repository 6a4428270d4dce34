"""Exogenous-process containers and the shared inventory/reward dynamics.

Per-week dynamics (lost-sales convention): arrivals land at the start of the
week, demand is fulfilled from on-hand stock, unmet demand is lost, and the
order placed this week joins the pipeline at week + lead_time. Orders due
after the horizon are dropped from reward and constraint accounting but kept
in the ledger's overflow column so units are never silently destroyed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .tape import NumericFault, Var, value_of


class ContractViolation(ValueError):
    """An input breaks a documented precondition."""


class HorizonError(IndexError):
    """A week index falls outside [0, T)."""


@dataclass
class ExoSeries:
    """One product's exogenous path: demand, economics, lead times, weights."""

    demand: np.ndarray
    price: np.ndarray
    cost: np.ndarray
    lead_time: np.ndarray
    storage_weight: float
    inbound_weight: float

    def __post_init__(self):
        self.demand = np.asarray(self.demand, dtype=float)
        self.price = np.asarray(self.price, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        lead = np.asarray(self.lead_time)
        if not np.all(lead == np.floor(lead)):
            raise ContractViolation("lead_time values must be integers")
        self.lead_time = lead.astype(int)
        T = self.demand.shape[0]
        for name in ("price", "cost", "lead_time"):
            if getattr(self, name).shape != (T,):
                raise ContractViolation(f"{name} must have length {T}")
        for name in ("demand", "price", "cost", "lead_time"):
            if np.any(getattr(self, name) < 0):
                raise ContractViolation(f"{name} must be nonnegative")
        if self.storage_weight < 0 or self.inbound_weight < 0:
            raise ContractViolation("weights must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.demand.shape[0]


@dataclass
class InventoryState:
    """On-hand units plus in-flight orders keyed by arrival week."""

    onhand: float = 0.0
    pipeline: dict[int, float] = field(default_factory=dict)

    def validate(self, week: int) -> None:
        if self.onhand < 0:
            raise ContractViolation("onhand must be nonnegative")
        for arrival, qty in self.pipeline.items():
            if qty < 0:
                raise ContractViolation("pipeline quantities must be nonnegative")
            if arrival <= week - 1:
                raise ContractViolation("pipeline keys must be future weeks")

    def position(self) -> float:
        return self.onhand + sum(self.pipeline.values())


@dataclass
class CapacityPath:
    """Per-week storage and inbound limits (the constraint sequence G)."""

    storage_limit: np.ndarray
    inbound_limit: np.ndarray

    def __post_init__(self):
        self.storage_limit = np.asarray(self.storage_limit, dtype=float)
        self.inbound_limit = np.asarray(self.inbound_limit, dtype=float)
        if self.storage_limit.shape != self.inbound_limit.shape:
            raise ContractViolation("limit arrays must share length")
        if np.any(self.storage_limit < 0) or np.any(self.inbound_limit < 0):
            raise ContractViolation("limits must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.storage_limit.shape[0]


@dataclass
class PriceTrajectory:
    """Current capacity prices plus an L-step forecast.

    ``current`` is a length-2 vector (storage, inbound); ``forecast`` is
    (L, 2). Either may be a taped Var when emitted by a neural coordinator.
    """

    current: object
    forecast: object

    def current_values(self) -> np.ndarray:
        return np.asarray(value_of(self.current), dtype=float).reshape(2)

    def forecast_values(self) -> np.ndarray:
        arr = np.asarray(value_of(self.forecast), dtype=float)
        return arr.reshape(-1, 2)

    @property
    def steps(self) -> int:
        return self.forecast_values().shape[0]

    def validate(self) -> None:
        if np.any(self.current_values() < 0) or np.any(self.forecast_values() < 0):
            raise ContractViolation("capacity prices must be nonnegative")

    def announcement_tuple(self) -> tuple:
        """Literal announcement with the current pair echoed before the forecast."""
        cur = self.current_values()
        fc = self.forecast_values()
        return tuple(np.concatenate([cur, cur, fc.ravel()]))


@dataclass
class StepRecord:
    """One product-week row of the ledger."""

    week: int
    action: float
    arrivals: float
    onhand_end: float
    fulfilled: float
    reward: float


def step(state: InventoryState, exo_week: dict, action: float, week: int,
         horizon: int | None = None):
    """Advance one product one week; returns (new state, StepRecord).

    ``exo_week`` carries this week's slice: demand, price, cost, lead_time.
    """
    if action < 0:
        raise ContractViolation("action must be nonnegative")
    if horizon is not None and week >= horizon:
        raise HorizonError(f"week {week} outside horizon {horizon}")
    state.validate(week)
    arrivals = state.pipeline.pop(week, 0.0)
    pre = state.onhand + arrivals
    demand = float(exo_week["demand"])
    fulfilled = min(demand, pre)
    onhand_end = max(pre - demand, 0.0)
    pipeline = dict(state.pipeline)
    if action > 0:
        # Arrivals precede ordering within a week, so effective lead is >= 1.
        due = week + max(int(exo_week["lead_time"]), 1)
        pipeline[due] = pipeline.get(due, 0.0) + action
    reward = float(exo_week["price"]) * fulfilled - float(exo_week["cost"]) * action
    new_state = InventoryState(onhand=onhand_end, pipeline=pipeline)
    record = StepRecord(week=week, action=float(action), arrivals=float(arrivals),
                        onhand_end=float(onhand_end), fulfilled=float(fulfilled),
                        reward=float(reward))
    return new_state, record


def penalized_reward(record: StepRecord, weights: tuple[float, float],
                     prices: PriceTrajectory | np.ndarray) -> float:
    """R - lam1 * w * I_t - lam2 * u * J_t for one product-week."""
    if isinstance(prices, PriceTrajectory):
        lam = prices.current_values()
    else:
        lam = np.asarray(prices, dtype=float).reshape(2)
    if np.any(lam < 0):
        raise ContractViolation("capacity prices must be nonnegative")
    w, u = weights
    return record.reward - lam[0] * w * record.onhand_end - lam[1] * u * record.arrivals


@dataclass
class RolloutLedger:
    """Per-product, per-week rollout record plus weekly aggregates."""

    action: np.ndarray          # (n, T)
    arrivals: np.ndarray
    onhand_end: np.ndarray
    fulfilled: np.ndarray
    reward: np.ndarray
    penalized: np.ndarray
    agg_storage: np.ndarray     # (T,)
    agg_inbound: np.ndarray
    prices: np.ndarray          # (T, 2) announced current prices
    forecasts: np.ndarray       # (T, L, 2) announced forecasts
    overflow: np.ndarray        # (n,) units ordered but due after T
    discount: float
    product_ids: list | None = None

    @property
    def n_products(self) -> int:
        return self.action.shape[0]

    @property
    def horizon(self) -> int:
        return self.action.shape[1]

    def discount_weights(self) -> np.ndarray:
        return self.discount ** np.arange(self.horizon)

    def objective(self) -> float:
        """Total discounted penalized reward, sum over products and weeks."""
        return float((self.penalized * self.discount_weights()).sum())

    def raw_total(self) -> float:
        return float((self.reward * self.discount_weights()).sum())

    def write_rows_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["product_id", "week", "action", "arrivals",
                             "onhand_end", "fulfilled", "reward",
                             "penalized_reward"])
            ids = self.product_ids or list(range(self.n_products))
            for i in range(self.n_products):
                for t in range(self.horizon):
                    writer.writerow([ids[i], t,
                                     f"{self.action[i, t]:.10g}",
                                     f"{self.arrivals[i, t]:.10g}",
                                     f"{self.onhand_end[i, t]:.10g}",
                                     f"{self.fulfilled[i, t]:.10g}",
                                     f"{self.reward[i, t]:.10g}",
                                     f"{self.penalized[i, t]:.10g}"])

    def write_aggregate_csv(self, path: str, cap: CapacityPath) -> None:
        L = self.forecasts.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["week", "agg_storage", "agg_inbound", "storage_limit",
                      "inbound_limit", "lambda_storage", "lambda_inbound"]
            header += [f"lambda_storage_l{l}" for l in range(1, L + 1)]
            header += [f"lambda_inbound_l{l}" for l in range(1, L + 1)]
            writer.writerow(header)
            for t in range(self.horizon):
                row = [t, f"{self.agg_storage[t]:.10g}",
                       f"{self.agg_inbound[t]:.10g}",
                       f"{cap.storage_limit[t]:.10g}",
                       f"{cap.inbound_limit[t]:.10g}",
                       f"{self.prices[t, 0]:.10g}",
                       f"{self.prices[t, 1]:.10g}"]
                row += [f"{self.forecasts[t, l, 0]:.10g}" for l in range(L)]
                row += [f"{self.forecasts[t, l, 1]:.10g}" for l in range(L)]
                writer.writerow(row)


@dataclass
class Population:
    """Stacked arrays for a list of ExoSeries (internal rollout layout)."""

    demand: np.ndarray       # (n, T)
    price: np.ndarray
    cost: np.ndarray
    lead_time: np.ndarray    # (n, T) int
    w: np.ndarray            # (n,)
    u: np.ndarray

    @classmethod
    def from_products(cls, products: list[ExoSeries]) -> "Population":
        if not products:
            raise ContractViolation("population must be nonempty")
        T = products[0].horizon
        if any(p.horizon != T for p in products):
            raise HorizonError("all products must share the horizon")
        return cls(
            demand=np.stack([p.demand for p in products]),
            price=np.stack([p.price for p in products]),
            cost=np.stack([p.cost for p in products]),
            lead_time=np.stack([p.lead_time for p in products]),
            w=np.array([p.storage_weight for p in products], dtype=float),
            u=np.array([p.inbound_weight for p in products], dtype=float),
        )

    @property
    def n(self) -> int:
        return self.demand.shape[0]

    @property
    def horizon(self) -> int:
        return self.demand.shape[1]

    def subset(self, idx) -> "Population":
        return Population(self.demand[idx], self.price[idx], self.cost[idx],
                          self.lead_time[idx], self.w[idx], self.u[idx])

    def mean_weekly_storage_demand(self) -> float:
        """Mean weekly aggregate demand volume (demand anchoring reference)."""
        return float((self.w[:, None] * self.demand).sum(axis=0).mean())

    def mean_weekly_inbound_demand(self) -> float:
        return float((self.u[:, None] * self.demand).sum(axis=0).mean())

    def reference_price(self) -> float:
        """Demand-weighted mean selling price."""
        wsum = self.demand.sum()
        if wsum <= 0:
            return float(self.price.mean())
        return float((self.price * self.demand).sum() / wsum)


@dataclass
class RolloutContext:
    """Week-by-week view handed to policies and coordinators."""

    pop: Population
    cap: CapacityPath
    week: int
    onhand: object                      # (n,) Var or array, end of week t-1
    pending: list                       # arrivals due per week (Var or array)
    current_prices: PriceTrajectory | None
    price_history: list
    action_history: list                # detached (n,) arrays, weeks < t
    agg_storage_hist: list              # Var/float per past week
    agg_inbound_hist: list
    agg_orders_hist: list               # u-weighted order totals per past week
    rng: np.random.Generator
    tape: object | None
    forecast_steps: int

    @property
    def n(self) -> int:
        return self.pop.n

    @property
    def horizon(self) -> int:
        return self.pop.horizon

    def pipeline_position(self):
        """On-hand plus everything still in flight (taped when rolling taped)."""
        pos = self.onhand
        for s in range(self.week, len(self.pending)):
            pos = tp.add(pos, self.pending[s])
        return pos


@dataclass
class RolloutResult:
    ledger: RolloutLedger
    objective: float
    taped: "TapedRollout | None" = None


@dataclass
class TapedRollout:
    """Taped scalars retained for training objectives."""

    objective: Var
    agg_storage: list       # per-week Vars (or floats when untaped inputs)
    agg_inbound: list
    prices: list            # per-week current price Vars/(2,) arrays
    forecasts: list         # per-week (L, 2)


class ZeroOrderPolicy:
    """Orders nothing; handy baseline and test stub."""

    def actions(self, ctx: RolloutContext):
        return np.zeros(ctx.n)


class FixedActionPolicy:
    """Replays a fixed (n, T) action matrix."""

    def __init__(self, actions: np.ndarray):
        self.matrix = np.asarray(actions, dtype=float)

    def actions(self, ctx: RolloutContext):
        return self.matrix[:, ctx.week]


class ZeroPriceCoordinator:
    """Announces zero prices forever (unconstrained runs)."""

    def __init__(self, forecast_steps: int = 4):
        self.forecast_steps = forecast_steps

    def announce(self, ctx: RolloutContext) -> PriceTrajectory:
        return PriceTrajectory(current=np.zeros(2),
                               forecast=np.zeros((self.forecast_steps, 2)))


def rollout(products, initial_inventory, policy, coordinator, path: CapacityPath,
            discount: float = 0.999, seed: int = 0,
            initial_pipeline: np.ndarray | None = None,
            tape=None, forecast_steps: int = 4) -> RolloutResult:
    """Run the penalized IDP for one exogenous draw.

    products: list[ExoSeries] or a prebuilt Population sharing horizon T.
    initial_inventory: (n,) starting on-hand units k^i.
    initial_pipeline: optional (n, V) units already in flight, column s
        arriving at week s.
    tape: record the run for reverse-mode differentiation when not None.
    """
    pop = products if isinstance(products, Population) else Population.from_products(products)
    n, T = pop.n, pop.horizon
    if path.horizon != T:
        raise HorizonError("capacity path horizon mismatch")
    k = np.broadcast_to(np.asarray(initial_inventory, dtype=float), (n,)).copy()
    if np.any(k < 0):
        raise ContractViolation("initial inventories must be nonnegative")

    max_lead = int(pop.lead_time.max()) if pop.lead_time.size else 0
    n_slots = T + max_lead + 1
    pending: list = [np.zeros(n) for _ in range(n_slots)]
    if initial_pipeline is not None:
        initial_pipeline = np.asarray(initial_pipeline, dtype=float)
        for s in range(min(initial_pipeline.shape[1], n_slots)):
            pending[s] = pending[s] + initial_pipeline[:, s]

    ctx = RolloutContext(pop=pop, cap=path, week=0, onhand=k, pending=pending,
                         current_prices=None, price_history=[], action_history=[],
                         agg_storage_hist=[], agg_inbound_hist=[], agg_orders_hist=[],
                         rng=np.random.default_rng(seed), tape=tape,
                         forecast_steps=forecast_steps)

    led_action = np.zeros((n, T))
    led_arrivals = np.zeros((n, T))
    led_onhand = np.zeros((n, T))
    led_fulfilled = np.zeros((n, T))
    led_reward = np.zeros((n, T))
    led_pen = np.zeros((n, T))
    agg_storage = np.zeros(T)
    agg_inbound = np.zeros(T)
    prices = np.zeros((T, 2))
    forecasts = np.zeros((T, forecast_steps, 2))

    objective = 0.0
    taped_prices: list = []
    taped_forecasts: list = []
    onhand = k if tape is None else tape.leaf(k)

    for t in range(T):
        ctx.week = t
        ctx.onhand = onhand
        traj = coordinator.announce(ctx)
        traj.validate()
        ctx.current_prices = traj
        ctx.price_history.append(traj)

        a = policy.actions(ctx)
        a_val = np.asarray(value_of(a), dtype=float)
        if not np.all(np.isfinite(a_val)):
            raise NumericFault(f"policy produced non-finite action at week {t}")
        if np.any(a_val < -1e-12):
            raise ContractViolation("policy produced a negative action")

        arrivals = pending[t]
        pre = tp.add(onhand, arrivals)
        D = pop.demand[:, t]
        fulfilled = tp.min2(D, pre)
        inv_end = tp.max0(tp.sub(pre, D))
        reward = tp.sub(tp.mul(pop.price[:, t], fulfilled),
                        tp.mul(pop.cost[:, t], a))

        lam = traj.current
        if isinstance(lam, Var):
            lam1 = tp.take(lam, 0)
            lam2 = tp.take(lam, 1)
        else:
            lam1, lam2 = float(lam[0]), float(lam[1])
        stored = tp.mul(pop.w, inv_end)
        inbound = tp.mul(pop.u, arrivals)
        pen = tp.sub(reward, tp.add(tp.mul(lam1, stored), tp.mul(lam2, inbound)))

        # Scatter this week's orders into the pipeline per lead-time group.
        leads = pop.lead_time[:, t]
        for v in np.unique(leads):
            mask = (leads == v).astype(float)
            due = t + max(int(v), 1)
            pending[due] = tp.add(pending[due], tp.mul(a, mask))

        st_tot = tp.total(stored)
        in_tot = tp.total(inbound)
        ctx.agg_storage_hist.append(st_tot)
        ctx.agg_inbound_hist.append(in_tot)
        ctx.agg_orders_hist.append(tp.total(tp.mul(pop.u, a)))
        objective = tp.add(objective, tp.mul(discount ** t, tp.total(pen)))

        led_action[:, t] = a_val
        led_arrivals[:, t] = value_of(arrivals)
        led_onhand[:, t] = value_of(inv_end)
        led_fulfilled[:, t] = value_of(fulfilled)
        led_reward[:, t] = value_of(reward)
        led_pen[:, t] = value_of(pen)
        agg_storage[t] = float(value_of(st_tot))
        agg_inbound[t] = float(value_of(in_tot))
        prices[t] = traj.current_values()
        fc = traj.forecast_values()
        steps = min(forecast_steps, fc.shape[0])
        forecasts[t, :steps] = fc[:steps]
        taped_prices.append(traj.current)
        taped_forecasts.append(traj.forecast)
        ctx.action_history.append(a_val)

        onhand = inv_end

    overflow = np.zeros(n)
    for s in range(T, n_slots):
        overflow += np.asarray(value_of(pending[s]), dtype=float)

    ledger = RolloutLedger(action=led_action, arrivals=led_arrivals,
                           onhand_end=led_onhand, fulfilled=led_fulfilled,
                           reward=led_reward, penalized=led_pen,
                           agg_storage=agg_storage, agg_inbound=agg_inbound,
                           prices=prices, forecasts=forecasts,
                           overflow=overflow, discount=discount)
    taped = None
    if tape is not None:
        taped = TapedRollout(objective=objective,
                             agg_storage=ctx.agg_storage_hist,
                             agg_inbound=ctx.agg_inbound_hist,
                             prices=taped_prices, forecasts=taped_forecasts)
    return RolloutResult(ledger=ledger, objective=float(value_of(objective)),
                         taped=taped)


def initial_state(pop: Population, mode: str, rng: np.random.Generator):
    """Initial inventories under the two backtest initialization protocols.

    "zero": empty warehouse, nothing in flight. "onhand_inflight": on-hand
    near one lead time of demand plus roughly one week of demand arriving
    over the first few weeks.
    """
    n = pop.n
    if mode == "zero":
        return np.zeros(n), None
    if mode != "onhand_inflight":
        raise ContractViolation(f"unknown initialization mode: {mode}")
    horizon = min(8, pop.horizon)
    mean_d = pop.demand[:, :horizon].mean(axis=1)
    lead0 = pop.lead_time[:, 0]
    onhand = mean_d * (lead0 + 1) * rng.uniform(0.6, 1.2, size=n)
    max_lead = int(lead0.max()) + 1
    inflight = np.zeros((n, max_lead))
    for i in range(n):
        due = rng.integers(0, lead0[i] + 1)
        inflight[i, due] = mean_d[i] * rng.uniform(0.4, 1.0)
    return onhand, inflight
