"""Buying policies: capacity-price-aware base stock and a neural MLP policy.

Both consume only the product's own history up to week t-1 plus the
coordinator's current announcement, so week-t actions are causal by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .idp_core import ContractViolation, RolloutContext
from .tape import ParamVector, Var, param_leaves, value_of

TRAILING_WINDOW = 8  # weeks used for the running demand scale


def demand_scale(ctx: RolloutContext) -> np.ndarray:
    """Per-product running scale: trailing mean demand + 1."""
    t = ctx.week
    window = ctx.pop.demand[:, max(0, t - TRAILING_WINDOW):t]
    if window.shape[1] == 0:
        return np.ones(ctx.n)
    return window.mean(axis=1) + 1.0


def inflight_units(ctx: RolloutContext):
    """Units in flight after this week's arrivals (taped when rolling taped)."""
    pos = 0.0
    for s in range(ctx.week + 1, len(ctx.pending)):
        pos = tp.add(pos, ctx.pending[s])
    if np.ndim(value_of(pos)) == 0:
        return np.zeros(ctx.n)
    return pos


POLICY_FEATURE_NAMES = [
    "onhand", "inflight", "demand_lag1", "demand_lag2", "trail_mean",
    "margin", "lead", "phase_sin", "phase_cos",
    "cost_storage_now", "cost_inbound_now", "cost_storage_ahead",
]


def policy_feature_columns(ctx: RolloutContext) -> list:
    """Normalized per-product feature columns for the neural policy."""
    t = ctx.week
    pop = ctx.pop
    scale = demand_scale(ctx)
    inv = 1.0 / scale
    lag1 = pop.demand[:, t - 1] if t >= 1 else np.zeros(ctx.n)
    lag2 = pop.demand[:, t - 2] if t >= 2 else np.zeros(ctx.n)
    window = pop.demand[:, max(0, t - TRAILING_WINDOW):t]
    trail = window.mean(axis=1) if window.shape[1] else np.zeros(ctx.n)
    p = pop.price[:, t]
    c = pop.cost[:, t]
    safe_p = np.where(p > 0, p, 1.0)
    margin = np.where(p > 0, (p - c) / safe_p, 0.0)
    phase = 2 * np.pi * (t % 52) / 52.0

    traj = ctx.current_prices
    lam = traj.current
    if isinstance(lam, Var):
        lam1 = tp.take(lam, 0)
        lam2 = tp.take(lam, 1)
    else:
        lam1, lam2 = float(lam[0]), float(lam[1])
    fc = traj.forecast
    if isinstance(fc, Var):
        size = int(np.size(value_of(fc)))
        storage_fc = tp.take(tp.reshape(fc, (size,)), np.arange(0, size, 2))
        ahead = tp.mul(tp.total(storage_fc), 1.0 / max(traj.steps, 1))
    else:
        ahead = float(traj.forecast_values()[:, 0].mean()) if traj.steps else 0.0

    return [
        tp.mul(ctx.onhand, inv),
        tp.mul(inflight_units(ctx), inv),
        lag1 * inv,
        lag2 * inv,
        trail * inv,
        margin,
        pop.lead_time[:, t] / 5.0,
        np.full(ctx.n, np.sin(phase)),
        np.full(ctx.n, np.cos(phase)),
        tp.mul(lam1, pop.w / safe_p),
        tp.mul(lam2, pop.u / safe_p),
        tp.mul(ahead, pop.w / safe_p),
    ]


@dataclass
class BaseStockConfig:
    forecast_window: int = 13
    service_floor: float = 0.30
    service_ceiling: float = 0.95
    bootstrap_samples: int = 128

    def __post_init__(self):
        if not 0 < self.service_floor <= self.service_ceiling < 1:
            raise ContractViolation("need 0 < floor <= ceiling < 1")
        if self.forecast_window < 1 or self.bootstrap_samples < 1:
            raise ContractViolation("window and sample count must be >= 1")


class BaseStockPolicy:
    """Order-up-to rule with a capacity-cost-inflated critical fractile.

    Effective unit cost adds the current inbound price and the announced
    storage prices over the planning window; the target is the q-quantile of
    bootstrapped lead-time demand from the trailing window.
    """

    differentiable = False

    def __init__(self, cfg: BaseStockConfig | None = None):
        self.cfg = cfg or BaseStockConfig()

    def actions(self, ctx: RolloutContext) -> np.ndarray:
        cfg = self.cfg
        t = ctx.week
        pop = ctx.pop
        lam = ctx.current_prices.current_values()
        fc = ctx.current_prices.forecast_values()
        lam1_sum = lam[0] + (fc[:, 0].sum() if fc.size else 0.0)
        c_eff = pop.cost[:, t] + pop.u * lam[1] + pop.w * lam1_sum
        p = pop.price[:, t]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(p > 0, (p - c_eff) / np.where(p > 0, p, 1.0),
                            cfg.service_floor)
        q = np.clip(frac, cfg.service_floor, cfg.service_ceiling)

        window = pop.demand[:, max(0, t - cfg.forecast_window):t]
        if window.shape[1] == 0:
            target = np.zeros(ctx.n)  # cold start: no history, no target
        else:
            target = self._lead_time_quantile(ctx, window, q)

        position = np.asarray(value_of(ctx.pipeline_position()), dtype=float)
        return np.maximum(target - position, 0.0)

    def _lead_time_quantile(self, ctx: RolloutContext, window: np.ndarray,
                            q: np.ndarray) -> np.ndarray:
        # protection interval is lead time plus the one-week review period;
        # covering the lead time alone leaves no buffer and starves every
        # (v+1)-th week once orders phase-lock
        span = np.maximum(ctx.pop.lead_time[:, ctx.week], 1) + 1
        v_max = int(span.max())
        B = self.cfg.bootstrap_samples
        n, hist = window.shape
        idx = ctx.rng.integers(0, hist, size=(n, B, v_max))
        draws = np.take_along_axis(window[:, None, :], idx, axis=2)
        sums = draws.cumsum(axis=2)
        lead_sums = sums[np.arange(n), :, span - 1]
        order = np.sort(lead_sums, axis=1)
        pick = np.clip(np.round(q * (B - 1)).astype(int), 0, B - 1)
        return order[np.arange(n), pick]


def base_stock_action(ctx: RolloutContext, cfg: BaseStockConfig | None = None):
    """Functional form of the base-stock rule (one week's actions)."""
    return BaseStockPolicy(cfg).actions(ctx)


@dataclass
class NeuralPolicyConfig:
    hidden: tuple[int, ...] = (16, 16)
    scale_by_demand: bool = False

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise ContractViolation("all widths must be >= 1")


def mlp_layout(in_dim: int, hidden: tuple[int, ...], out_dim: int,
               prefix: str = "") -> list[tuple[str, tuple[int, ...]]]:
    dims = [in_dim, *hidden, out_dim]
    layout = []
    for i in range(len(dims) - 1):
        layout.append((f"{prefix}W{i}", (dims[i], dims[i + 1])))
        layout.append((f"{prefix}b{i}", (dims[i + 1],)))
    return layout


def init_mlp_params(in_dim: int, hidden: tuple[int, ...], out_dim: int,
                    rng: np.random.Generator, prefix: str = "") -> ParamVector:
    layout = mlp_layout(in_dim, hidden, out_dim, prefix)
    pv = ParamVector.build(layout)
    for name, shape in layout:
        if name.startswith(f"{prefix}W"):
            fan_in = shape[0]
            pv.view(name)[...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
    return pv


def mlp_forward(x, weights: dict, n_layers: int, prefix: str = ""):
    """Tanh-hidden MLP; returns the pre-transform output matrix."""
    h = x
    for i in range(n_layers):
        h = tp.add(tp.matmul(h, weights[f"{prefix}W{i}"]), weights[f"{prefix}b{i}"])
        if i < n_layers - 1:
            h = tp.tanh(h)
    return h


class NeuralPolicy:
    """MLP over normalized features with a softplus output, one action each."""

    differentiable = True

    def __init__(self, cfg: NeuralPolicyConfig | None = None,
                 params: ParamVector | None = None, seed: int = 0):
        self.cfg = cfg or NeuralPolicyConfig()
        self.in_dim = len(POLICY_FEATURE_NAMES)
        self.n_layers = len(self.cfg.hidden) + 1
        self.params = params if params is not None else init_mlp_params(
            self.in_dim, self.cfg.hidden, 1, np.random.default_rng(seed))
        self._tape = None
        self._leaves: dict | None = None

    def _weights(self, ctx: RolloutContext) -> dict:
        if ctx.tape is None:
            return {name: self.params.view(name) for name, _ in self.params.layout}
        if self._tape is not ctx.tape:
            self._tape = ctx.tape
            self._leaves = param_leaves(ctx.tape, self.params)
        return self._leaves

    def actions(self, ctx: RolloutContext):
        cols = policy_feature_columns(ctx)
        feats = value_of(tp.column_stack(cols)) if ctx.tape is None else tp.column_stack(cols)
        if not np.all(np.isfinite(value_of(feats))):
            raise tp.NumericFault(f"non-finite policy features at week {ctx.week}")
        out = mlp_forward(feats, self._weights(ctx), self.n_layers)
        act = tp.softplus(tp.reshape(out, (ctx.n,)))
        if self.cfg.scale_by_demand:
            act = tp.mul(act, demand_scale(ctx))
        return act


def neural_action(ctx: RolloutContext, params: ParamVector,
                  cfg: NeuralPolicyConfig | None = None):
    """Functional form of the neural policy (one week's actions)."""
    policy = NeuralPolicy(cfg, params=params)
    return policy.actions(ctx)


class ScalarOrderPolicy:
    """Single-parameter policy: order theta at week 0, nothing afterwards.

    Used for closed-form training checks at tiny scale.
    """

    differentiable = True

    def __init__(self, params: ParamVector | None = None):
        self.params = params if params is not None else ParamVector.build(
            [("theta", (1,))])
        self._tape = None
        self._leaves = None

    def actions(self, ctx: RolloutContext):
        if ctx.week != 0:
            return np.zeros(ctx.n)
        if ctx.tape is None:
            theta = float(self.params.view("theta")[0])
            return np.full(ctx.n, max(theta, 0.0))
        if self._tape is not ctx.tape:
            self._tape = ctx.tape
            self._leaves = param_leaves(ctx.tape, self.params)
        theta = self._leaves["theta"]
        return tp.max0(tp.mul(tp.take(theta, 0), np.ones(ctx.n)))
