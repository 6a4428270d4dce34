"""Training loops: primal-dual buying-policy training, direct-backprop
coordinator training, and a small-scale imitation loop that fits the
coordinator to dual-search labels.

The policy trainer alternates gradient ascent on the teacher-forced penalized
objective with projected dual updates on per-path capacity prices. The
coordinator trainer backpropagates a violation + price-cost + forecast-error
objective through full rollouts against a fixed differentiable policy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .coordinators import (CoordinatorNorms, DualSearchConfig,
                           NeuralCoordinator, NeuralCoordinatorConfig,
                           dual_search, snapshot_from_ctx)
from .idp_core import (CapacityPath, ContractViolation, Population,
                       initial_state, rollout)
from .tape import NumericFault, ParamVector, Tape, backward_into, param_leaves, value_of

HISTORY_COLUMNS = ["iteration", "objective", "violation_storage",
                   "violation_inbound", "forecast_loss", "l1_cost"]


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.05
    lr_decay: float = 0.0
    dual_step: float = 1.0          # multiplier on the auto-scaled dual rate
    quad_weight: float | None = None  # augmented-violation weight, auto if None
    alpha: float | None = None        # coordinator violation weight, auto if None
    kappa: float | None = None        # coordinator price-cost weight, auto if None
    max_iters: int = 400
    tol: float = 1e-4
    window: int = 20
    discount: float = 0.999
    grad_clip: float = 5.0
    init_mode: str = "zero"
    forecast_steps: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_iters < 1 or self.window < 1:
            raise ContractViolation("batch size, iterations, window must be >= 1")
        if self.lr <= 0 or self.dual_step <= 0 or self.tol <= 0:
            raise ContractViolation("rates and tolerance must be positive")
        if not 0 < self.discount <= 1:
            raise ContractViolation("discount must be in (0, 1]")


@dataclass
class DualState:
    """Per-path capacity price trajectories maintained by the dual updates."""

    costs: list = field(default_factory=list)   # each (T, 2), >= 0

    @classmethod
    def zeros(cls, n_paths: int, horizon: int) -> "DualState":
        return cls(costs=[np.zeros((horizon, 2)) for _ in range(n_paths)])

    def validate(self) -> None:
        for c in self.costs:
            if np.any(c < 0):
                raise ContractViolation("dual costs must stay nonnegative")


@dataclass
class TrainResult:
    params: ParamVector
    dual_state: DualState | None
    history: list          # dict rows matching HISTORY_COLUMNS
    converged: bool


def write_history_csv(history: list, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, 0.0) for k in HISTORY_COLUMNS})


class _MovingAverage:
    """Converged when consecutive window means stop moving (relatively)."""

    def __init__(self, window: int, tol: float):
        self.window = window
        self.tol = tol
        self.values: list[float] = []

    def push(self, v: float) -> None:
        self.values.append(float(v))

    def settled(self) -> bool:
        w = self.window
        if len(self.values) < 2 * w:
            return False
        recent = np.mean(self.values[-w:])
        prior = np.mean(self.values[-2 * w:-w])
        return abs(recent - prior) <= self.tol * (abs(prior) + 1.0)


def _ascent_step(params: ParamVector, grad: np.ndarray, lr: float,
                 clip: float) -> None:
    norm = float(np.linalg.norm(grad))
    if not np.isfinite(norm):
        raise NumericFault("non-finite gradient")
    if clip > 0 and norm > clip:
        grad = grad * (clip / norm)
    params.values += lr * grad


def train_policy(pop: Population, paths: list[CapacityPath], cfg: TrainConfig,
                 policy=None) -> TrainResult:
    """Primal-dual training of a differentiable buying policy.

    Each iteration teacher-forces one path's current dual costs, ascends the
    policy on the penalized objective minus a quadratic violation term, then
    pushes that path's costs along the (projected) constraint residuals.
    Minibatch aggregates are scaled to population level before the limit
    comparison so limits keep their meaning at any batch size.
    """
    from .coordinators import TeacherForcingCoordinator
    from .policies import NeuralPolicy

    if not paths:
        raise ContractViolation("need at least one capacity path")
    policy = policy or NeuralPolicy()
    if not getattr(policy, "differentiable", False):
        raise ContractViolation("train_policy needs a tape-differentiable policy")
    n, T = pop.n, pop.horizon
    batch = min(cfg.batch_size, n)
    scale = n / batch
    rng = np.random.default_rng(cfg.seed)
    dual = DualState.zeros(len(paths), T)

    k_full, inflight_full = initial_state(pop, cfg.init_mode,
                                          np.random.default_rng(cfg.seed + 1))
    ref_price = pop.reference_price()
    # One objective scale for the whole run: typical weekly revenue volume.
    obj_scale = max(ref_price * float(pop.demand.mean()) * n * T, 1e-9)
    quad = cfg.quad_weight
    if quad is None:
        # Violations enter in squared volume units; normalize to revenue scale.
        vol = max(pop.mean_weekly_storage_demand(),
                  pop.mean_weekly_inbound_demand(), 1.0)
        quad = ref_price / vol

    history: list[dict] = []
    obj_ma = _MovingAverage(cfg.window, cfg.tol)
    viol_ma = _MovingAverage(cfg.window, cfg.tol)
    converged = False

    for it in range(cfg.max_iters):
        idx = rng.choice(n, size=batch, replace=False)
        j = int(rng.integers(len(paths)))
        path = paths[j]
        sub = pop.subset(idx)
        coord = TeacherForcingCoordinator(dual.costs[j], cfg.forecast_steps)

        tape = Tape()
        res = rollout(sub, k_full[idx], policy, coord, path,
                      discount=cfg.discount,
                      seed=int(rng.integers(2 ** 31)),
                      initial_pipeline=None if inflight_full is None
                      else inflight_full[idx],
                      tape=tape, forecast_steps=cfg.forecast_steps)
        taped = res.taped

        penalty = 0.0
        for t in range(T):
            over_i = tp.max0(tp.sub(tp.mul(scale, taped.agg_storage[t]),
                                    float(path.storage_limit[t])))
            over_j = tp.max0(tp.sub(tp.mul(scale, taped.agg_inbound[t]),
                                    float(path.inbound_limit[t])))
            penalty = tp.add(penalty, tp.add(tp.square(over_i), tp.square(over_j)))
        objective = tp.mul(tp.sub(tp.mul(scale, taped.objective),
                                  tp.mul(quad, penalty)), 1.0 / obj_scale)

        policy.params.zero_grad()
        # The rollout already registered the policy's leaves on this tape.
        backward_into(tape, objective, policy.params, policy._leaves)
        lr = cfg.lr / (1.0 + cfg.lr_decay * it)
        _ascent_step(policy.params, policy.params.grads.copy(), lr, cfg.grad_clip)

        led = res.ledger
        usage_i = led.agg_storage * scale
        usage_j = led.agg_inbound * scale
        resid = np.stack([usage_i - path.storage_limit,
                          usage_j - path.inbound_limit], axis=1)
        eta = cfg.dual_step * np.array(
            [ref_price / (path.storage_limit.mean() + 1.0),
             ref_price / (path.inbound_limit.mean() + 1.0)])
        dual.costs[j] = np.maximum(dual.costs[j] + eta * resid, 0.0)

        viol_i = float(np.maximum(usage_i - path.storage_limit, 0.0).sum())
        viol_j = float(np.maximum(usage_j - path.inbound_limit, 0.0).sum())
        obj_val = float(value_of(objective))
        if not np.isfinite(obj_val):
            raise NumericFault(f"non-finite objective at iteration {it}")
        history.append({"iteration": it, "objective": obj_val,
                        "violation_storage": viol_i,
                        "violation_inbound": viol_j,
                        "forecast_loss": 0.0,
                        "l1_cost": float(sum(c.sum() for c in dual.costs))})
        obj_ma.push(obj_val)
        viol_ma.push(viol_i + viol_j)
        if obj_ma.settled() and viol_ma.settled():
            converged = True
            break

    dual.validate()
    return TrainResult(params=policy.params, dual_state=dual,
                       history=history, converged=converged)


@dataclass
class CoordinatorObjective:
    """The four logged terms of one coordinator training pass."""

    quad_storage: float
    quad_inbound: float
    l1_cost: float
    forecast_loss: float

    def total(self) -> float:
        return (self.quad_storage + self.quad_inbound
                + self.l1_cost + self.forecast_loss)


def coordinator_loss(taped, cap: CapacityPath, alpha: float, kappa: float,
                     forecast_steps: int):
    """Taped scalar: violation penalties + price cost + forecast error.

    Returns (loss Var, CoordinatorObjective of the detached per-term values).
    The detached terms sum to the taped scalar exactly.
    """
    T = len(taped.agg_storage)
    L = forecast_steps
    quad_i = 0.0
    quad_j = 0.0
    l1 = 0.0
    fl = 0.0
    for t in range(T):
        over_i = tp.max0(tp.sub(taped.agg_storage[t], float(cap.storage_limit[t])))
        over_j = tp.max0(tp.sub(taped.agg_inbound[t], float(cap.inbound_limit[t])))
        quad_i = tp.add(quad_i, tp.mul(alpha, tp.square(over_i)))
        quad_j = tp.add(quad_j, tp.mul(alpha, tp.square(over_j)))
        l1 = tp.add(l1, tp.mul(kappa, tp.total(taped.prices[t])))
        for s in range(1, min(L, t) + 1):
            fc = taped.forecasts[t - s]
            fc_flat = tp.reshape(fc, (L * 2,))
            pred = tp.take(fc_flat, np.array([2 * (s - 1), 2 * (s - 1) + 1]))
            diff = tp.sub(taped.prices[t], pred)
            fl = tp.add(fl, tp.total(tp.square(diff)))
    loss = tp.add(tp.add(quad_i, quad_j), tp.add(l1, fl))
    terms = CoordinatorObjective(
        quad_storage=float(value_of(quad_i)),
        quad_inbound=float(value_of(quad_j)),
        l1_cost=float(value_of(l1)),
        forecast_loss=float(value_of(fl)))
    return loss, terms


def train_coordinator(pop: Population, path_sampler, policy,
                      cfg: TrainConfig,
                      coordinator: NeuralCoordinator | None = None) -> TrainResult:
    """Direct backprop through full rollouts against a fixed buying policy.

    ``path_sampler(seed)`` must return a fresh CapacityPath each pass. The
    loss (minimized) is the sum of quadratic capacity-violation penalties, an
    L1 cost on announced prices, and the squared error of past forecasts
    against realized announcements.
    """
    if not getattr(policy, "differentiable", False):
        raise ContractViolation(
            "train_coordinator needs a tape-differentiable buying policy")
    coordinator = coordinator or NeuralCoordinator(
        NeuralCoordinatorConfig(forecast_steps=cfg.forecast_steps),
        seed=cfg.seed)
    coordinator.calibrate(pop)
    norms: CoordinatorNorms = coordinator.norms

    alpha = cfg.alpha
    if alpha is None:
        # Violations are in volume/labor units; bring their squares to O(1).
        alpha = 1.0 / max(norms.storage_demand, norms.inbound_demand) ** 2
    kappa = cfg.kappa
    if kappa is None:
        kappa = 0.01 / max(norms.lam_storage, norms.lam_inbound)

    rng = np.random.default_rng(cfg.seed)
    k_full, inflight_full = initial_state(pop, cfg.init_mode,
                                          np.random.default_rng(cfg.seed + 1))
    history: list[dict] = []
    loss_ma = _MovingAverage(cfg.window, cfg.tol)
    converged = False

    for it in range(cfg.max_iters):
        cap = path_sampler(int(rng.integers(2 ** 31)))
        tape = Tape()
        res = rollout(pop, k_full, policy, coordinator, cap,
                      discount=cfg.discount, seed=int(rng.integers(2 ** 31)),
                      initial_pipeline=inflight_full, tape=tape,
                      forecast_steps=cfg.forecast_steps)
        loss, terms = coordinator_loss(res.taped, cap, alpha, kappa,
                                       cfg.forecast_steps)
        coordinator.params.zero_grad()
        backward_into(tape, loss, coordinator.params, coordinator._leaves)
        lr = cfg.lr / (1.0 + cfg.lr_decay * it)
        _ascent_step(coordinator.params, -coordinator.params.grads, lr,
                     cfg.grad_clip)

        loss_val = terms.total()
        history.append({"iteration": it, "objective": -loss_val,
                        "violation_storage": terms.quad_storage,
                        "violation_inbound": terms.quad_inbound,
                        "forecast_loss": terms.forecast_loss,
                        "l1_cost": terms.l1_cost})
        loss_ma.push(loss_val)
        if loss_ma.settled():
            converged = True
            break

    return TrainResult(params=coordinator.params, dual_state=None,
                       history=history, converged=converged)


class _RecordingCoordinator:
    """Wraps a coordinator, snapshotting state and features at each announce."""

    def __init__(self, inner: NeuralCoordinator):
        self.inner = inner
        self.snapshots = []
        self.features = []

    def announce(self, ctx):
        from .coordinators import coordinator_feature_columns
        self.snapshots.append(snapshot_from_ctx(ctx))
        if self.inner.norms is None:
            self.inner.calibrate(ctx.pop)
        cols = coordinator_feature_columns(ctx, self.inner.norms,
                                           self.inner.cfg.forecast_steps)
        self.features.append(np.array([float(value_of(c)) for c in cols]))
        return self.inner.announce(ctx)


@dataclass
class DaggerResult:
    params: ParamVector
    features: np.ndarray    # (N, n_features)
    labels: np.ndarray      # (N, 2 * (L + 1))
    rounds: int


def _fit_regression(coordinator: NeuralCoordinator, feats: np.ndarray,
                    labels: np.ndarray, iters: int, lr: float,
                    rng: np.random.Generator) -> None:
    """Least-squares fit of the coordinator head to dual-search labels."""
    from .policies import mlp_forward

    n = feats.shape[0]
    scale = np.tile(np.asarray(coordinator.cfg.output_scale, dtype=float),
                    coordinator.cfg.forecast_steps + 1)
    for _ in range(iters):
        tape = Tape()
        leaves = param_leaves(tape, coordinator.params)
        out = mlp_forward(feats, leaves, coordinator.n_layers)
        pred = tp.mul(tp.softplus(out), scale[None, :])
        err = tp.sub(pred, labels)
        loss = tp.mul(tp.total(tp.square(err)), 1.0 / n)
        coordinator.params.zero_grad()
        backward_into(tape, loss, coordinator.params, leaves)
        _ascent_step(coordinator.params, -coordinator.params.grads, lr, 10.0)


def dagger_coordinator(pop: Population, path_sampler, policy,
                       dual_cfg: DualSearchConfig, rounds: int = 4,
                       coordinator: NeuralCoordinator | None = None,
                       fit_iters: int = 300, fit_lr: float = 0.05,
                       seed: int = 0) -> DaggerResult:
    """Imitation loop: roll out under the current coordinator, label every
    visited state with a fresh dual search, refit on the aggregate dataset.

    Each round contributes T + 1 labeled states (the terminal state has an
    empty remaining horizon and gets zero labels). Practical only at tiny
    scale; the per-state dual search is the cost.
    """
    T = pop.horizon
    L = dual_cfg.horizon - 1
    coordinator = coordinator or NeuralCoordinator(
        NeuralCoordinatorConfig(forecast_steps=max(L, 1)), seed=seed)
    if coordinator.cfg.forecast_steps != max(L, 1):
        raise ContractViolation("coordinator forecast length must match the "
                                "dual-search horizon minus one")
    coordinator.calibrate(pop)
    rng = np.random.default_rng(seed)
    k = np.zeros(pop.n)

    all_feats: list[np.ndarray] = []
    all_labels: list[np.ndarray] = []
    for _ in range(rounds):
        cap = path_sampler(int(rng.integers(2 ** 31)))
        recorder = _RecordingCoordinator(coordinator)
        rollout(pop, k, policy, recorder, cap,
                seed=int(rng.integers(2 ** 31)),
                forecast_steps=coordinator.cfg.forecast_steps)
        for t, snap in enumerate(recorder.snapshots):
            lam, _ = dual_search(pop, cap, snap, dual_cfg, policy,
                                 np.random.default_rng(int(rng.integers(2 ** 31))))
            all_feats.append(recorder.features[t])
            all_labels.append(lam.ravel())
        # Terminal state: empty remaining horizon, zero labels; the feature
        # row reuses the last announcement's features.
        all_feats.append(recorder.features[-1])
        all_labels.append(np.zeros(2 * dual_cfg.horizon))

        feats = np.stack(all_feats)
        labels = np.stack(all_labels)
        _fit_regression(coordinator, feats, labels, fit_iters, fit_lr, rng)

    return DaggerResult(params=coordinator.params, features=np.stack(all_feats),
                        labels=np.stack(all_labels), rounds=rounds)
