"""Evaluation harness: violation metrics, constraint functionals, the
finite-class generalization bound, and its Monte-Carlo companion.

Metric conventions (stated here because the literature varies): violations
are per-week relative excesses (usage - limit)_+ / limit, averaged over weeks
(M1) or over weeks where either unconstrained reference came within 90% of
the limit (M2); M3/M4 are the percentage of (respectively restricted) weeks
whose relative excess exceeds 10%. Rewards are rescaled so the unconstrained
base-stock run scores 100. Zero-limit weeks are excluded from the relative
metrics and counted separately.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .idp_core import (CapacityPath, ContractViolation, HorizonError,
                       Population, RolloutLedger, rollout)

VIOLATION_THRESHOLD = 0.10
TRIGGER_FRACTION = 0.90


@dataclass
class EvalReport:
    """One (policy, coordinator, path) row of the evaluation table."""

    m1: float
    m2: float | None            # None when no week meets the 90% trigger
    m3: float
    m4: float | None
    reward: float               # cumulative discounted reward
    rescaled_reward: float      # 100 = unconstrained base stock
    zero_limit_weeks: int

    def as_row(self) -> dict:
        return {"M1": self.m1, "M2": self.m2, "M3": self.m3, "M4": self.m4,
                "reward": self.reward, "rescaled_reward": self.rescaled_reward,
                "zero_limit_weeks": self.zero_limit_weeks}


def _relative_excess(usage: np.ndarray, limit: np.ndarray):
    """Per-week (usage - limit)_+ / limit over nonzero-limit weeks."""
    ok = limit > 0
    rel = np.zeros_like(usage)
    rel[ok] = np.maximum(usage[ok] - limit[ok], 0.0) / limit[ok]
    return rel, ok


def metrics(ledger: RolloutLedger, path: CapacityPath,
            unconstrained_rl: RolloutLedger,
            unconstrained_base: RolloutLedger,
            constraint: str = "storage") -> EvalReport:
    """Violation metrics for one run against both unconstrained references."""
    if constraint == "storage":
        usage = ledger.agg_storage
        limit = path.storage_limit
        ref_a, ref_b = unconstrained_rl.agg_storage, unconstrained_base.agg_storage
    elif constraint == "inbound":
        usage = ledger.agg_inbound
        limit = path.inbound_limit
        ref_a, ref_b = unconstrained_rl.agg_inbound, unconstrained_base.agg_inbound
    else:
        raise ContractViolation(f"unknown constraint kind: {constraint}")
    T = ledger.horizon
    if (path.horizon != T or unconstrained_rl.horizon != T
            or unconstrained_base.horizon != T):
        raise HorizonError("all ledgers and the path must share the horizon")

    rel, ok = _relative_excess(usage, limit)
    trigger = ok & ((ref_a >= TRIGGER_FRACTION * limit)
                    | (ref_b >= TRIGGER_FRACTION * limit))

    m1 = 100.0 * float(rel[ok].mean()) if ok.any() else 0.0
    m3 = 100.0 * float((rel[ok] > VIOLATION_THRESHOLD).mean()) if ok.any() else 0.0
    if trigger.any():
        m2 = 100.0 * float(rel[trigger].mean())
        m4 = 100.0 * float((rel[trigger] > VIOLATION_THRESHOLD).mean())
    else:
        m2 = m4 = None

    reward = ledger.raw_total()
    base_reward = unconstrained_base.raw_total()
    rescaled = 100.0 * reward / base_reward if base_reward != 0 else math.nan
    return EvalReport(m1=m1, m2=m2, m3=m3, m4=m4, reward=reward,
                      rescaled_reward=rescaled,
                      zero_limit_weeks=int((~ok).sum()))


def violation_functionals(ledger: RolloutLedger,
                          path: CapacityPath) -> tuple[float, float]:
    """Undiscounted cumulative violations: sum_t of the positive weekly excess."""
    c1 = float(np.maximum(ledger.agg_storage - path.storage_limit, 0.0).sum())
    c2 = float(np.maximum(ledger.agg_inbound - path.inbound_limit, 0.0).sum())
    return c1, c2


def inner_lagrangian(ledger: RolloutLedger, path: CapacityPath,
                     costs: np.ndarray) -> float:
    """Discounted reward plus discounted price-weighted slack terms.

    Matches the penalized objective plus the constant sum_t gamma^t lam_t . K_t
    for any fixed cost sequence.
    """
    costs = np.asarray(costs, dtype=float).reshape(-1, 2)
    if costs.shape[0] != ledger.horizon:
        raise HorizonError("cost sequence length must match the horizon")
    g = ledger.discount_weights()
    slack1 = (g * costs[:, 0] * (path.storage_limit - ledger.agg_storage)).sum()
    slack2 = (g * costs[:, 1] * (path.inbound_limit - ledger.agg_inbound)).sum()
    return ledger.raw_total() + float(slack1 + slack2)


@dataclass
class BoundInputs:
    c_a: float
    p_max: float
    c_max: float
    w_max: float
    u_max: float
    horizon: int
    n_products: int
    n_policies: int
    n_coordinators: int
    n_paths: int
    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ContractViolation("delta must lie in (0, 1)")
        for name in ("horizon", "n_products", "n_policies", "n_coordinators",
                     "n_paths"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        for name in ("c_a", "p_max", "c_max", "w_max", "u_max"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be nonnegative")


def theorem_bound(b: BoundInputs) -> tuple[float, float, float]:
    """High-probability gaps for mean reward and the two violation sums."""
    classes = b.n_policies * b.n_coordinators * b.n_paths
    log_term = math.log(2.0 * classes / b.delta)
    T2 = float(b.horizon) ** 2
    reward_gap = b.c_a * (b.p_max + b.c_max) * T2 * math.sqrt(
        log_term / (2.0 * b.n_products))
    c1_gap = b.c_a * b.w_max * T2 * math.sqrt(b.n_products * log_term / 2.0)
    c2_gap = b.c_a * b.u_max * T2 * math.sqrt(b.n_products * log_term / 2.0)
    return reward_gap, c1_gap, c2_gap


def estimate_action_sensitivity(pop: Population, policy, coordinator,
                                path: CapacityPath, swaps: int = 5,
                                seed: int = 0,
                                discount: float = 0.999) -> float:
    """Empirical single-product robustness constant.

    Replaces one product's exogenous series with another's and measures the
    largest L1 change in the joint weekly action vector over all weeks.
    """
    rng = np.random.default_rng(seed)
    k = np.zeros(pop.n)
    base = rollout(pop, k, policy, coordinator, path, discount=discount,
                   seed=seed).ledger
    worst = 0.0
    for _ in range(swaps):
        i, j = rng.choice(pop.n, size=2, replace=False)
        demand = pop.demand.copy()
        price = pop.price.copy()
        cost = pop.cost.copy()
        lead = pop.lead_time.copy()
        demand[i], price[i], cost[i], lead[i] = (pop.demand[j], pop.price[j],
                                                 pop.cost[j], pop.lead_time[j])
        mod = Population(demand, price, cost, lead, pop.w, pop.u)
        alt = rollout(mod, k, policy, coordinator, path, discount=discount,
                      seed=seed).ledger
        per_week = np.abs(alt.action - base.action).sum(axis=0)
        worst = max(worst, float(per_week.max()))
    return worst


@dataclass
class GapSample:
    """Resampled-vs-reference deviations for one (policy, coordinator, path)."""

    reward_gap: float
    c1_gap: float
    c2_gap: float


def _mean_reward(ledger: RolloutLedger) -> float:
    return ledger.raw_total() / ledger.n_products


def generalization_check(pop: Population, pairs: list, paths: list[CapacityPath],
                         sample_size: int, trials: int = 200,
                         reference_resamples: int = 200, seed: int = 0,
                         discount: float = 0.999):
    """Monte-Carlo companion to the generalization bound.

    ``pairs`` is a list of (policy, coordinator). For each (pair, path) a
    reference value is estimated as the mean over many size-``sample_size``
    product resamples; each trial then draws one more resample and records the
    worst absolute deviation across pairs and paths. Returns (list of
    GapSample per trial, reference table).

    Mean reward is per-product (an average over the resample), matching the
    normalization under which the reward bound shrinks with sample size;
    violation sums are totals over the resample.
    """
    rng = np.random.default_rng(seed)
    k = np.zeros(sample_size)

    def evaluate(sub: Population, policy, coordinator, path):
        led = rollout(sub, k, policy, coordinator, path, discount=discount,
                      seed=0).ledger
        c1, c2 = violation_functionals(led, path)
        return _mean_reward(led), c1, c2

    references = {}
    for a, (policy, coordinator) in enumerate(pairs):
        for g, path in enumerate(paths):
            vals = np.zeros((reference_resamples, 3))
            for r in range(reference_resamples):
                idx = rng.choice(pop.n, size=sample_size, replace=True)
                vals[r] = evaluate(pop.subset(idx), policy, coordinator, path)
            references[(a, g)] = vals.mean(axis=0)

    samples = []
    for _ in range(trials):
        worst = GapSample(0.0, 0.0, 0.0)
        for a, (policy, coordinator) in enumerate(pairs):
            for g, path in enumerate(paths):
                idx = rng.choice(pop.n, size=sample_size, replace=True)
                v, c1, c2 = evaluate(pop.subset(idx), policy, coordinator, path)
                ref = references[(a, g)]
                worst = GapSample(
                    reward_gap=max(worst.reward_gap, abs(v - ref[0])),
                    c1_gap=max(worst.c1_gap, abs(c1 - ref[1])),
                    c2_gap=max(worst.c2_gap, abs(c2 - ref[2])))
        samples.append(worst)
    return samples, references


def forecast_fan(ledger: RolloutLedger, target_week: int,
                 component: int = 0) -> np.ndarray:
    """Successive forecasts of one week's price as the horizon shrinks.

    Entry s is the forecast of week ``target_week`` made s weeks ahead,
    ending with the realized announcement (s = 0). Used by the martingale
    diagnostic: coordination costs "should" have near-zero mean increments.
    """
    L = ledger.forecasts.shape[1]
    if not 0 <= target_week < ledger.horizon:
        raise HorizonError("target week outside the horizon")
    vals = [ledger.prices[target_week, component]]
    for s in range(1, L + 1):
        t = target_week - s
        if t < 0:
            break
        vals.append(ledger.forecasts[t, s - 1, component])
    return np.array(vals[::-1])   # chronological: farthest forecast first


def martingale_increments(ledger: RolloutLedger, component: int = 0) -> np.ndarray:
    """Mean forecast-revision per target week (diagnostic, not a test)."""
    incs = []
    for tau in range(ledger.horizon):
        fan = forecast_fan(ledger, tau, component)
        if fan.size >= 2:
            incs.extend(np.diff(fan))
    return np.asarray(incs)


TABLE_COLUMNS = ["initialization", "policy", "coordinator", "path_id",
                 "M1", "M2", "M3", "M4", "reward", "rescaled_reward",
                 "zero_limit_weeks"]


def write_report_csv(rows: list[dict], path: str) -> None:
    """Evaluation table; header comment states the violation formula."""
    with open(path, "w", newline="") as fh:
        fh.write("# violations: per-week (usage-limit)_+/limit, averaged over "
                 "weeks (M1) / trigger weeks (M2); M3/M4 = % weeks above 10%\n")
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, "") for key in TABLE_COLUMNS})
