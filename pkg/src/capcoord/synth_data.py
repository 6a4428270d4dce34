"""Synthetic product populations with heavy-tailed, cross-correlated economics.

Distribution choices here are ours (Pareto scale mixture for demand size,
lognormal weekly noise, jointly lognormal price/cost with a configurable
correlation); they stand in for a proprietary dataset and are documented as
synthetic, not as a claim about any real catalog.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .idp_core import ContractViolation, ExoSeries

WEEKS_PER_YEAR = 52


@dataclass
class PopulationConfig:
    n_products: int = 100
    horizon: int = 52
    demand_tail_index: float = 1.2
    price_cost_correlation: float = 0.8
    seasonality_amplitude: float = 0.3
    lead_time_range: tuple[int, int] = (1, 3)
    seed: int = 0
    base_demand: float = 5.0
    demand_noise_sigma: float = 0.4

    def __post_init__(self):
        v_min, v_max = self.lead_time_range
        if v_min < 0 or v_max < v_min:
            raise ContractViolation("lead_time_range must satisfy 0 <= v_min <= v_max")
        if not -1.0 <= self.price_cost_correlation <= 1.0:
            raise ContractViolation("correlation must be in [-1, 1]")
        if self.demand_tail_index <= 0:
            raise ContractViolation("demand_tail_index must be positive")
        if self.seasonality_amplitude < 0:
            raise ContractViolation("seasonality_amplitude must be nonnegative")
        if self.demand_noise_sigma < 0:
            raise ContractViolation("demand_noise_sigma must be nonnegative")


def generate(cfg: PopulationConfig) -> list[ExoSeries]:
    """Draw a product population; identical (cfg, seed) gives identical output."""
    rng = np.random.default_rng(cfg.seed)
    n, T = cfg.n_products, cfg.horizon
    if n == 0:
        return []

    # Heavy-tailed mean demand scale (Pareto with the configured tail index).
    scale = cfg.base_demand * (1.0 + rng.pareto(cfg.demand_tail_index, size=n))

    phase = rng.uniform(0, WEEKS_PER_YEAR, size=n)
    weeks = np.arange(T)
    seasonal = 1.0 + cfg.seasonality_amplitude * np.sin(
        2 * np.pi * (weeks[None, :] + phase[:, None]) / WEEKS_PER_YEAR)
    seasonal = np.maximum(seasonal, 0.05)

    sigma_d = cfg.demand_noise_sigma
    noise = np.exp(sigma_d * rng.standard_normal((n, T)) - sigma_d ** 2 / 2)
    demand = scale[:, None] * seasonal * noise

    # Jointly lognormal mean price and cost: correlation rho in log space,
    # margin gap large enough that p >= c holds with probability >> 0.95.
    rho = cfg.price_cost_correlation
    sigma_pc = 0.3
    z1 = rng.standard_normal(n)
    z_ind = rng.standard_normal(n)
    z2 = rho * z1 + np.sqrt(max(1.0 - rho ** 2, 0.0)) * z_ind
    mean_price = np.exp(np.log(10.0) + sigma_pc * z1)
    mean_cost = np.exp(np.log(6.0) + sigma_pc * z2)

    price_wiggle = np.exp(0.05 * rng.standard_normal((n, T)))
    cost_wiggle = np.exp(0.05 * rng.standard_normal((n, T)))
    price = mean_price[:, None] * price_wiggle
    cost = mean_cost[:, None] * cost_wiggle

    v_min, v_max = cfg.lead_time_range
    lead = rng.integers(v_min, v_max + 1, size=n)

    w = np.exp(0.5 * rng.standard_normal(n))       # volume per unit
    u = np.exp(0.5 * rng.standard_normal(n)) * 0.5  # labor per unit

    return [
        ExoSeries(demand=demand[i], price=price[i], cost=cost[i],
                  lead_time=np.full(T, lead[i], dtype=int),
                  storage_weight=float(w[i]), inbound_weight=float(u[i]))
        for i in range(n)
    ]


def generate_split(cfg: PopulationConfig):
    """Training and evaluation populations from disjoint seeds (same generator)."""
    train = generate(cfg)
    eval_cfg = PopulationConfig(**{**cfg.__dict__, "seed": cfg.seed + 10_000_019})
    return train, generate(eval_cfg)


def gini(values: np.ndarray) -> float:
    """Gini coefficient of a nonnegative sample (heavy-tail diagnostic)."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.shape[0]
    if n == 0 or x.sum() == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float((2 * (ranks * x).sum() / (n * x.sum())) - (n + 1) / n)


def write_data_csv(path: str, products: list[ExoSeries]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["product_id", "week", "demand", "price", "cost",
                         "lead_time", "storage_weight", "inbound_weight"])
        for pid, p in enumerate(products):
            for t in range(p.horizon):
                writer.writerow([pid, t, f"{p.demand[t]:.10g}",
                                 f"{p.price[t]:.10g}", f"{p.cost[t]:.10g}",
                                 int(p.lead_time[t]),
                                 f"{p.storage_weight:.10g}",
                                 f"{p.inbound_weight:.10g}"])


def read_data_csv(path: str) -> list[ExoSeries]:
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["product_id"]), []).append(row)
    products = []
    for pid in sorted(rows):
        entries = sorted(rows[pid], key=lambda r: int(r["week"]))
        products.append(ExoSeries(
            demand=np.array([float(r["demand"]) for r in entries]),
            price=np.array([float(r["price"]) for r in entries]),
            cost=np.array([float(r["cost"]) for r in entries]),
            lead_time=np.array([int(r["lead_time"]) for r in entries]),
            storage_weight=float(entries[0]["storage_weight"]),
            inbound_weight=float(entries[0]["inbound_weight"])))
    return products
