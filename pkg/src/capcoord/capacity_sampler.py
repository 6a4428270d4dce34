"""Capacity-curve sampling over a truncated Haar wavelet system.

Curves live on [0, 1] and are rescaled onto the weekly grid by evaluating at
midpoints (j - 1/2)/T, which keeps values well defined at dyadic breakpoints.
Coefficients for all basis elements share one Gaussian with variance
scale / (2^(m+1) - 1), so the scale knob controls total variation directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .idp_core import CapacityPath, ContractViolation


@dataclass(frozen=True)
class HaarIndex:
    """Level/shift pair (n, k) with 0 <= k < 2^n."""

    n: int
    k: int

    def __post_init__(self):
        if self.n < 0 or not (0 <= self.k < 2 ** self.n):
            raise ContractViolation(f"invalid Haar index (n={self.n}, k={self.k})")


@dataclass
class SamplerConfig:
    order: int = 3
    scale: float = 1.0
    horizon: int = 52
    base_level: float = 1.0
    demand_anchor: float | None = None

    def __post_init__(self):
        if self.order < 0:
            raise ContractViolation("order must be >= 0")
        if self.scale < 0:
            raise ContractViolation("scale must be >= 0")
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")


def mother_wavelet(x):
    """+1 on [0, 1/2), -1 on [1/2, 1), 0 elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.where((x >= 0) & (x < 0.5), 1.0, 0.0)
    out = np.where((x >= 0.5) & (x < 1.0), -1.0, out)
    return out if out.ndim else float(out)


def modified_haar(idx: HaarIndex, x):
    """Unnormalized wavelet psi(2^n x - k); values in {-1, 0, 1}."""
    return mother_wavelet(np.asarray(x, dtype=float) * 2 ** idx.n - idx.k)


def normalized_haar(idx: HaarIndex, x):
    """Orthonormal Haar function 2^(n/2) psi(2^n x - k)."""
    return 2 ** (idx.n / 2) * modified_haar(idx, x)


def basis_indices(order: int) -> list[HaarIndex]:
    """All (n, k) in the Haar basis of the given order; 2^(m+1) - 1 elements."""
    return [HaarIndex(n, k) for n in range(order + 1) for k in range(2 ** n)]


def evaluation_grid(horizon: int) -> np.ndarray:
    """Midpoint grid (j - 1/2)/T for j = 1..T."""
    return (np.arange(1, horizon + 1) - 0.5) / horizon


def expand(coefficients: np.ndarray, order: int, base_level: float,
           grid: np.ndarray) -> np.ndarray:
    """base + sum c_{n,k} psi~_{n,k}(x) over the grid, before clamping."""
    coefficients = np.asarray(coefficients, dtype=float)
    indices = basis_indices(order)
    if coefficients.shape != (len(indices),):
        raise ContractViolation("coefficient count must match the basis size")
    out = np.full(grid.shape, float(base_level))
    for c, idx in zip(coefficients, indices):
        if c != 0.0:
            out = out + c * modified_haar(idx, grid)
    return out


def coefficient_variance(cfg: SamplerConfig) -> float:
    return cfg.scale / (2 ** (cfg.order + 1) - 1)


def sample_coefficients(cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    n_basis = 2 ** (cfg.order + 1) - 1
    if cfg.scale == 0.0:
        return np.zeros(n_basis)
    return rng.normal(0.0, np.sqrt(coefficient_variance(cfg)), size=n_basis)


def sample_path(cfg: SamplerConfig, seed) -> np.ndarray:
    """Draw one capacity curve of length T (one component of a CapacityPath)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    coeffs = sample_coefficients(cfg, rng)
    curve = expand(coeffs, cfg.order, cfg.base_level, evaluation_grid(cfg.horizon))
    if cfg.demand_anchor is not None:
        curve = curve * cfg.demand_anchor
    return np.maximum(curve, 0.0)


def sample_capacity_path(storage_cfg: SamplerConfig, inbound_cfg: SamplerConfig,
                         seed) -> CapacityPath:
    """Independent storage and inbound curves sharing one RNG stream."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return CapacityPath(storage_limit=sample_path(storage_cfg, rng),
                        inbound_limit=sample_path(inbound_cfg, rng))


def total_variation(path: np.ndarray) -> float:
    path = np.asarray(path, dtype=float)
    if path.shape[0] < 2:
        raise ContractViolation("total variation needs at least 2 points")
    return float(np.abs(np.diff(path)).sum())


def analyze(values: np.ndarray, order: int):
    """Discrete Haar analysis on the dyadic grid of 2^(order+1) midpoints.

    Returns (mean_coefficient, wavelet_coefficients) under the normalized
    system; exact reconstruction holds because the constant plus the order-m
    wavelets span all of R^(2^(m+1)).
    """
    values = np.asarray(values, dtype=float)
    N = 2 ** (order + 1)
    if values.shape != (N,):
        raise ContractViolation(f"expected {N} dyadic samples")
    grid = (np.arange(N) + 0.5) / N
    mean_coeff = values.mean()
    coeffs = np.array([(values * normalized_haar(idx, grid)).mean()
                       for idx in basis_indices(order)])
    return mean_coeff, coeffs


def reconstruct(mean_coeff: float, coeffs: np.ndarray, order: int) -> np.ndarray:
    N = 2 ** (order + 1)
    grid = (np.arange(N) + 0.5) / N
    out = np.full(N, float(mean_coeff))
    for c, idx in zip(coeffs, basis_indices(order)):
        out = out + c * normalized_haar(idx, grid)
    return out


def write_paths_csv(path: str, paths: list[CapacityPath]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "week", "storage_limit", "inbound_limit"])
        for pid, cap in enumerate(paths):
            for t in range(cap.horizon):
                writer.writerow([pid, t, f"{cap.storage_limit[t]:.10g}",
                                 f"{cap.inbound_limit[t]:.10g}"])


def read_paths_csv(path: str) -> list[CapacityPath]:
    rows: dict[int, list[tuple[int, float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["path_id"]), []).append(
                (int(row["week"]), float(row["storage_limit"]),
                 float(row["inbound_limit"])))
    paths = []
    for pid in sorted(rows):
        entries = sorted(rows[pid])
        paths.append(CapacityPath(
            storage_limit=np.array([e[1] for e in entries]),
            inbound_limit=np.array([e[2] for e in entries])))
    return paths
