import itertools

import numpy as np
import pytest

from capcoord.capacity_sampler import (HaarIndex, SamplerConfig, analyze,
                                       basis_indices, coefficient_variance,
                                       evaluation_grid, expand, modified_haar,
                                       mother_wavelet, normalized_haar,
                                       read_paths_csv, reconstruct,
                                       sample_capacity_path,
                                       sample_coefficients, sample_path,
                                       total_variation, write_paths_csv)
from capcoord.idp_core import ContractViolation


def test_mother_wavelet_branches():
    assert mother_wavelet(0.25) == 1.0
    assert mother_wavelet(0.75) == -1.0
    assert mother_wavelet(1.5) == 0.0
    assert mother_wavelet(-0.1) == 0.0
    assert mother_wavelet(0.0) == 1.0
    assert mother_wavelet(0.5) == -1.0


def test_modified_haar_examples():
    assert modified_haar(HaarIndex(1, 1), 0.625) == 1.0
    assert modified_haar(HaarIndex(0, 0), 0.75) == -1.0
    assert modified_haar(HaarIndex(2, 3), 0.5) == 0.0


def test_haar_index_validation():
    with pytest.raises(ContractViolation):
        HaarIndex(-1, 0)
    with pytest.raises(ContractViolation):
        HaarIndex(1, 2)


def test_basis_size():
    for m in range(4):
        assert len(basis_indices(m)) == 2 ** (m + 1) - 1


def test_discrete_orthogonality_exact():
    m = 3
    N = 2 ** (m + 1)
    grid = (np.arange(N) + 0.5) / N
    idxs = basis_indices(m)
    for a, b in itertools.combinations(range(len(idxs)), 2):
        ip = float((normalized_haar(idxs[a], grid)
                    * normalized_haar(idxs[b], grid)).sum())
        assert ip == 0.0
    for idx in idxs:
        norm = float((normalized_haar(idx, grid) ** 2).mean())
        assert norm == pytest.approx(1.0)


def test_expand_worked_example():
    # order 1, coefficients (c00, c10, c11) = (1, 0, 0), base 2, T = 4
    grid = evaluation_grid(4)
    out = expand(np.array([1.0, 0.0, 0.0]), 1, 2.0, grid)
    assert np.allclose(out, [3.0, 3.0, 1.0, 1.0])


def test_zero_variance_constant_path():
    cfg = SamplerConfig(order=2, scale=0.0, horizon=8, base_level=5.0)
    path = sample_path(cfg, 0)
    assert np.allclose(path, 5.0)


def test_seed_determinism_and_clamping():
    cfg = SamplerConfig(order=3, scale=6.0, horizon=30, base_level=0.2)
    a = sample_path(cfg, 42)
    b = sample_path(cfg, 42)
    assert np.array_equal(a, b)
    assert np.all(a >= 0.0)
    many = np.concatenate([sample_path(cfg, s) for s in range(50)])
    assert np.all(many >= 0.0)


def test_coefficient_variance_monte_carlo():
    cfg = SamplerConfig(order=3, scale=1.0, horizon=8)
    rng = np.random.default_rng(0)
    draws = np.stack([sample_coefficients(cfg, rng) for _ in range(10_000)])
    target = 1.0 / 15.0
    var = draws.var(axis=0)
    assert np.all(np.abs(var - target) / target < 0.05)
    assert coefficient_variance(cfg) == pytest.approx(target)


def test_total_variation_examples():
    assert total_variation(np.array([3.0, 3.0, 1.0, 1.0])) == 2.0
    assert total_variation(np.full(5, 2.0)) == 0.0
    with pytest.raises(ContractViolation):
        total_variation(np.array([1.0]))


def test_mean_tv_monotone_in_scale():
    means = []
    for nu in (0.5, 1.0, 2.0, 4.0):
        cfg = SamplerConfig(order=3, scale=nu, horizon=32, base_level=3.0)
        tvs = [total_variation(sample_path(cfg, s)) for s in range(300)]
        means.append(np.mean(tvs))
    assert all(a < b for a, b in zip(means, means[1:]))


def test_reconstruction_on_dyadic_grid():
    rng = np.random.default_rng(3)
    m = 3
    values = rng.uniform(0, 5, size=2 ** (m + 1))
    mean_c, coeffs = analyze(values, m)
    back = reconstruct(mean_c, coeffs, m)
    assert np.allclose(back, values, atol=1e-9)


def test_demand_anchor_scales_path():
    base = SamplerConfig(order=2, scale=0.0, horizon=6, base_level=1.0)
    anchored = SamplerConfig(order=2, scale=0.0, horizon=6, base_level=1.0,
                             demand_anchor=37.5)
    assert np.allclose(sample_path(anchored, 0), 37.5 * sample_path(base, 0))


def test_sampler_config_validation():
    with pytest.raises(ContractViolation):
        SamplerConfig(order=-1)
    with pytest.raises(ContractViolation):
        SamplerConfig(scale=-0.5)


def test_paths_csv_roundtrip(tmp_path):
    cfg = SamplerConfig(order=2, scale=1.0, horizon=10, base_level=2.0)
    paths = [sample_capacity_path(cfg, cfg, s) for s in range(3)]
    out = tmp_path / "paths.csv"
    write_paths_csv(str(out), paths)
    back = read_paths_csv(str(out))
    assert len(back) == 3
    for orig, rec in zip(paths, back):
        assert np.allclose(orig.storage_limit, rec.storage_limit)
        assert np.allclose(orig.inbound_limit, rec.inbound_limit)
