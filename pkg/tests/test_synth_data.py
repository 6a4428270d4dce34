import numpy as np
import pytest

from capcoord.idp_core import ContractViolation, Population
from capcoord.synth_data import (PopulationConfig, generate, generate_split,
                                 gini, read_data_csv, write_data_csv)


def test_empty_population():
    assert generate(PopulationConfig(n_products=0)) == []


def test_determinism():
    cfg = PopulationConfig(n_products=12, horizon=10, seed=9)
    a = generate(cfg)
    b = generate(cfg)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.demand, pb.demand)
        assert np.array_equal(pa.price, pb.price)
        assert pa.storage_weight == pb.storage_weight


def test_series_satisfy_invariants():
    products = generate(PopulationConfig(n_products=40, horizon=26, seed=2))
    for p in products:
        assert p.horizon == 26
        assert np.all(p.demand >= 0)
        assert np.all(p.price >= 0)
        assert np.all(p.cost >= 0)
        assert np.all(p.lead_time >= 1)
        assert p.storage_weight > 0 and p.inbound_weight > 0
    pop = Population.from_products(products)
    assert pop.mean_weekly_storage_demand() > 0
    assert pop.mean_weekly_inbound_demand() > 0


def test_heavy_tail_and_correlation_statistics():
    cfg = PopulationConfig(n_products=10_000, horizon=4, seed=1,
                           price_cost_correlation=0.8)
    products = generate(cfg)
    mean_demand = np.array([p.demand.mean() for p in products])
    assert gini(mean_demand) > 0.5

    log_p = np.log([p.price.mean() for p in products])
    log_c = np.log([p.cost.mean() for p in products])
    corr = np.corrcoef(log_p, log_c)[0, 1]
    assert abs(corr - 0.8) < 0.1

    # positive margin holds for at least 95% of products
    margin_ok = np.mean([p.price.mean() > p.cost.mean() for p in products])
    assert margin_ok >= 0.95


def test_lead_times_within_range():
    cfg = PopulationConfig(n_products=200, horizon=6, lead_time_range=(2, 5),
                           seed=4)
    for p in generate(cfg):
        lead = p.lead_time[0]
        assert 2 <= lead <= 5
        assert np.all(p.lead_time == lead)


def test_noise_free_demand_is_seasonal_scale():
    cfg = PopulationConfig(n_products=6, horizon=20, seed=8,
                           demand_noise_sigma=0.0)
    noisy = PopulationConfig(n_products=6, horizon=20, seed=8,
                             demand_noise_sigma=0.4)
    for p, q in zip(generate(cfg), generate(noisy)):
        # same seed: noise-free weekly demand varies strictly less
        assert np.std(p.demand / p.demand.mean()) <= np.std(q.demand / q.demand.mean())


def test_config_validation():
    with pytest.raises(ContractViolation):
        PopulationConfig(lead_time_range=(3, 1))
    with pytest.raises(ContractViolation):
        PopulationConfig(price_cost_correlation=1.5)
    with pytest.raises(ContractViolation):
        PopulationConfig(demand_tail_index=0.0)


def test_split_disjoint_seeds():
    cfg = PopulationConfig(n_products=5, horizon=8, seed=3)
    train, heldout = generate_split(cfg)
    assert len(train) == len(heldout) == 5
    assert not np.allclose(train[0].demand, heldout[0].demand)


def test_data_csv_roundtrip(tmp_path):
    products = generate(PopulationConfig(n_products=4, horizon=7, seed=6))
    out = tmp_path / "data.csv"
    write_data_csv(str(out), products)
    back = read_data_csv(str(out))
    assert len(back) == 4
    for orig, rec in zip(products, back):
        assert np.allclose(orig.demand, rec.demand, rtol=1e-9)
        assert np.allclose(orig.price, rec.price, rtol=1e-9)
        assert np.array_equal(orig.lead_time, rec.lead_time)
        assert orig.storage_weight == pytest.approx(rec.storage_weight)


def test_gini_known_values():
    assert gini(np.full(100, 3.0)) == pytest.approx(0.0, abs=1e-12)
    # one holder of everything approaches 1 - 1/n
    x = np.zeros(100)
    x[0] = 5.0
    assert gini(x) == pytest.approx(1.0 - 1.0 / 100)
