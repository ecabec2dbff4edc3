import logging
from dataclasses import replace

import numpy as np
import pytest

from tdvsm.errors import BaseInfeasibleError, ConfigError, InfeasibleScenarioError
from tdvsm.margin import (
    DatasetConfig,
    MarginConfig,
    Scenario,
    ScenarioConfig,
    compute_vsm,
    dispatch_at,
    feature_names,
    generate_dataset,
    load_dataset,
    sample_scenario,
    scan_lambda,
    scenario_from_op,
    split_index,
    state_vector,
)
from tdvsm.margin.dataset import contingency_list, scenario_seed
from tdvsm.netmodel.contingency import branch_outage
from tdvsm.netmodel.types import NO_CONTINGENCY, nominal_operating_point
from tdvsm.utils.misc import write_text


@pytest.fixture(scope="module")
def two_bus_scenario(two_bus):
    net, feeders = two_bus
    return scenario_from_op(net, feeders, nominal_operating_point(net))


def test_feature_layout(desk):
    net, _ = desk
    names = feature_names(net)
    assert len(names) == 2 * 3 + 2 * 4
    assert names[:3] == ["Pg_1", "Pg_2", "Pg_3"]
    assert names[-1] == "QL_4"
    pg, vg, pl, ql = split_index(net)
    assert names[vg][0] == "Vg_1" and names[pl][0] == "PL_1" and names[ql][0] == "QL_1"


def test_state_vector_reads_solution(desk_nominal):
    net, _, op, result = desk_nominal
    x = state_vector(net, result)
    pg, vg, pl, ql = split_index(net)
    assert x.shape == (len(feature_names(net)),)
    for ci, v in enumerate(op.v_gen):
        if ci not in result.tx.switched:
            assert x[vg][ci] == pytest.approx(v, abs=1e-8)
    # bus 3 is the first boundary bus, behind the fixed load at bus 2
    assert x[ql][1] == pytest.approx(result.boundary[3][1])
    assert x[pg][0] == pytest.approx(result.tx.gen_p[0])


def test_two_bus_margin(two_bus, two_bus_scenario):
    net, feeders = two_bus
    sample = compute_vsm(net, feeders, two_bus_scenario, config=MarginConfig(step=0.5))
    # nose of the lossless line: P = V1^2 / (2 X) = 500 MW
    assert sample.lambda_max == pytest.approx(10.0, abs=0.02)
    assert sample.vsm == pytest.approx((sample.lambda_max - 1.0) * 50.0)
    assert sample.contingency == "none"


def test_bisection_agrees_with_march(two_bus, two_bus_scenario):
    net, feeders = two_bus
    config = MarginConfig(step=0.5, width=1e-3)
    bisected = compute_vsm(net, feeders, two_bus_scenario, config=config).lambda_max
    marched = scan_lambda(net, feeders, two_bus_scenario, step=0.01, config=config)
    assert abs(bisected - marched) <= 0.01 + config.width


def test_lambda_cap(two_bus, two_bus_scenario):
    net, feeders = two_bus
    sample = compute_vsm(net, feeders, two_bus_scenario, config=MarginConfig(step=0.5, lambda_cap=4.0))
    assert sample.lambda_max == pytest.approx(4.0)


def test_outage_lowers_margin(five_bus):
    net, feeders = five_bus
    scenario = scenario_from_op(net, feeders, nominal_operating_point(net))
    config = MarginConfig(step=0.1, width=1e-3)
    intact = compute_vsm(net, feeders, scenario, config=config)
    outage = compute_vsm(net, feeders, scenario, branch_outage(0), config=config)
    assert outage.contingency == "br0"
    assert outage.vsm <= intact.vsm + config.width * scenario.base_total_p


def test_base_infeasible(two_bus, two_bus_scenario):
    net, feeders = two_bus
    heavy = replace(two_bus_scenario.op, p_load=(0.0, 600.0))
    scenario = Scenario(seed=1, op=heavy, profile="fixed", p_load=np.array([600.0]), q_load=np.zeros(1), base_total_p=600.0)
    with pytest.raises(BaseInfeasibleError):
        compute_vsm(net, feeders, scenario)
    with pytest.raises(InfeasibleScenarioError):
        scenario_from_op(net, feeders, heavy)


def test_dispatch_follows_headroom(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    moved = dispatch_at(net, op, 1.5, 100.0)
    assert moved.load_scale == pytest.approx(1.5)
    # gen 2 has 40 MW of headroom and takes up to that
    assert moved.p_gen[1] == pytest.approx(80.0)
    assert moved.p_gen[0] == op.p_gen[0]
    assert moved.p_gen[2] == op.p_gen[2]
    assert dispatch_at(net, op, 1.0, 100.0).p_gen == op.p_gen


def test_scenarios_are_reproducible(desk):
    net, feeders = desk
    config = ScenarioConfig()
    a = sample_scenario(net, feeders, config, seed=7)
    b = sample_scenario(net, feeders, config, seed=7)
    c = sample_scenario(net, feeders, config, seed=8)
    assert a.op == b.op
    assert a.op != c.op
    assert a.profile in {"windy", "sunny", "mixed"}
    slack = net.slack_controller
    assert 0.0 <= a.base.tx.gen_p[slack] <= net.generators[slack].p_max
    for vg, v0 in zip(a.op.v_gen, nominal_operating_point(net).v_gen):
        assert abs(vg - v0) <= config.vg_band


def test_profiles_bound_ibr_output(desk):
    net, feeders = desk
    config = ScenarioConfig(profiles=[{"name": "dim", "wind": [0.0, 0.1], "solar": [0.0, 0.1]}])
    scenario = sample_scenario(net, feeders, config, seed=3)
    ibr = net.ibrs[0]
    assert scenario.profile == "dim"
    assert 0.0 <= scenario.op.p_gen[len(net.generators)] <= 0.1 * ibr.icr


def test_scenario_config_checks():
    with pytest.raises(ConfigError):
        ScenarioConfig(load_dist="lognormal")
    with pytest.raises(ConfigError):
        ScenarioConfig(profiles=[{"name": "bad", "wind": [0.8, 0.2]}])
    with pytest.raises(ConfigError):
        MarginConfig(lambda_cap=1.0)


def test_contingency_lists(five_bus):
    net, _ = five_bus
    assert contingency_list(net, "none") == [NO_CONTINGENCY]
    assert [c.id for c in contingency_list(net, [2, 4])] == ["none", "br2", "br4"]
    assert len(contingency_list(net, "n1")) == 1 + len(net.branches)
    assert scenario_seed(0, 5) == 5
    assert scenario_seed(1, 0) != scenario_seed(0, 1)


def test_generate_and_reload_dataset(two_bus, tmp_path, caplog):
    caplog.set_level(logging.INFO)
    net, feeders = two_bus
    path = str(tmp_path / "dataset.csv")
    config = DatasetConfig(n_scenarios=3, master_seed=2, contingencies="n1", jobs=2, progress=False)
    dataset = generate_dataset(net, feeders, config, ScenarioConfig(), MarginConfig(step=0.5), out_path=path)
    # the only branch islands bus 2, so each scenario yields the intact sample
    assert len(dataset) == 3
    assert [s.seed for s in dataset.samples] == [scenario_seed(2, k) for k in range(3)]
    # the islanding check runs once per contingency, not once per scenario
    assert sum("Skipping br0" in r.getMessage() for r in caplog.records) == 1
    loaded = load_dataset(path)
    assert loaded.feature_names == feature_names(net)
    np.testing.assert_allclose(loaded.x, dataset.x, rtol=1e-8)
    np.testing.assert_allclose(loaded.y, dataset.y, rtol=1e-8)
    assert loaded.digest() == dataset.digest()


def test_dataset_requires_target_column(tmp_path):
    path = str(tmp_path / "broken.csv")
    write_text(path, "seed,contingency,Pg_1\n0,none,1.0\n")
    with pytest.raises(ValueError, match="missing"):
        load_dataset(path)


@pytest.mark.slow
def test_desk_dataset_under_contingencies(desk):
    net, feeders = desk
    config = DatasetConfig(n_scenarios=2, contingencies=[0, 5], progress=False)
    dataset = generate_dataset(net, feeders, config, ScenarioConfig(), MarginConfig(step=0.1))
    assert 1 <= len(dataset) <= 6
    assert all(s.vsm >= 0.0 for s in dataset.samples)
    assert {s.contingency for s in dataset.samples} <= {"none", "br0", "br5"}


def _stressed(net, feeders, scale):
    op = replace(nominal_operating_point(net), load_scale=scale)
    return scenario_from_op(net, feeders, op)


def test_margin_falls_with_load_stress(two_bus):
    net, feeders = two_bus
    config = MarginConfig(step=0.25, width=1e-4)
    margins = [compute_vsm(net, feeders, _stressed(net, feeders, s), config=config).vsm for s in (1.0, 1.5, 2.0)]
    # the nose stays at 500 MW while the base load grows by 25 MW per step
    np.testing.assert_allclose(margins, [450.0, 425.0, 400.0], atol=0.5)
    assert margins[0] > margins[1] > margins[2]


@pytest.mark.slow
def test_cosimulated_margin_falls_with_load_stress(desk):
    net, feeders = desk
    config = MarginConfig(step=0.1, width=1e-3)
    light = compute_vsm(net, feeders, _stressed(net, feeders, 1.0), config=config)
    heavy = compute_vsm(net, feeders, _stressed(net, feeders, 1.2), config=config)
    assert heavy.vsm < light.vsm
