import json
from dataclasses import replace

import pytest

from tdvsm.build_tdvsm import build_case, load_settings
from tdvsm.coord import CoordConfig, render_report, run_loop, write_outputs
from tdvsm.errors import ConfigError
from tdvsm.margin.dataset import generate_dataset
from tdvsm.mlpvsm import train_dx_model, train_rprop
from tdvsm.mlpvsm.metrics import Metrics
from tdvsm.netmodel.types import nominal_operating_point
from tdvsm.tsopt import TsoConfig
from tdvsm.tsopt.verify import evaluate_vsm
from tdvsm.utils.misc import read_csv, read_text

Q_ONLY = TsoConfig(use_voltage_controls=False)


@pytest.fixture(scope="module")
def paired_runs(desk_nominal, desk_vsm_model, desk_dx_models):
    net, feeders, op, _ = desk_nominal
    config = CoordConfig(tol=0.5, max_iters=5)
    return {
        mode: run_loop(net, feeders, op, desk_vsm_model, desk_dx_models, 55.0, mode, config, Q_ONLY)
        for mode in ("sensitivity", "equal")
    }


def test_coordination_reaches_target(paired_runs):
    for trace in paired_runs.values():
        assert trace.converged, trace.reason
        assert trace.vsm_initial == pytest.approx(50.0)
        assert trace.final_vsm >= 55.0 - 0.5
        first = trace.records[0]
        assert first.predicted_vsm == pytest.approx(55.0, abs=1e-6)
        assert set(first.requested) == {3, 4, 5}
        assert set(first.dx) <= {3, 4, 5}


def test_sensitivity_weights_need_less_support(paired_runs):
    sens, equal = paired_runs["sensitivity"], paired_runs["equal"]
    assert sens.iterations <= equal.iterations
    assert sens.requested_mvar <= equal.requested_mvar
    assert sens.active_controllers <= equal.active_controllers


def test_realized_support_follows_request(paired_runs):
    first = paired_runs["sensitivity"].records[0]
    for bus, dq in first.requested.items():
        assert first.realized[bus] == pytest.approx(dq, abs=1e-6)


def test_target_already_met(desk_nominal, desk_vsm_model, desk_dx_models):
    net, feeders, op, _ = desk_nominal
    trace = run_loop(net, feeders, op, desk_vsm_model, desk_dx_models, 45.0, tso_config=Q_ONLY)
    assert trace.converged
    assert trace.iterations == 0
    assert trace.requested_mvar == 0.0


def test_unreachable_target_stops(desk_nominal, desk_vsm_model, desk_dx_models):
    net, feeders, op, _ = desk_nominal
    trace = run_loop(net, feeders, op, desk_vsm_model, desk_dx_models, 1.0e4, tso_config=Q_ONLY)
    assert not trace.converged
    assert "infeasible" in trace.reason


def test_sensitivity_mode_needs_feeder_surrogates(desk_nominal, desk_vsm_model):
    net, feeders, op, _ = desk_nominal
    with pytest.raises(ConfigError, match="surrogate"):
        run_loop(net, feeders, op, desk_vsm_model, {}, 55.0, tso_config=Q_ONLY)


def test_config_checks():
    with pytest.raises(ConfigError):
        CoordConfig(weight_mode="random")
    with pytest.raises(ConfigError):
        CoordConfig(alpha=-0.1)


def test_outputs(paired_runs, tmp_path):
    trace = paired_runs["sensitivity"]
    out = str(tmp_path)
    write_outputs(trace, out, render_report({"sensitivity": trace}))
    payload = json.loads(read_text(str(tmp_path / "trace.txt")))
    assert payload["converged"] is True
    assert payload["iterations"] == trace.iterations
    iters = read_csv(str(tmp_path / "vsm_iterations.csv"))
    assert list(iters["iteration"]) == list(range(trace.iterations + 1))
    tx = read_csv(str(tmp_path / "dispatch_tx.csv"))
    assert list(tx.columns) == ["iteration", "control", "bus", "delta"]
    assert set(tx["control"]) == {"Q"}
    dx = read_csv(str(tmp_path / "dispatch_dx_desk7.csv"))
    assert set(dx["tx_bus"]) <= {3, 4, 5}
    assert (tmp_path / "report.md").exists()


def test_report_sections(paired_runs):
    metrics = Metrics(r2=0.98, mae_pct=1.5, mse=2.0, n=40)
    text = render_report(paired_runs, metrics=metrics, dx_metrics={"desk7": {"r2": 0.999, "mae_pct": 0.1, "mse": 0.5}})
    for heading in (
        "## Surrogate accuracy",
        "## Boundary reactive weights (ascending)",
        "## First-iteration dispatch (sensitivity weights)",
        "## First-iteration dispatch (equal weights)",
        "## Coordination summary",
    ):
        assert heading in text
    assert "Voltage set-point weights" not in text
    assert "Q_L feeder desk7" in text


@pytest.mark.slow
def test_trained_surrogate_sensitivity_weights_dominate():
    settings = load_settings("desk.yaml")
    net, feeders = build_case(settings)
    feeders = {f.id: f for f in feeders}
    dataset = generate_dataset(net, feeders, settings.dataset, settings.scenario, settings.margin, settings.cosim, settings.powerflow)
    vsm_model, held_out = train_rprop(dataset, settings.train)
    assert held_out.r2 > 0.9
    dx_models = {
        fid: train_dx_model(f, config=settings.dx_train, n=settings.dx_samples, seed=settings.seed, load_scale=settings.coord.load_scale)
        for fid, f in feeders.items()
    }
    op = replace(nominal_operating_point(net), load_scale=settings.coord.load_scale)
    vsm0, _ = evaluate_vsm(net, feeders, op, vsm_model)
    target = vsm0 + 1.0
    traces = {
        mode: run_loop(net, feeders, op, vsm_model, dx_models, target, mode, settings.coord, Q_ONLY)
        for mode in ("sensitivity", "equal")
    }
    sens, equal = traces["sensitivity"], traces["equal"]
    assert sens.records and equal.records
    assert sens.records[0].requested_mvar <= equal.records[0].requested_mvar + 1e-6
    assert sens.active_controllers <= equal.active_controllers
