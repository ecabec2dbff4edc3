import math
from dataclasses import replace

import numpy as np
import pytest

from tdvsm.errors import ConfigError
from tdvsm.netmodel.contingency import apply_contingency, branch_outage
from tdvsm.netmodel.types import CapabilityCurve, nominal_operating_point
from tdvsm.txflow import PowerFlowConfig, check_sensitivities, sensitivities, solve_nr
from tdvsm.txflow.newton import dump_mismatch_csv
from tdvsm.utils.misc import read_csv


def _with_load(net, p_mw):
    op = nominal_operating_point(net)
    return replace(op, p_load=(0.0, p_mw), q_load=(0.0, 0.0))


def test_two_bus_closed_form(two_bus):
    net, _ = two_bus
    sol = solve_nr(net, nominal_operating_point(net))
    theta = 0.5 * math.asin(2 * 0.1 * 0.5)
    assert sol.converged
    assert sol.v_mag[1] == pytest.approx(math.cos(theta), abs=1e-6)
    assert sol.v_ang[1] == pytest.approx(-theta, abs=1e-6)
    assert sol.gen_p[0] == pytest.approx(50.0, abs=1e-5)


def test_two_bus_beyond_nose_does_not_converge(two_bus):
    net, _ = two_bus
    sol = solve_nr(net, _with_load(net, 600.0))
    assert not sol.converged


def test_unloaded_network_solves_immediately(two_bus):
    net, _ = two_bus
    sol = solve_nr(net, _with_load(net, 0.0))
    assert sol.converged
    assert sol.iterations <= 1
    np.testing.assert_allclose(sol.v_mag, 1.0, atol=1e-12)


def test_mismatch_history(five_bus, tmp_path):
    net, _ = five_bus
    sol = solve_nr(net, nominal_operating_point(net))
    assert sol.converged
    assert sol.history[-1] <= PowerFlowConfig().tol
    path = str(tmp_path / "mismatch.csv")
    dump_mismatch_csv(path, sol)
    frame = read_csv(path)
    assert list(frame.columns) == ["iter", "mismatch"]
    assert len(frame) == len(sol.history)


def test_voltage_controlled_buses_hold_set_points(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    sol = solve_nr(net, op)
    idx = net.bus_index
    for ci, unit in enumerate(net.controllers):
        if ci not in sol.switched:
            assert sol.v_mag[idx[unit.bus]] == pytest.approx(op.v_gen[ci], abs=1e-9)


def test_q_limit_switches_unit_to_pq(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    base = solve_nr(net, op)
    assert 1 not in base.switched
    q = base.gen_q[1]
    gens = list(net.generators)
    gens[1] = replace(gens[1], q_min=q - 5.0, q_max=q - 1.0, capability=CapabilityCurve())
    limited = replace(net, generators=tuple(gens))
    sol = solve_nr(limited, op)
    assert sol.converged
    assert sol.switched[1] == pytest.approx(q - 1.0)
    assert sol.gen_q[1] == pytest.approx(q - 1.0)
    assert sol.v_mag[net.bus_index[2]] < op.v_gen[1]


def test_fixed_q_ibr_mode(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    sol = solve_nr(net, op, PowerFlowConfig(ibr_mode="fixed_q"))
    assert sol.converged
    assert sol.gen_q[2] == 0.0
    assert net.bus_index[3] in sol.pq


def test_unknown_ibr_mode():
    with pytest.raises(ConfigError):
        PowerFlowConfig(ibr_mode="droop")


def test_contingency_changes_voltages(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    intact = solve_nr(net, op)
    outage = solve_nr(apply_contingency(net, branch_outage(5)), op)
    assert outage.converged
    assert not np.allclose(intact.v_mag, outage.v_mag)


def test_sensitivities_match_finite_differences(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    sol = solve_nr(net, op)
    analytic, fd = check_sensitivities(net, op, sol)
    np.testing.assert_allclose(analytic.dV_dVg, fd.dV_dVg, atol=1e-5)
    np.testing.assert_allclose(analytic.dV_dQ, fd.dV_dQ, atol=1e-7)
    np.testing.assert_allclose(analytic.dQg_dVg, fd.dQg_dVg, rtol=1e-4, atol=1e-2)


def test_sensitivity_signs(five_bus):
    net, _ = five_bus
    sol = solve_nr(net, nominal_operating_point(net))
    sens = sensitivities(net, sol)
    idx = net.bus_index
    col = sens.load_buses.index(5)
    # reactive injection at a PQ bus raises its own voltage
    assert sens.dV_dQ[idx[5], col] > 0.0
    # regulated buses are insensitive to injections elsewhere
    assert sens.dV_dQ[idx[1], col] == 0.0
    assert sens.dV_dVg[idx[1], net.slack_controller] == pytest.approx(1.0)


def _series_losses(net, sol):
    idx = net.bus_index
    V = sol.V
    losses = 0.0
    for br in net.branches:
        assert br.tap == 1.0
        current = (V[idx[br.from_bus]] - V[idx[br.to_bus]]) / complex(br.r, br.x)
        losses += abs(current) ** 2 * br.r
    return losses * net.base_mva


def test_power_balance_closes_on_losses(five_bus):
    net, _ = five_bus
    sol = solve_nr(net, nominal_operating_point(net))
    losses = _series_losses(net, sol)
    assert losses > 0.0
    assert sol.p_inj.sum() == pytest.approx(losses, abs=1e-5)
    assert sol.gen_p.sum() - sol.p_load.sum() == pytest.approx(losses, abs=1e-5)


def test_q_limit_switching_is_idempotent(five_bus):
    net, _ = five_bus
    op = nominal_operating_point(net)
    q = solve_nr(net, op).gen_q[1]
    gens = list(net.generators)
    gens[1] = replace(gens[1], q_min=q - 5.0, q_max=q - 1.0, capability=CapabilityCurve())
    limited = replace(net, generators=tuple(gens))
    first = solve_nr(limited, op)
    again = solve_nr(limited, op, warm_start=first)
    assert again.converged
    assert again.switched == first.switched
    np.testing.assert_allclose(again.v_mag, first.v_mag, atol=1e-9)
    np.testing.assert_allclose(again.gen_q, first.gen_q, atol=1e-6)
