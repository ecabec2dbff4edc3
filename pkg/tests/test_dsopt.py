import numpy as np
import pytest

from conftest import dx_model
from tdvsm.dsopt import RedispatchResult, bfs_check, capability_range, dx_weights, redispatch
from tdvsm.errors import DegenerateSensitivityError, InfeasibleProblemError
from tdvsm.netmodel.capability import der_q_limits
from tdvsm.netmodel.types import BoundaryLink, DerUnit, DxEdge, DxNode, FeederModel
from tdvsm.solvers import check_kkt
from tdvsm.utils.misc import read_text

WEIGHTS = [0.1, 0.9, 0.5, 0.7]


@pytest.fixture(scope="module")
def desk_feeder(desk):
    net, feeders = desk
    return feeders[0], net.boundary_links[0]


def test_capability_range(desk_feeder, tmp_path):
    feeder, _ = desk_feeder
    path = str(tmp_path / "capability.lp")
    cap = capability_range(feeder, 1.0, dump_path=path)
    total = sum(der_q_limits(d)[1] for d in feeder.ders)
    assert -total - 1e-6 <= cap.q_min_agg <= 0.0 <= cap.q_max_agg <= total + 1e-6
    assert cap.q_der_max.sum() == pytest.approx(cap.q_max_agg)
    lo, hi = cap.substation_range
    assert lo == pytest.approx(cap.q_base - cap.q_max_agg)
    assert hi == pytest.approx(cap.q_base - cap.q_min_agg)
    assert cap.clamp(1e9) == cap.q_max_agg
    assert "Minimize" in read_text(path)


def test_dx_weights(desk_dx_models):
    model = desk_dx_models["desk7"]
    w = dx_weights(model, np.zeros(4))
    np.testing.assert_allclose(w, 1.0 - np.array([1.0, 0.4, 0.8, 0.6]) / 2.8)
    assert np.argmin(w) == 0
    with pytest.raises(DegenerateSensitivityError):
        dx_weights(dx_model(4, [0.0, 0.0, 0.0, 0.0]), np.zeros(4))


def test_redispatch_prefers_low_weights(desk_feeder):
    feeder, link = desk_feeder
    res = redispatch(feeder, 3.0, link, WEIGHTS, alpha=0.1)
    assert res.feasible
    assert res.target == pytest.approx(3.0 * 1000.0 / link.beta)
    assert res.q_agg == pytest.approx(res.target)
    assert res.q_der[0] == pytest.approx(res.target, abs=1e-6)
    assert np.all(res.q_phase >= -1e-9)
    avg = res.q_der[0] / 3.0
    assert np.all(np.abs(res.q_phase[0] - avg) <= 0.1 * avg + 0.01 + 1e-9)


def test_redispatch_negative_request(desk_feeder):
    feeder, link = desk_feeder
    res = redispatch(feeder, -3.0, link, WEIGHTS, alpha=0.1)
    assert res.q_agg == pytest.approx(-100.0)
    assert np.all(res.q_phase <= 1e-9)


def test_zero_alpha_balances_phases(desk_feeder):
    feeder, link = desk_feeder
    res = redispatch(feeder, 3.0, link, WEIGHTS, alpha=0.0)
    for k, der in enumerate(feeder.ders):
        phases = res.q_phase[k, list(der.phases)]
        np.testing.assert_allclose(phases, phases.mean(), atol=1e-9)


def test_request_beyond_capability(desk_feeder):
    feeder, link = desk_feeder
    with pytest.raises(InfeasibleProblemError) as err:
        redispatch(feeder, 100.0, link, WEIGHTS, alpha=0.1)
    assert "cannot deliver" in str(err.value)
    assert err.value.diagnosis


def test_redispatch_argument_checks(desk_feeder):
    feeder, link = desk_feeder
    with pytest.raises(ValueError):
        redispatch(feeder, 1.0, link, WEIGHTS[:3], alpha=0.1)
    with pytest.raises(ValueError):
        redispatch(feeder, 1.0, link, WEIGHTS, alpha=-0.1)


def test_bfs_confirms_linear_dispatch(desk_feeder):
    feeder, link = desk_feeder
    res = redispatch(feeder, 3.0, link, WEIGHTS, alpha=0.1)
    idle = RedispatchResult(q_phase=np.zeros((len(feeder.ders), 3)), target=0.0, objective=0.0, feasible=True)
    bfs_idle, lin_idle = bfs_check(feeder, idle)
    bfs_res, lin_res = bfs_check(feeder, res)
    assert lin_idle - lin_res == pytest.approx(res.target, rel=1e-9)
    assert bfs_idle - bfs_res == pytest.approx(res.target, rel=0.1)


def _two_der_feeder(v2_max=0.99, s_b=600.0):
    """0 -> 1 -> 2 with a DER at each of 1 and 2; node 2 can only stay low if its DER absorbs."""
    nodes = (DxNode(0), DxNode(1, v_min=1.0), DxNode(2, v_max=v2_max))
    edges = (DxEdge(0, 1, 0.01, 0.02), DxEdge(1, 2, 0.01, 0.1))
    ders = (DerUnit(node=1, p_gen=0.0, s_rating=1000.0), DerUnit(node=2, p_gen=0.0, s_rating=s_b))
    return FeederModel(id="mixed", nodes=nodes, edges=edges, ders=ders, base_kva=1000.0)


def _within_band(res, feeder, alpha, eps=0.01):
    for k, der in enumerate(feeder.ders):
        if len(der.phases) < 2:
            continue
        phases = res.q_phase[k, list(der.phases)]
        avg = phases.mean()
        assert np.all(np.abs(phases - avg) <= alpha * abs(avg) + eps + 1e-9), (k, phases)


def test_mixed_sign_dispatch_reaches_capability():
    feeder = _two_der_feeder()
    link = BoundaryLink(tx_bus=1, feeder="mixed")
    cap = capability_range(feeder, 1.0)
    assert cap.q_max_agg == pytest.approx(950.0, abs=1e-6)
    assert cap.q_min_agg == pytest.approx(-1600.0, abs=1e-6)

    res = redispatch(feeder, 0.475, link, [0.5, 0.5], alpha=0.1)
    assert res.q_agg == pytest.approx(475.0, abs=1e-6)
    assert res.q_der[1] == pytest.approx(-50.0, abs=1e-6)
    assert res.q_der[0] == pytest.approx(525.0, abs=1e-6)
    assert res.objective == pytest.approx(0.5 * 575.0, abs=1e-6)

    for q in np.linspace(cap.q_min_agg, cap.q_max_agg, 9)[1:-1]:
        res = redispatch(feeder, q / 1000.0, link, [0.2, 0.8], alpha=0.1)
        assert res.q_agg == pytest.approx(q, abs=1e-6)
        assert res.q_der[1] <= -50.0 + 1e-6
        _within_band(res, feeder, 0.1)
    with pytest.raises(InfeasibleProblemError):
        redispatch(feeder, 0.96, link, [0.5, 0.5], alpha=0.1)


def test_redispatch_satisfies_kkt(desk_feeder):
    feeder, link = desk_feeder
    cap = capability_range(feeder, 1.0)
    rng = np.random.default_rng(21)
    for i in range(20):
        weights = rng.uniform(0.05, 1.0, size=len(feeder.ders))
        alpha = float(rng.uniform(0.0, 0.3))
        edge = cap.q_max_agg if rng.random() < 0.5 else cap.q_min_agg
        target = float(rng.uniform(0.05, 0.95)) * edge
        res = redispatch(feeder, target * link.beta / 1000.0, link, weights, alpha=alpha)
        p = res.problem
        report = check_kkt(res.lp, p.c, None, p.A_ub, p.b_ub, p.A_eq, p.b_eq, p.bounds)
        assert report.ok(), (i, report)
        assert res.q_agg == pytest.approx(target, abs=1e-6)


def test_dx_weights_sum_and_order():
    rng = np.random.default_rng(5)
    for n in range(2, 8):
        slopes = rng.uniform(0.05, 3.0, size=n)
        w = dx_weights(dx_model(n, slopes), np.zeros(n))
        assert w.sum() == pytest.approx(n - 1.0, abs=1e-12)
        assert np.all((w >= 0.0) & (w <= 1.0))
        np.testing.assert_array_equal(np.argsort(w, kind="stable"), np.argsort(-slopes, kind="stable"))


def test_capability_single_der_is_its_rating():
    nodes = (DxNode(0), DxNode(1))
    feeder = FeederModel(id="one", nodes=nodes, edges=(DxEdge(0, 1, 0.01, 0.02),), ders=(DerUnit(node=1, p_gen=0.0, s_rating=10.0),))
    cap = capability_range(feeder, 1.0)
    assert cap.q_min_agg == pytest.approx(-10.0, abs=1e-9)
    assert cap.q_max_agg == pytest.approx(10.0, abs=1e-9)


def test_capability_without_ders_is_a_point():
    nodes = (DxNode(0), DxNode(1, (10.0, 10.0, 10.0), (5.0, 5.0, 5.0)))
    feeder = FeederModel(id="none", nodes=nodes, edges=(DxEdge(0, 1, 0.01, 0.02),))
    cap = capability_range(feeder, 1.0)
    assert cap.q_min_agg == 0.0 and cap.q_max_agg == 0.0
    lo, hi = cap.substation_range
    assert lo == hi == pytest.approx(cap.q_base)
    assert cap.q_base == pytest.approx(15.0, rel=1e-9)


def test_capability_widens_with_looser_limits():
    prev = None
    for v2_max in (0.99, 1.0, 1.02, 1.05, 1.1025):
        cap = capability_range(_two_der_feeder(v2_max=v2_max), 1.0)
        if prev is not None:
            assert cap.q_max_agg >= prev.q_max_agg - 1e-9
            assert cap.q_min_agg <= prev.q_min_agg + 1e-9
        prev = cap
    prev = None
    for s_b in (100.0, 300.0, 600.0, 900.0):
        cap = capability_range(_two_der_feeder(s_b=s_b), 1.0)
        if prev is not None:
            assert cap.q_max_agg >= prev.q_max_agg - 1e-9
            assert cap.q_min_agg <= prev.q_min_agg + 1e-9
        prev = cap


@pytest.mark.parametrize("request_mvar", [3.0, 1.0, -1.5, -3.0])
def test_phase_band_holds(desk_feeder, request_mvar):
    feeder, link = desk_feeder
    res = redispatch(feeder, request_mvar, link, WEIGHTS, alpha=0.1)
    _within_band(res, feeder, 0.1)
