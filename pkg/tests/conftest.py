import numpy as np
import pytest

from tdvsm.cosim import cosimulate
from tdvsm.margin.state import feature_names, state_vector
from tdvsm.mlpvsm.model import MlpModel
from tdvsm.netmodel.case_io import bundled_case, load_case
from tdvsm.netmodel.types import DerUnit, DxEdge, DxNode, FeederModel, nominal_operating_point


def _case(name):
    return load_case(bundled_case(name))


@pytest.fixture(scope="session")
def two_bus():
    return _case("two_bus.case")


@pytest.fixture(scope="session")
def five_bus():
    return _case("five_bus.case")


@pytest.fixture(scope="session")
def desk():
    return _case("desk.case")


@pytest.fixture(scope="session")
def ieee30_37():
    return _case("ieee30_37.case")


@pytest.fixture(scope="session")
def desk_nominal(desk):
    """(net, feeders by id, operating point, converged CoSimResult) at the nominal desk point."""
    net, feeders = desk
    feeders = {f.id: f for f in feeders}
    op = nominal_operating_point(net)
    result = cosimulate(net, feeders, op)
    assert result.converged
    return net, feeders, op, result


@pytest.fixture
def small_feeder():
    """Four-node balanced feeder: 0 -> 1 -> 2 and 1 -> 3, one DER at node 2."""
    nodes = (
        DxNode(0),
        DxNode(1, (50.0, 50.0, 50.0), (20.0, 20.0, 20.0)),
        DxNode(2, (80.0, 80.0, 80.0), (30.0, 30.0, 30.0)),
        DxNode(3, (40.0, 40.0, 40.0), (10.0, 10.0, 10.0)),
    )
    edges = (DxEdge(0, 1, 0.01, 0.02), DxEdge(1, 2, 0.01, 0.02), DxEdge(1, 3, 0.02, 0.03))
    ders = (DerUnit(node=2, p_gen=60.0, s_rating=150.0),)
    return FeederModel(id="small", nodes=nodes, edges=edges, ders=ders, base_kva=1000.0)


def linear_vsm_model(net, x0, weights, base=50.0, scale=100.0):
    """
    One tanh unit centred on ``x0``: VSM(x) = base + scale * tanh(w . (x - x0)).

    ``weights`` maps feature name -> w entry; the gradient at ``x0`` is scale * w.
    """
    names = feature_names(net)
    w = np.zeros(len(names))
    for name, value in weights.items():
        w[names.index(name)] = value
    return MlpModel(
        w_input=w[None, :],
        b_input=[-float(w @ x0)],
        w_output=[scale],
        b_output=base,
        feature_names=names,
    )


@pytest.fixture(scope="session")
def desk_vsm_model(desk_nominal):
    """Synthetic surrogate driven by the boundary reactive loads of buses 3, 4 and 5."""
    net, _, _, result = desk_nominal
    x0 = state_vector(net, result)
    # load buses are [2, 3, 4, 5]; QL_2..QL_4 belong to the boundary buses
    return linear_vsm_model(net, x0, {"QL_2": -0.01, "QL_3": -0.02, "QL_4": -0.004})


def dx_model(n_der, slopes, base=500.0):
    """Feeder surrogate with fixed per-DER slopes of the substation reactive demand."""
    w = np.asarray(slopes, dtype=float) * 1.0e-3
    return MlpModel(
        w_input=w[None, :],
        b_input=[0.0],
        w_output=[-1000.0],
        b_output=base,
        feature_names=[f"qg_{k + 1}" for k in range(n_der)],
        meta={"feeder": "desk7"},
    )


@pytest.fixture(scope="session")
def desk_dx_models(desk):
    _, feeders = desk
    feeder = feeders[0]
    return {feeder.id: dx_model(len(feeder.ders), [1.0, 0.4, 0.8, 0.6])}
