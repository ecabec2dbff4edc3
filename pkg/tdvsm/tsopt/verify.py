from dataclasses import replace

import numpy as np

from tdvsm.cosim import cosimulate
from tdvsm.errors import CoSimDivergedError
from tdvsm.margin.state import state_vector


def apply_dispatch(net, op, dispatch):
    """
    Shift voltage set points by ``dispatch.delta_v`` and realize the boundary
    reactive requests as extra bus injections.
    """
    v_gen = list(op.v_gen)
    for ci, dv in dispatch.dv.items():
        v_gen[ci] += dv
    q_inject = list(op.q_inject) if op.q_inject else [0.0] * len(net.buses)
    idx = net.bus_index
    for bus, dq in dispatch.dq.items():
        q_inject[idx[bus]] += dq
    return replace(op, v_gen=tuple(v_gen), q_inject=tuple(q_inject))


def evaluate_vsm(net, feeders, op, vsm_model, contingency=None, cosim_config=None, pf_config=None, warm_start=None):
    """Co-simulate ``op`` and evaluate the surrogate there. Returns (VSM MW, CoSimResult)."""
    result = cosimulate(net, feeders, op, contingency, cosim_config, pf_config, warm_start=warm_start)
    if not result.converged:
        raise CoSimDivergedError(f"co-simulation failed after dispatch: {result.reason}")
    return float(vsm_model.forward(state_vector(result.net or net, result))), result


def verify_dispatch(net, feeders, op, dispatch, vsm_model, contingency=None, cosim_config=None, pf_config=None, warm_start=None):
    """
    Nonlinear check of a TSO dispatch: apply it, re-run the co-simulation and
    evaluate the surrogate on the new state. Returns (VSM MW, CoSimResult).
    """
    new_op = apply_dispatch(net, op, dispatch)
    vsm, result = evaluate_vsm(net, feeders, new_op, vsm_model, contingency, cosim_config, pf_config, warm_start)
    if not np.isfinite(vsm):
        raise CoSimDivergedError("surrogate returned a non-finite margin")
    return vsm, result
