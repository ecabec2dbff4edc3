"""
Aggregated DER reactive capability seen from the substation.

Two LPs over the DER reactive set points (and the squared substation
voltage, which the OLTC can move within its range) bound the total DER
reactive injection under LinDistFlow voltage limits. Injections are kVAr per
DER; voltages are squared pu.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from tdvsm.dxflow.lindistflow import der_incidence, path_matrices, solve_lindistflow
from tdvsm.errors import InfeasibleProblemError
from tdvsm.netmodel.capability import der_q_limits
from tdvsm.solvers.lp import solve_lp


@dataclass
class CapabilityRange:
    q_min_agg: float  # kVAr, total DER injection
    q_max_agg: float
    q_base: float  # substation reactive inflow with every DER at zero, kVAr
    q_der_min: np.ndarray = None  # per-DER set points at each extreme
    q_der_max: np.ndarray = None
    binding_min: List[str] = field(default_factory=list)
    binding_max: List[str] = field(default_factory=list)

    @property
    def substation_range(self):
        """Range of the substation reactive inflow (kVAr); injection lowers the inflow."""
        return self.q_base - self.q_max_agg, self.q_base - self.q_min_agg

    def clamp(self, q):
        return float(np.clip(q, self.q_min_agg, self.q_max_agg))


def v0_bounds(feeder, v_tm):
    """Squared substation voltage reachable through the OLTC at primary voltage ``v_tm``."""
    v_tm = abs(v_tm)
    return (v_tm * feeder.oltc.tap_min) ** 2, (v_tm * feeder.oltc.tap_max) ** 2


def voltage_rows(feeder, to_nodes, load_scale=1.0):
    """
    Voltage-limit rows over ``[y, v0]`` where ``to_nodes`` maps the decision
    vector ``y`` to nodal reactive injections in kVAr.

    Returns (A_ub, b_ub, names) for v_min <= v <= v_max at every node but the
    substation.
    """
    p_load, q_load = feeder.load_pu(load_scale)
    p_der = np.zeros(len(feeder.nodes))
    for der in feeder.ders:
        p_der[der.node] += der.p_gen / feeder.base_kva
    R, X = path_matrices(feeder)
    # v = v0 + fixed + G y
    fixed = -2.0 * (R @ (p_load - p_der) + X @ q_load)
    G = 2.0 * X @ to_nodes / feeder.base_kva
    v_min = np.array([nd.v_min for nd in feeder.nodes])
    v_max = np.array([nd.v_max for nd in feeder.nodes])
    rows, rhs, names = [], [], []
    for i in range(1, len(feeder.nodes)):
        rows.append(np.r_[G[i], 1.0])
        rhs.append(v_max[i] - fixed[i])
        names.append(f"v_max[{i}]")
        rows.append(np.r_[-G[i], -1.0])
        rhs.append(fixed[i] - v_min[i])
        names.append(f"v_min[{i}]")
    width = to_nodes.shape[1] + 1
    A = np.array(rows).reshape(-1, width)
    return A, np.array(rhs), names


def capability_range(feeder, v_tm, load_scale=1.0, dump_path=None):
    """
    Minimum and maximum total DER reactive injection (kVAr) that keeps every
    node within its voltage limits for some OLTC position.

    Raises InfeasibleProblemError when no tap satisfies the limits.
    """
    n = len(feeder.ders)
    v_lo, v_hi = v0_bounds(feeder, v_tm)
    A_ub, b_ub, ub_names = voltage_rows(feeder, der_incidence(feeder), load_scale)
    bounds = [der_q_limits(d) for d in feeder.ders] + [(v_lo, v_hi)]
    names = {"ub": ub_names, "var": [f"q_der[{k}]" for k in range(n)] + ["v0_sq"]}
    cost = np.r_[np.ones(n), 0.0]
    try:
        low = solve_lp(cost, A_ub, b_ub, bounds=bounds, names=names, dump_path=dump_path)
        high = solve_lp(-cost, A_ub, b_ub, bounds=bounds, names=names)
    except InfeasibleProblemError as e:
        raise InfeasibleProblemError(f"feeder {feeder.id}: no DER dispatch meets the voltage limits at V={abs(v_tm):.4f}", e.diagnosis)
    q_base = solve_lindistflow(feeder, 1.0, None, load_scale).q0 * feeder.base_kva
    result = CapabilityRange(
        q_min_agg=float(low.x[:n].sum()),
        q_max_agg=float(high.x[:n].sum()),
        q_base=float(q_base),
        q_der_min=low.x[:n],
        q_der_max=high.x[:n],
        binding_min=low.binding,
        binding_max=high.binding,
    )
    logging.debug(f"Feeder {feeder.id}: DER reactive range [{result.q_min_agg:.2f}, {result.q_max_agg:.2f}] kVAr")
    return result
