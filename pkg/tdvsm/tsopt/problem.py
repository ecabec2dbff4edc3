"""
Transmission-level reactive support QP.

Controls are generator/IBR voltage set-point shifts and the DER reactive
injection requested at each boundary bus. The objective charges each control
by its weight; a linearized margin row built from the surrogate gradient
asks for the target margin, and bus voltages and unit reactive outputs are
kept in range through first-order power-flow sensitivities.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from tdvsm.dsopt.capability import capability_range
from tdvsm.errors import ConfigError, DegenerateSensitivityError, InfeasibleProblemError
from tdvsm.margin.state import split_index, state_vector
from tdvsm.netmodel.capability import controller_q_limits
from tdvsm.solvers.kkt import KktReport, check_kkt
from tdvsm.solvers.lp import solve_lp
from tdvsm.solvers.qp import solve_qp
from tdvsm.txflow.sensitivities import sensitivities

WEIGHT_EPS = 1.0e-12


@dataclass
class TsoConfig:
    max_dv: float = 0.05  # pu box on every set-point shift
    weight_floor: float = 1.0e-6
    use_voltage_controls: bool = True
    use_reactive_controls: bool = True
    include_slack_voltage: bool = False

    def __post_init__(self):
        self.max_dv = float(self.max_dv)
        self.weight_floor = float(self.weight_floor)
        if self.max_dv <= 0.0 or self.weight_floor <= 0.0:
            raise ConfigError("max_dv and weight_floor must be positive")
        if not (self.use_voltage_controls or self.use_reactive_controls):
            raise ConfigError("at least one control group must be enabled")


@dataclass
class TsoProblem:
    x: np.ndarray  # state vector at the current point
    vsm_current: float
    vsm_min: float
    v_controls: List[int]  # controller indices
    q_controls: List[int]  # boundary bus ids
    grad_v: np.ndarray  # dVSM/dV_g, MW per pu
    grad_q: np.ndarray  # dVSM/dQ^g (injection), MW per MVAr
    a_v: np.ndarray
    a_q: np.ndarray
    v_mag: np.ndarray  # current bus voltages
    v_min: np.ndarray
    v_max: np.ndarray
    dV_dVg: np.ndarray  # buses x v_controls
    dV_dQ: np.ndarray  # buses x q_controls, pu per MVAr
    dQg_dVg: np.ndarray  # per v_control, MVAr per pu
    qg_lo: np.ndarray  # allowed change of unit Q, MVAr
    qg_hi: np.ndarray
    dv_box: np.ndarray  # (lo, hi) per v_control
    dq_box: np.ndarray  # (lo, hi) per q_control, MVAr
    config: TsoConfig = field(default_factory=TsoConfig)
    bus_ids: List[int] = field(default_factory=list)
    capability: Dict[int, object] = field(default_factory=dict)

    @property
    def gap(self):
        return self.vsm_min - self.vsm_current


@dataclass
class TsoDispatch:
    v_controls: List[int]
    q_controls: List[int]
    delta_v: np.ndarray
    delta_q: np.ndarray
    predicted_v: np.ndarray
    predicted_vsm: float
    objective: float
    binding: List[str] = field(default_factory=list)
    kkt: KktReport = None
    feasible: bool = True

    @property
    def dv(self):
        return dict(zip(self.v_controls, self.delta_v.tolist()))

    @property
    def dq(self):
        return dict(zip(self.q_controls, self.delta_q.tolist()))

    def active_controls(self, tol=1.0e-3):
        return int(np.sum(np.abs(self.delta_v) > tol) + np.sum(np.abs(self.delta_q) > tol))


def _group_weights(grad, name):
    s = np.abs(np.asarray(grad, dtype=float))
    if s.size == 0:
        return s
    if not np.all(np.isfinite(s)):
        raise DegenerateSensitivityError(f"{name} sensitivities are not finite")
    total = float(s.sum())
    if total < WEIGHT_EPS:
        raise DegenerateSensitivityError(f"{name} sensitivities sum to zero; weights undefined")
    return 1.0 - s / total


def build_weights(grad_v, grad_q):
    """a = 1 - |g| / sum |g| within each control group."""
    return _group_weights(grad_v, "voltage set-point"), _group_weights(grad_q, "boundary reactive")


def _relaxed(lo, hi):
    # a limit already violated at the current point must not make zero change infeasible
    return np.minimum(lo, 0.0), np.maximum(hi, 0.0)


def build_tso_problem(
    net,
    feeders,
    result,
    op,
    vsm_model,
    vsm_min,
    config=None,
    weight_mode="sensitivity",
    capability=None,
):
    """
    Linearize the co-simulated point ``result`` (taken at ``op``) into a TsoProblem.

    ``capability`` optionally maps boundary bus -> CapabilityRange; missing
    entries are computed at the bus's current voltage.
    """
    config = config or TsoConfig()
    if weight_mode not in ("sensitivity", "equal"):
        raise ConfigError(f"weight mode should be sensitivity/equal, not {weight_mode}")
    if not isinstance(feeders, dict):
        feeders = {f.id: f for f in feeders}
    net_c = result.net or net
    tx = result.tx
    idx = net_c.bus_index

    x = state_vector(net_c, result)
    vsm_current = float(vsm_model.forward(x))
    grad = vsm_model.gradient(x)
    _, vg_block, _, ql_block = split_index(net_c)
    grad_vg = grad[vg_block]
    grad_ql = grad[ql_block]
    load_buses = net_c.load_buses

    q_controls = list(net_c.boundary_buses) if config.use_reactive_controls else []
    sens = sensitivities(net_c, tx, load_buses=q_controls)
    slack = net_c.slack_controller
    v_controls = []
    if config.use_voltage_controls:
        for ci in range(len(net_c.controllers)):
            if ci == slack and not config.include_slack_voltage:
                continue
            if not np.any(sens.dV_dVg[:, ci]):
                continue  # unit held at a reactive limit
            v_controls.append(ci)

    grad_v = np.array([grad_vg[ci] for ci in v_controls])
    # injection lowers the net load seen by the surrogate
    grad_q = np.array([-grad_ql[load_buses.index(b)] for b in q_controls])
    if weight_mode == "sensitivity":
        a_v, a_q = build_weights(grad_v, grad_q)
    else:
        a_v, a_q = np.ones(len(v_controls)), np.ones(len(q_controls))

    limits = controller_q_limits(net_c)
    qg_lo = np.array([limits[ci][0] - tx.gen_q[ci] for ci in v_controls])
    qg_hi = np.array([limits[ci][1] - tx.gen_q[ci] for ci in v_controls])
    qg_lo, qg_hi = _relaxed(qg_lo, qg_hi)

    capability = dict(capability or {})
    dq_box = []
    links = net_c.boundary_links
    for b in q_controls:
        k = net_c.links_at(b)[0]
        link = links[k]
        feeder = feeders[link.feeder]
        if b not in capability:
            scale = op.load_scale * (op.feeder_scale[k] if op.feeder_scale else 1.0)
            capability[b] = capability_range(feeder, tx.v_mag[idx[b]], scale)
        cap = capability[b]
        q_now = float(op.der_q_array(k, len(feeder.ders)).sum())
        lo = link.beta * (cap.q_min_agg - q_now) / 1000.0
        hi = link.beta * (cap.q_max_agg - q_now) / 1000.0
        dq_box.append((min(lo, 0.0), max(hi, 0.0)))
    dq_box = np.array(dq_box, dtype=float).reshape(-1, 2)
    dv_box = np.tile([-config.max_dv, config.max_dv], (len(v_controls), 1)).astype(float)

    v_min = np.array([bus.v_min for bus in net_c.buses])
    v_max = np.array([bus.v_max for bus in net_c.buses])
    return TsoProblem(
        x=x,
        vsm_current=vsm_current,
        vsm_min=float(vsm_min),
        v_controls=v_controls,
        q_controls=q_controls,
        grad_v=grad_v,
        grad_q=grad_q,
        a_v=a_v,
        a_q=a_q,
        v_mag=tx.v_mag.copy(),
        v_min=v_min,
        v_max=v_max,
        dV_dVg=sens.dV_dVg[:, v_controls],
        dV_dQ=sens.dV_dQ,
        dQg_dVg=sens.dQg_dVg[v_controls],
        qg_lo=qg_lo,
        qg_hi=qg_hi,
        dv_box=dv_box,
        dq_box=dq_box,
        config=config,
        bus_ids=net_c.bus_ids,
        capability=capability,
    )


def _constraints(problem):
    """Inequality rows (A, b, names) over [dV, dQ] excluding the margin row."""
    nv, nq = len(problem.v_controls), len(problem.q_controls)
    S = np.hstack([problem.dV_dVg, problem.dV_dQ]).reshape(len(problem.v_mag), nv + nq)
    lo, hi = _relaxed(problem.v_min - problem.v_mag, problem.v_max - problem.v_mag)
    rows = [S, -S]
    rhs = [hi, -lo]
    names = [f"v_max[{b}]" for b in problem.bus_ids] + [f"v_min[{b}]" for b in problem.bus_ids]
    if nv:
        D = np.zeros((nv, nv + nq))
        D[np.arange(nv), np.arange(nv)] = problem.dQg_dVg
        rows += [D, -D]
        rhs += [problem.qg_hi, -problem.qg_lo]
        names += [f"qg_max[{ci}]" for ci in problem.v_controls] + [f"qg_min[{ci}]" for ci in problem.v_controls]
    bounds = [tuple(r) for r in problem.dv_box] + [tuple(r) for r in problem.dq_box]
    var_names = [f"dV[{ci}]" for ci in problem.v_controls] + [f"dQ[{b}]" for b in problem.q_controls]
    return np.vstack(rows), np.concatenate(rhs), names, bounds, var_names


def max_linear_vsm(problem):
    """Largest linearized margin reachable inside every constraint except the target."""
    A, b, names, bounds, var_names = _constraints(problem)
    grad = np.r_[problem.grad_v, problem.grad_q]
    lp = solve_lp(-grad, A, b, bounds=bounds, names={"ub": names, "var": var_names})
    return problem.vsm_current + float(grad @ lp.x)


def solve_tso(problem):
    """
    Weighted least-change dispatch meeting the linearized target margin.

    Raises InfeasibleProblemError carrying ``max_vsm`` when the target is out
    of reach within the control boxes.
    """
    nv, nq = len(problem.v_controls), len(problem.q_controls)
    n = nv + nq
    if problem.gap <= 0.0:
        return TsoDispatch(
            problem.v_controls,
            problem.q_controls,
            np.zeros(nv),
            np.zeros(nq),
            problem.v_mag.copy(),
            problem.vsm_current,
            0.0,
        )

    A, b, names, bounds, var_names = _constraints(problem)
    grad = np.r_[problem.grad_v, problem.grad_q]
    A_ub = np.vstack([-grad[None, :], A])
    b_ub = np.r_[-problem.gap, b]
    ub_names = ["vsm_min"] + names
    weights = np.maximum(np.r_[problem.a_v, problem.a_q], problem.config.weight_floor)
    H = 2.0 * np.diag(weights)
    g = np.zeros(n)
    try:
        qp = solve_qp(H, g, A_ub, b_ub, bounds=bounds, names={"ub": ub_names, "var": var_names})
    except InfeasibleProblemError as e:
        try:
            best = max_linear_vsm(problem)
        except InfeasibleProblemError:
            best = None
        msg = f"target margin {problem.vsm_min:.2f} MW out of reach"
        if best is not None:
            msg += f" (at most {best:.2f} MW)"
        raise InfeasibleProblemError(msg, e.diagnosis, best)

    kkt = check_kkt(qp, g, H, A_ub, b_ub, bounds=bounds)
    y = qp.x
    predicted_v = problem.v_mag + np.hstack([problem.dV_dVg, problem.dV_dQ]).reshape(-1, n) @ y
    dispatch = TsoDispatch(
        v_controls=problem.v_controls,
        q_controls=problem.q_controls,
        delta_v=y[:nv],
        delta_q=y[nv:],
        predicted_v=predicted_v,
        predicted_vsm=problem.vsm_current + float(grad @ y),
        objective=qp.objective,
        binding=qp.binding,
        kkt=kkt,
    )
    logging.debug(
        f"TSO dispatch: {dispatch.active_controls()} active controls, predicted margin {dispatch.predicted_vsm:.2f} MW"
    )
    return dispatch
