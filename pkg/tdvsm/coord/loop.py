"""
Iterative TSO-DSO coordination.

Every iteration linearizes the current co-simulated point, asks the
transmission QP for set-point shifts and boundary reactive support, lets each
affected feeder re-dispatch its DERs to deliver the request (clamped to what
the feeder can do), applies everything and re-evaluates the surrogate margin
on the new co-simulation.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from tdvsm.dsopt.redispatch import dx_weights, redispatch
from tdvsm.errors import ConfigError, CoSimDivergedError, InfeasibleProblemError
from tdvsm.tsopt.problem import TsoConfig, build_tso_problem, solve_tso
from tdvsm.tsopt.verify import evaluate_vsm
from tdvsm.utils.misc import write_csv, write_json, write_text

ACTIVE_TOL = 1.0e-3


@dataclass
class CoordConfig:
    target: Optional[float] = None  # MW
    tol: float = 0.5  # MW
    max_iters: int = 10
    max_drop: float = 1.0  # MW, largest tolerated margin decrease between iterations
    alpha: float = 0.1  # phase-unbalance band of the DER re-dispatch
    weight_mode: str = "sensitivity"
    load_scale: float = 1.0

    def __post_init__(self):
        self.target = None if self.target is None else float(self.target)
        self.tol = float(self.tol)
        self.max_iters = int(self.max_iters)
        self.max_drop = float(self.max_drop)
        self.alpha = float(self.alpha)
        self.load_scale = float(self.load_scale)
        if self.weight_mode not in ("sensitivity", "equal"):
            raise ConfigError(f"weight_mode should be sensitivity/equal, not {self.weight_mode}")
        if self.max_iters < 0 or self.tol < 0.0 or self.alpha < 0.0:
            raise ConfigError("max_iters, tol and alpha must be non-negative")


@dataclass
class IterationRecord:
    iteration: int
    vsm_before: float
    predicted_vsm: float
    verified_vsm: float
    requested: Dict[int, float]  # boundary bus -> requested dQ, MVAr
    realized: Dict[int, float]  # boundary bus -> delivered dQ, MVAr
    delta_v: Dict[int, float]  # controller bus -> dV, pu
    dx: Dict[int, np.ndarray] = field(default_factory=dict)  # boundary bus -> DER x phase kVAr
    a_v: Dict[int, float] = field(default_factory=dict)
    a_q: Dict[int, float] = field(default_factory=dict)
    objective: float = 0.0
    kkt: Dict[str, float] = field(default_factory=dict)

    @property
    def requested_mvar(self):
        return float(sum(abs(v) for v in self.requested.values()))

    def to_dict(self, target):
        return {
            "iteration": self.iteration,
            "vsm_before_mw": self.vsm_before,
            "predicted_vsm_mw": self.predicted_vsm,
            "verified_vsm_mw": self.verified_vsm,
            "gap_mw": target - self.verified_vsm,
            "requested_mvar": {str(k): v for k, v in self.requested.items()},
            "realized_mvar": {str(k): v for k, v in self.realized.items()},
            "delta_v_pu": {str(k): v for k, v in self.delta_v.items()},
            "der_q_kvar": {str(k): np.asarray(v).tolist() for k, v in self.dx.items()},
            "a_v": {str(k): v for k, v in self.a_v.items()},
            "a_q": {str(k): v for k, v in self.a_q.items()},
            "objective": self.objective,
            "kkt": self.kkt,
        }


@dataclass
class CoordinationTrace:
    target: float
    weight_mode: str
    vsm_initial: float
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    feeder_of_bus: Dict[int, str] = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.records)

    @property
    def final_vsm(self):
        return self.records[-1].verified_vsm if self.records else self.vsm_initial

    @property
    def requested_mvar(self):
        return float(sum(r.requested_mvar for r in self.records))

    @property
    def active_controllers(self):
        """Distinct controls moved by more than 1e-3 (pu or MVAr) in any iteration."""
        moved = set()
        for r in self.records:
            moved.update(("V", b) for b, v in r.delta_v.items() if abs(v) > ACTIVE_TOL)
            moved.update(("Q", b) for b, v in r.requested.items() if abs(v) > ACTIVE_TOL)
        return len(moved)

    def to_dict(self):
        return {
            "target_mw": self.target,
            "weight_mode": self.weight_mode,
            "vsm_initial_mw": self.vsm_initial,
            "final_vsm_mw": self.final_vsm,
            "converged": self.converged,
            "reason": self.reason,
            "iterations": self.iterations,
            "requested_mvar_total": self.requested_mvar,
            "active_controllers": self.active_controllers,
            "records": [r.to_dict(self.target) for r in self.records],
        }


def _dso_step(net, feeders, op, result, problem, dispatch, dx_models, weight_mode, alpha):
    """Run the feeder re-dispatches for one TSO dispatch. Returns (der_q per link, realized, dx)."""
    idx = net.bus_index
    der_q = [op.der_q_array(k, len(feeders[link.feeder].ders)) for k, link in enumerate(net.boundary_links)]
    realized, dx = {}, {}
    for bus, dq in dispatch.dq.items():
        if abs(dq) <= 1.0e-9:
            continue
        k = net.links_at(bus)[0]
        link = net.boundary_links[k]
        feeder = feeders[link.feeder]
        cap = problem.capability[bus]
        current = float(der_q[k].sum())
        wanted = current + dq * 1000.0 / link.beta
        total = cap.clamp(wanted)
        if abs(total - wanted) > 1.0e-6:
            logging.warning(
                f"Bus {bus}: request of {wanted:.2f} kVAr per feeder clamped to {total:.2f} kVAr "
                f"(shortfall {(wanted - total) * link.beta / 1000.0:.4f} MVAr)"
            )
        if weight_mode == "sensitivity":
            model = dx_models.get(feeder.id) if dx_models else None
            if model is None:
                raise ConfigError(f"no distribution surrogate for feeder {feeder.id}")
            w = dx_weights(model, der_q[k].sum(axis=1))
        else:
            w = np.ones(len(feeder.ders))
        scale = op.load_scale * (op.feeder_scale[k] if op.feeder_scale else 1.0)
        try:
            res = redispatch(feeder, total * link.beta / 1000.0, link, w, alpha, result.tx.v_mag[idx[bus]], scale)
        except InfeasibleProblemError as e:
            logging.warning(f"Bus {bus}: DER re-dispatch infeasible, keeping set points ({e})")
            continue
        der_q[k] = res.q_phase
        realized[bus] = (res.q_agg - current) * link.beta / 1000.0
        dx[bus] = res.q_phase
    return der_q, realized, dx


def run_loop(
    net,
    feeders,
    op,
    vsm_model,
    dx_models,
    target,
    weight_mode="sensitivity",
    config=None,
    tso_config=None,
    cosim_config=None,
    pf_config=None,
    contingency=None,
):
    """
    Raise the surrogate margin of ``op`` to ``target`` MW.

    Returns a CoordinationTrace; ``converged`` is False when the iteration cap
    is reached, the TSO target is unreachable, or the margin drops by more
    than ``config.max_drop`` between iterations.
    """
    config = config or CoordConfig()
    tso_config = tso_config or TsoConfig()
    if weight_mode not in ("sensitivity", "equal"):
        raise ConfigError(f"weight mode should be sensitivity/equal, not {weight_mode}")
    if not isinstance(feeders, dict):
        feeders = {f.id: f for f in feeders}
    target = float(target)

    vsm, result = evaluate_vsm(net, feeders, op, vsm_model, contingency, cosim_config, pf_config)
    trace = CoordinationTrace(
        target=target,
        weight_mode=weight_mode,
        vsm_initial=vsm,
        feeder_of_bus={link.tx_bus: link.feeder for link in net.boundary_links},
    )
    logging.info(f"Coordination ({weight_mode} weights): margin {vsm:.2f} MW, target {target:.2f} MW")

    for it in range(1, config.max_iters + 1):
        if vsm >= target - config.tol:
            break
        problem = build_tso_problem(net, feeders, result, op, vsm_model, target, tso_config, weight_mode)
        try:
            dispatch = solve_tso(problem)
        except InfeasibleProblemError as e:
            trace.reason = f"TSO problem infeasible at iteration {it}: {e}"
            logging.warning(trace.reason)
            return trace

        der_q, realized, dx = _dso_step(net, feeders, op, result, problem, dispatch, dx_models, weight_mode, config.alpha)
        v_gen = list(op.v_gen)
        for ci, dv in dispatch.dv.items():
            v_gen[ci] += dv
        op = replace(op, v_gen=tuple(v_gen), der_q=tuple(tuple(map(tuple, q)) for q in der_q))
        try:
            new_vsm, result = evaluate_vsm(net, feeders, op, vsm_model, contingency, cosim_config, pf_config, result)
        except CoSimDivergedError as e:
            trace.reason = f"co-simulation failed at iteration {it}: {e}"
            logging.warning(trace.reason)
            return trace

        ctrl = net.controllers
        trace.records.append(
            IterationRecord(
                iteration=it,
                vsm_before=vsm,
                predicted_vsm=dispatch.predicted_vsm,
                verified_vsm=new_vsm,
                requested=dispatch.dq,
                realized=realized,
                delta_v={ctrl[ci].bus: dv for ci, dv in dispatch.dv.items()},
                dx=dx,
                a_v={ctrl[ci].bus: float(a) for ci, a in zip(problem.v_controls, problem.a_v)},
                a_q={b: float(a) for b, a in zip(problem.q_controls, problem.a_q)},
                objective=dispatch.objective,
                kkt=vars(dispatch.kkt) if dispatch.kkt is not None else {},
            )
        )
        logging.info(f"Iteration {it}: margin {new_vsm:.2f} MW (predicted {dispatch.predicted_vsm:.2f} MW)")
        if new_vsm < vsm - config.max_drop:
            trace.reason = f"margin fell from {vsm:.2f} to {new_vsm:.2f} MW at iteration {it}"
            logging.error(trace.reason)
            return trace
        vsm = new_vsm

    trace.converged = vsm >= target - config.tol
    if not trace.converged:
        trace.reason = f"target not reached within {config.max_iters} iterations"
        logging.warning(trace.reason)
    return trace


def write_outputs(trace, out_dir, report_text=None):
    """trace.txt, vsm_iterations.csv, dispatch_tx.csv, dispatch_dx_<feeder>.csv and optionally report.md."""
    write_json(os.path.join(out_dir, "trace.txt"), trace.to_dict())
    rows = [{"iteration": 0, "vsm_mw": trace.vsm_initial, "predicted_vsm_mw": trace.vsm_initial, "gap_mw": trace.target - trace.vsm_initial, "requested_mvar": 0.0}]
    for r in trace.records:
        rows.append(
            {
                "iteration": r.iteration,
                "vsm_mw": r.verified_vsm,
                "predicted_vsm_mw": r.predicted_vsm,
                "gap_mw": trace.target - r.verified_vsm,
                "requested_mvar": r.requested_mvar,
            }
        )
    write_csv(os.path.join(out_dir, "vsm_iterations.csv"), pd.DataFrame(rows, columns=list(rows[0])))

    tx_rows = []
    for r in trace.records:
        tx_rows += [{"iteration": r.iteration, "control": "V", "bus": b, "delta": v} for b, v in r.delta_v.items()]
        tx_rows += [{"iteration": r.iteration, "control": "Q", "bus": b, "delta": v} for b, v in r.requested.items()]
    write_csv(os.path.join(out_dir, "dispatch_tx.csv"), pd.DataFrame(tx_rows, columns=["iteration", "control", "bus", "delta"]))

    columns = ["iteration", "tx_bus", "der", "q_a_kvar", "q_b_kvar", "q_c_kvar", "q_kvar"]
    per_feeder = {feeder: [] for feeder in sorted(set(trace.feeder_of_bus.values()))}
    for r in trace.records:
        for bus, q in sorted(r.dx.items()):
            for k, phases in enumerate(np.asarray(q)):
                per_feeder[trace.feeder_of_bus[bus]].append(
                    [r.iteration, bus, k + 1, phases[0], phases[1], phases[2], float(phases.sum())]
                )
    for feeder, rows_ in per_feeder.items():
        write_csv(os.path.join(out_dir, f"dispatch_dx_{feeder}.csv"), pd.DataFrame(rows_, columns=columns))
    if report_text is not None:
        write_text(os.path.join(out_dir, "report.md"), report_text)
