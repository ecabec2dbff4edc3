"""
Sensitivity-weighted DER reactive re-dispatch.

The feeder must deliver its share of a transmission request,
``request * 1000 / beta`` kVAr of total DER injection, split per DER phase
inside a phase-unbalance band. Cheaper (less influential) weights are used
last. The objective is the weighted magnitude of each DER's injection, so
DERs may inject and absorb at the same time when the voltage limits call for
it; every total inside ``capability_range`` is reachable.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from tdvsm.dsopt.capability import v0_bounds, voltage_rows
from tdvsm.dxflow.lindistflow import der_incidence, solve_lindistflow
from tdvsm.dxflow.sweep import solve_bfs
from tdvsm.errors import DegenerateSensitivityError, InfeasibleProblemError
from tdvsm.netmodel.capability import der_q_limits
from tdvsm.solvers.lp import LpResult, solve_lp

BAND_EPS = 0.01  # kVAr, keeps the unbalance band open around zero
WEIGHT_EPS = 1.0e-9
WEIGHT_FLOOR = 1.0e-6  # keeps |q| = d_plus + d_minus complementary at the optimum


@dataclass
class DispatchLp:
    """
    Columns are ``[q per DER phase (free), d_plus per DER, d_minus per DER, v0_sq]``
    with ``sum_phase q = d_plus - d_minus`` for each DER.
    """

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    bounds: list
    names: dict
    cols: list  # (der, phase) of the leading columns

    def solve(self, dump_path=None):
        return solve_lp(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self.bounds, names=self.names, dump_path=dump_path)


@dataclass
class RedispatchResult:
    q_phase: np.ndarray  # DER x phase, kVAr
    target: float  # kVAr of total DER injection on this feeder
    objective: float
    feasible: bool
    v0_sq: float = 1.0
    v_sq: np.ndarray = None  # LinDistFlow node voltages at the dispatch, pu^2
    binding: List[str] = field(default_factory=list)
    lp: LpResult = field(default=None, repr=False)
    problem: DispatchLp = field(default=None, repr=False)

    @property
    def q_der(self):
        return self.q_phase.sum(axis=1)

    @property
    def q_agg(self):
        return float(self.q_phase.sum())


def dx_weights(dx_model, x_op, eps=WEIGHT_EPS):
    """
    w_j = 1 - |s_j| / sum |s|, with s the surrogate gradient of the boundary
    reactive demand with respect to each DER set point at ``x_op``.
    """
    s = np.abs(np.asarray(dx_model.gradient(np.asarray(x_op, dtype=float)), dtype=float))
    total = float(s.sum())
    if not np.isfinite(total) or total < eps:
        raise DegenerateSensitivityError(f"DER sensitivities sum to {total:.3g}; weights undefined")
    return 1.0 - s / total


def build_dispatch_lp(feeder, target, weights, alpha, v_tm=1.0, load_scale=1.0, band_eps=BAND_EPS):
    """LP delivering ``target`` kVAr of total DER injection at least weighted magnitude."""
    n_der = len(feeder.ders)
    cols = [(k, ph) for k, der in enumerate(feeder.ders) for ph in der.phases]
    nv = len(cols)
    width = nv + 2 * n_der + 1
    eps = band_eps if alpha > 0.0 else 0.0

    per_der = np.zeros((n_der, nv))
    for v, (k, _) in enumerate(cols):
        per_der[k, v] = 1.0

    def row(q_part, plus=None, minus=None, v0=0.0):
        r = np.zeros(width)
        r[:nv] = q_part
        if plus is not None:
            r[nv : nv + n_der] = plus
        if minus is not None:
            r[nv + n_der : nv + 2 * n_der] = minus
        r[-1] = v0
        return r

    A_v, b_v, v_names = voltage_rows(feeder, der_incidence(feeder) @ per_der, load_scale)
    rows = [row(a[:nv], v0=a[-1]) for a in A_v]
    rhs, names = list(b_v), list(v_names)

    for k, der in enumerate(feeder.ders):
        q_min, q_max = der_q_limits(der)
        rows += [row(per_der[k]), row(-per_der[k])]
        rhs += [q_max, -q_min]
        names += [f"q_max[{k}]", f"q_min[{k}]"]
        n_ph = len(der.phases)
        if n_ph < 2:
            continue
        # |q_phase - avg| <= alpha * |avg| + eps, with |avg| = (d_plus + d_minus) / n_ph
        avg = per_der[k] / n_ph
        mag = np.zeros(n_der)
        mag[k] = alpha / n_ph
        for v, (kk, ph) in enumerate(cols):
            if kk != k:
                continue
            unit = np.zeros(nv)
            unit[v] = 1.0
            rows += [row(unit - avg, -mag, -mag), row(avg - unit, -mag, -mag)]
            rhs += [eps, eps]
            names += [f"band_hi[{k},{ph}]", f"band_lo[{k},{ph}]"]

    eq_rows, eq_names = [], []
    for k in range(n_der):
        sel = np.zeros(n_der)
        sel[k] = 1.0
        eq_rows.append(row(per_der[k], -sel, sel))
        eq_names.append(f"split[{k}]")
    eq_rows.append(row(np.ones(nv)))
    eq_names.append("request")

    v_lo, v_hi = v0_bounds(feeder, v_tm)
    w = np.maximum(weights, WEIGHT_FLOOR)
    return DispatchLp(
        c=np.r_[np.zeros(nv), w, w, 0.0],
        A_ub=np.array(rows).reshape(-1, width),
        b_ub=np.array(rhs, dtype=float),
        A_eq=np.array(eq_rows),
        b_eq=np.r_[np.zeros(n_der), float(target)],
        bounds=[(None, None)] * nv + [(0.0, None)] * (2 * n_der) + [(v_lo, v_hi)],
        names={
            "ub": names,
            "eq": eq_names,
            "var": [f"q[{k},{ph}]" for k, ph in cols]
            + [f"d_plus[{k}]" for k in range(n_der)]
            + [f"d_minus[{k}]" for k in range(n_der)]
            + ["v0_sq"],
        },
        cols=cols,
    )


def redispatch(feeder, request, link, weights, alpha, v_tm=1.0, load_scale=1.0, band_eps=BAND_EPS, dump_path=None):
    """
    Arguments:
      feeder: FeederModel
      request: transmission-side reactive contribution asked of the link, MVAr
      link: BoundaryLink carrying ``beta``
      weights: one non-negative weight per DER
      alpha: allowed relative deviation of a phase from the DER's phase average
      v_tm: transmission voltage at the boundary bus (pu)

    Returns:
      RedispatchResult

    Raises InfeasibleProblemError (with the violated constraints) when the
    request is outside what the feeder can deliver.
    """
    weights = np.asarray(weights, dtype=float).reshape(-1)
    n_der = len(feeder.ders)
    if weights.size != n_der:
        raise ValueError(f"{weights.size} weights for {n_der} DERs")
    if np.any(weights < 0.0):
        raise ValueError("DER weights must be non-negative")
    alpha = float(alpha)
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")
    target = float(request) * 1000.0 / link.beta

    problem = build_dispatch_lp(feeder, target, weights, alpha, v_tm, load_scale, band_eps)
    try:
        lp = problem.solve(dump_path)
    except InfeasibleProblemError as e:
        raise InfeasibleProblemError(
            f"feeder {feeder.id} cannot deliver {target:.2f} kVAr (request {request:.4f} MVAr at bus {link.tx_bus})",
            e.diagnosis,
        )

    q_phase = np.zeros((n_der, 3))
    for v, (k, ph) in enumerate(problem.cols):
        q_phase[k, ph] = lp.x[v]
    v0_sq = float(lp.x[-1])
    state = solve_lindistflow(feeder, v0_sq, q_phase, load_scale)
    logging.debug(f"Feeder {feeder.id}: dispatched {q_phase.sum():.2f} kVAr of {target:.2f} kVAr")
    return RedispatchResult(
        q_phase=q_phase,
        target=target,
        objective=lp.objective,
        feasible=True,
        v0_sq=v0_sq,
        v_sq=state.v_sq,
        binding=lp.binding,
        lp=lp,
        problem=problem,
    )


def bfs_check(feeder, result, v_tm=1.0, load_scale=1.0, bfs_config=None):
    """
    Apply the per-phase dispatch to the nonlinear sweep.

    Returns (bfs_q0, lindist_q0), the substation reactive inflow in kVAr from
    the sweep and from the linear model at the same set points.
    """
    sol = solve_bfs(feeder, v_tm, der_q=result.q_phase, load_scale=load_scale, config=bfs_config)
    v0 = (sol.tap * abs(v_tm)) ** 2
    linear = solve_lindistflow(feeder, v0, result.q_phase, load_scale)
    return sol.q0, linear.q0 * feeder.base_kva
