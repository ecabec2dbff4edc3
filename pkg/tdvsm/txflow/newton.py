"""
Polar Newton-Raphson power flow for the transmission network.

Generators (and IBRs in ``pv`` mode) regulate their bus voltage until their
reactive output leaves the capability box; the worst violator is then fixed
at its limit (PV -> PQ) and the case re-solved. Non-convergence is reported
through ``TxSolution.converged`` rather than raised, since the margin sweep
uses it as its collapse signal.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from tdvsm.errors import ConfigError
from tdvsm.netmodel.capability import controller_q_limits
from tdvsm.utils.misc import write_csv


@dataclass
class PowerFlowConfig:
    tol: float = 1.0e-8
    max_iter: int = 30
    ibr_mode: str = "pv"  # pv | fixed_q
    enforce_q_limits: bool = True
    q_tol: float = 1.0e-6  # MVAr slack allowed before a unit is switched

    def __post_init__(self):
        self.tol = float(self.tol)
        self.q_tol = float(self.q_tol)
        self.max_iter = int(self.max_iter)
        if self.ibr_mode not in ("pv", "fixed_q"):
            raise ConfigError(f"ibr_mode should be pv/fixed_q, not {self.ibr_mode}.")


@dataclass
class TxSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_inj: np.ndarray  # MW
    q_inj: np.ndarray  # MVAr
    gen_p: np.ndarray  # MW per controller, slack from the solution
    gen_q: np.ndarray  # MVAr per controller
    converged: bool
    iterations: int
    max_mismatch: float
    p_load: np.ndarray
    q_load: np.ndarray
    switched: Dict[int, float] = field(default_factory=dict)
    pv: np.ndarray = None
    pq: np.ndarray = None
    history: List[float] = field(default_factory=list)

    @property
    def V(self):
        return self.v_mag * np.exp(1j * self.v_ang)


def make_ybus(net):
    idx = net.bus_index
    n = len(net.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ytt = ys + 0.5j * br.b_shunt
        Y[f, f] += ytt / br.tap**2
        Y[t, t] += ytt
        Y[f, t] -= ys / br.tap
        Y[t, f] -= ys / br.tap
    for i, b in enumerate(net.buses):
        Y[i, i] += 1j * b.bs / net.base_mva
    return Y


def dS_dV(Y, V):
    """Partial derivatives of complex bus injections w.r.t. |V| and angle."""
    I = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(I)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dVm = diagV @ np.conj(Y @ diagVnorm) + np.conj(diagI) @ diagVnorm
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    return dS_dVm, dS_dVa


def jacobian(Y, V, pv, pq):
    dS_dVm, dS_dVa = dS_dV(Y, V)
    pvpq = np.r_[pv, pq]
    J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
    J12 = dS_dVm[np.ix_(pvpq, pq)].real
    J21 = dS_dVa[np.ix_(pq, pvpq)].imag
    J22 = dS_dVm[np.ix_(pq, pq)].imag
    return np.block([[J11, J12], [J21, J22]])


def _newton(Y, S_spec, V0, pv, pq, tol, max_iter):
    pvpq = np.r_[pv, pq]
    npvpq = len(pvpq)
    Va, Vm = np.angle(V0), np.abs(V0)
    V = V0.copy()
    history = []
    norm = np.inf
    for it in range(max_iter + 1):
        mis = V * np.conj(Y @ V) - S_spec
        F = np.r_[mis[pvpq].real, mis[pq].imag]
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        history.append(norm)
        if not np.isfinite(norm):
            return V, False, it, norm, history
        if norm <= tol:
            return V, True, it, norm, history
        if it == max_iter:
            break
        J = jacobian(Y, V, pv, pq)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return V, False, it, norm, history
        Va[pvpq] += dx[:npvpq]
        Vm[pq] += dx[npvpq:]
        if np.any(Vm <= 0.0):
            return V, False, it + 1, norm, history
        V = Vm * np.exp(1j * Va)
    return V, False, max_iter, norm, history


def bus_loads(net, op, extra_load=None):
    """Transmission-side loads (MW, MVAr) per bus at ``op``, optionally plus boundary loads."""
    p = np.asarray(op.p_load, dtype=float) * op.load_scale
    q = np.asarray(op.q_load, dtype=float) * op.load_scale
    if op.q_inject:
        q = q - np.asarray(op.q_inject, dtype=float)
    if extra_load is not None:
        p = p + extra_load[0]
        q = q + extra_load[1]
    return p, q


def solve_nr(net, op, config=None, warm_start=None, extra_load=None, switched=None):
    """
    Solve the AC power flow of ``net`` at operating point ``op``.

    Arguments:
      net: TransmissionNetwork (contingency already applied)
      op: OperatingPoint giving controller P/V set points and fixed loads
      config: PowerFlowConfig
      warm_start: previous TxSolution; its voltages and PV->PQ switches are reused
      extra_load: optional (p, q) arrays in MW/MVAr added to the bus loads
      switched: explicit {controller index: Q MVAr} overriding the warm start's switches

    Returns:
      TxSolution
    """
    config = config or PowerFlowConfig()
    idx = net.bus_index
    n = len(net.buses)
    base = net.base_mva
    ctrl = net.controllers
    n_gen = len(net.generators)
    slack_ci = net.slack_controller
    ref = idx[net.slack_bus]
    limits = controller_q_limits(net)
    p_load, q_load = bus_loads(net, op, extra_load)

    if switched is None:
        switched = dict(warm_start.switched) if warm_start is not None else {}
    else:
        switched = dict(switched)
    fixed_q = {ci for ci in range(n_gen, len(ctrl))} if config.ibr_mode == "fixed_q" else set()

    if warm_start is not None:
        V = warm_start.V.copy()
    else:
        V = np.ones(n, dtype=complex)
    for ci, unit in enumerate(ctrl):
        if ci not in switched and ci not in fixed_q:
            V[idx[unit.bus]] = op.v_gen[ci] * np.exp(1j * np.angle(V[idx[unit.bus]]))
    V[ref] = op.v_gen[slack_ci]

    Y = make_ybus(net)
    iterations = 0
    history = []
    while True:
        pv_set = sorted(
            idx[u.bus] for ci, u in enumerate(ctrl) if ci != slack_ci and ci not in switched and ci not in fixed_q
        )
        pv = np.array(pv_set, dtype=int)
        pq = np.array([i for i in range(n) if i != ref and i not in pv_set], dtype=int)

        S_spec = -(p_load + 1j * q_load)
        for ci, unit in enumerate(ctrl):
            if ci == slack_ci:
                continue
            S_spec[idx[unit.bus]] += op.p_gen[ci]
            if ci in switched:
                S_spec[idx[unit.bus]] += 1j * switched[ci]
        S_spec = S_spec / base

        V, converged, it, norm, hist = _newton(Y, S_spec, V, pv, pq, config.tol, config.max_iter)
        iterations += it
        history += hist
        S_calc = V * np.conj(Y @ V) * base
        gen_q = np.zeros(len(ctrl))
        gen_p = np.array(op.p_gen, dtype=float)
        for ci, unit in enumerate(ctrl):
            i = idx[unit.bus]
            if ci in switched:
                gen_q[ci] = switched[ci]
            elif ci in fixed_q:
                gen_q[ci] = 0.0
            else:
                gen_q[ci] = S_calc[i].imag + q_load[i]
        gen_p[slack_ci] = S_calc[ref].real + p_load[ref]
        sol = TxSolution(
            v_mag=np.abs(V),
            v_ang=np.angle(V) - np.angle(V[ref]),
            p_inj=S_calc.real,
            q_inj=S_calc.imag,
            gen_p=gen_p,
            gen_q=gen_q,
            converged=converged,
            iterations=iterations,
            max_mismatch=norm,
            p_load=p_load,
            q_load=q_load,
            switched=dict(switched),
            pv=pv,
            pq=pq,
            history=history,
        )
        if not converged or not config.enforce_q_limits:
            return sol

        worst, worst_viol = None, config.q_tol
        for ci, unit in enumerate(ctrl):
            if ci == slack_ci or ci in switched or ci in fixed_q:
                continue
            q_min, q_max = limits[ci]
            viol = max(gen_q[ci] - q_max, q_min - gen_q[ci])
            # strict comparison keeps the lowest bus id on ties
            if viol > worst_viol or (worst is not None and viol == worst_viol and unit.bus < ctrl[worst].bus):
                worst, worst_viol = ci, viol
        if worst is None:
            return sol
        q_min, q_max = limits[worst]
        switched[worst] = q_max if gen_q[worst] > q_max else q_min
        logging.debug(f"Unit at bus {ctrl[worst].bus} hit its Q limit ({gen_q[worst]:.3f} MVAr), switching PV->PQ")


def dump_mismatch_csv(path, sol):
    write_csv(path, pd.DataFrame({"iter": np.arange(len(sol.history)), "mismatch": sol.history}))
