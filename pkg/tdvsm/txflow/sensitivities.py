from dataclasses import dataclass, replace

import numpy as np

from tdvsm.errors import NumericalError, SingularJacobianError
from tdvsm.txflow.newton import PowerFlowConfig, dS_dV, jacobian, make_ybus, solve_nr

# condition number past which the point is treated as the nose of the PV curve
SINGULAR_COND = 1.0e12


@dataclass
class TxSensitivities:
    dV_dVg: np.ndarray  # buses x controllers
    dV_dQ: np.ndarray  # buses x load buses, pu per MVAr of injection
    dQg_dVg: np.ndarray  # per controller, MVAr per pu
    load_buses: tuple = ()


def sensitivities(net, sol, load_buses=None):
    """
    Implicit-function sensitivities of the converged solution ``sol``.

    Columns for units fixed at a reactive limit (or IBRs in fixed-Q mode) are
    zero since their set points no longer act on the network. Injections at
    voltage-regulated buses leave every magnitude unchanged.
    """
    if not sol.converged:
        raise NumericalError("sensitivities need a converged power flow")
    load_buses = tuple(net.load_buses if load_buses is None else load_buses)
    idx = net.bus_index
    n = len(net.buses)
    Y = make_ybus(net)
    V = sol.V
    pv, pq = sol.pv, sol.pq
    pvpq = np.r_[pv, pq]
    npvpq = len(pvpq)
    J = jacobian(Y, V, pv, pq)
    if J.size and np.linalg.cond(J) > SINGULAR_COND:
        raise SingularJacobianError("power-flow Jacobian is singular at this operating point")
    dS_dVm, dS_dVa = dS_dV(Y, V)
    pv_set = set(pv.tolist())
    ref = idx[net.slack_bus]

    ctrl = net.controllers
    dV_dVg = np.zeros((n, len(ctrl)))
    dQg_dVg = np.zeros(len(ctrl))
    for ci, unit in enumerate(ctrl):
        b = idx[unit.bus]
        if b != ref and b not in pv_set:
            continue
        rhs = np.r_[dS_dVm[pvpq, b].real, dS_dVm[pq, b].imag]
        try:
            dx = np.linalg.solve(J, -rhs) if J.size else np.zeros(0)
        except np.linalg.LinAlgError:
            raise SingularJacobianError("power-flow Jacobian is singular at this operating point")
        dVa = np.zeros(n)
        dVm = np.zeros(n)
        dVa[pvpq] = dx[:npvpq]
        dVm[pq] = dx[npvpq:]
        dVm[b] = 1.0
        dV_dVg[:, ci] = dVm
        dQg_dVg[ci] = (dS_dVa[b, :].imag @ dVa + dS_dVm[b, :].imag @ dVm) * net.base_mva

    dV_dQ = np.zeros((n, len(load_buses)))
    pq_pos = {int(i): k for k, i in enumerate(pq)}
    for col, bus in enumerate(load_buses):
        b = idx[bus]
        if b not in pq_pos:
            continue
        rhs = np.zeros(J.shape[0])
        rhs[npvpq + pq_pos[b]] = 1.0
        try:
            dx = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError:
            raise SingularJacobianError("power-flow Jacobian is singular at this operating point")
        dV_dQ[pq, col] = dx[npvpq:] / net.base_mva
    return TxSensitivities(dV_dVg=dV_dVg, dV_dQ=dV_dQ, dQg_dVg=dQg_dVg, load_buses=load_buses)


def check_sensitivities(net, op, sol, config=None, step=1.0e-5, extra_load=None):
    """
    Central finite differences of the same quantities, for verification.

    Re-solves keep the PV->PQ pattern of ``sol`` frozen so each difference
    measures one smooth branch of the power-flow equations.
    """
    config = replace(config or PowerFlowConfig(), enforce_q_limits=False)
    sens = sensitivities(net, sol)
    n = len(net.buses)
    ctrl = net.controllers
    idx = net.bus_index
    base_extra = extra_load if extra_load is not None else (np.zeros(n), np.zeros(n))

    def resolve(op_, extra):
        s = solve_nr(net, op_, config, warm_start=sol, extra_load=extra, switched=sol.switched)
        if not s.converged:
            raise NumericalError("finite-difference re-solve did not converge")
        return s

    fd_dV_dVg = np.zeros_like(sens.dV_dVg)
    fd_dQg_dVg = np.zeros_like(sens.dQg_dVg)
    for ci in range(len(ctrl)):
        if not np.any(sens.dV_dVg[:, ci]):
            continue
        hi = list(op.v_gen)
        lo = list(op.v_gen)
        hi[ci] += step
        lo[ci] -= step
        s_hi = resolve(replace(op, v_gen=tuple(hi)), base_extra)
        s_lo = resolve(replace(op, v_gen=tuple(lo)), base_extra)
        fd_dV_dVg[:, ci] = (s_hi.v_mag - s_lo.v_mag) / (2 * step)
        fd_dQg_dVg[ci] = (s_hi.gen_q[ci] - s_lo.gen_q[ci]) / (2 * step)

    fd_dV_dQ = np.zeros_like(sens.dV_dQ)
    dq = step * net.base_mva
    for col, bus in enumerate(sens.load_buses):
        q_hi = base_extra[1].copy()
        q_lo = base_extra[1].copy()
        # injection lowers the net load
        q_hi[idx[bus]] -= dq
        q_lo[idx[bus]] += dq
        s_hi = resolve(op, (base_extra[0], q_hi))
        s_lo = resolve(op, (base_extra[0], q_lo))
        fd_dV_dQ[:, col] = (s_hi.v_mag - s_lo.v_mag) / (2 * dq)
    return sens, TxSensitivities(
        dV_dVg=fd_dV_dVg, dV_dQ=fd_dV_dQ, dQg_dVg=fd_dQg_dVg, load_buses=sens.load_buses
    )
