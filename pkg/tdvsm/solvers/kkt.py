from dataclasses import dataclass

import numpy as np

from tdvsm.solvers.lp import as_problem


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def ok(self, stationarity=1.0e-5, primal=1.0e-6, complementarity=1.0e-6):
        return (
            self.stationarity <= stationarity
            and self.primal <= primal
            and self.dual <= complementarity
            and self.complementarity <= complementarity
        )


def check_lp_feasibility(x, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Largest constraint violation of ``x`` (0 when feasible)."""
    x = np.asarray(x, dtype=float)
    A_ub, b_ub, A_eq, b_eq, lo, hi = as_problem(x.size, A_ub, b_ub, A_eq, b_eq, bounds)
    parts = [0.0]
    if A_ub.shape[0]:
        parts.append(float(np.max(A_ub @ x - b_ub)))
    if A_eq.shape[0]:
        parts.append(float(np.max(np.abs(A_eq @ x - b_eq))))
    parts.append(float(np.max(lo - x, initial=0.0)))
    parts.append(float(np.max(x - hi, initial=0.0)))
    return max(parts)


def check_kkt(result, g, H=None, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """
    Substitute a solution and its multipliers into the optimality conditions.

    ``H`` is None for an LP (then ``g`` is the cost vector). Works on any
    object with ``x``, ``lam_ub``, ``mu_eq``, ``nu_lo`` and ``nu_hi``.
    """
    x = np.asarray(result.x, dtype=float)
    A_ub, b_ub, A_eq, b_eq, lo, hi = as_problem(x.size, A_ub, b_ub, A_eq, b_eq, bounds)
    grad = np.asarray(g, dtype=float).copy()
    if H is not None:
        grad = grad + np.atleast_2d(np.asarray(H, dtype=float)) @ x
    resid = grad + A_ub.T @ result.lam_ub + A_eq.T @ result.mu_eq + result.nu_hi - result.nu_lo
    scale = max(1.0, float(np.abs(grad).max(initial=0.0)))

    dual = max(
        float(np.max(-result.lam_ub, initial=0.0)),
        float(np.max(-result.nu_lo, initial=0.0)),
        float(np.max(-result.nu_hi, initial=0.0)),
    )
    comp = [0.0]
    if A_ub.shape[0]:
        comp.append(float(np.max(np.abs(result.lam_ub * (b_ub - A_ub @ x)))))
    fin_lo = np.isfinite(lo)
    fin_hi = np.isfinite(hi)
    if fin_lo.any():
        comp.append(float(np.max(np.abs(result.nu_lo[fin_lo] * (x[fin_lo] - lo[fin_lo])))))
    if fin_hi.any():
        comp.append(float(np.max(np.abs(result.nu_hi[fin_hi] * (hi[fin_hi] - x[fin_hi])))))
    comp.append(float(np.max(np.abs(result.nu_lo[~fin_lo]), initial=0.0)))
    comp.append(float(np.max(np.abs(result.nu_hi[~fin_hi]), initial=0.0)))
    return KktReport(
        stationarity=float(np.max(np.abs(resid), initial=0.0)) / scale,
        primal=check_lp_feasibility(x, A_ub, b_ub, A_eq, b_eq, list(zip(lo, hi))),
        dual=dual,
        complementarity=max(comp),
    )
