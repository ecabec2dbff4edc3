"""
Convex quadratic programs

    minimize    1/2 x^T H x + g . x
    subject to  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi

with H positive definite, solved by a primal active-set method. The start
point is a vertex of the feasible set from the LP solver; the working set
changes one constraint at a time (the most negative multiplier leaves, the
first blocking constraint enters, lowest index on ties), so runs are
reproducible.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from tdvsm.errors import InfeasibleProblemError, NumericalError
from tdvsm.solvers.lp import as_problem, binding_report, solve_lp

TOL = 1.0e-10
MAX_ITER = 10_000


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    lam_ub: np.ndarray
    mu_eq: np.ndarray
    nu_lo: np.ndarray
    nu_hi: np.ndarray
    binding: List[str] = field(default_factory=list)
    iterations: int = 0


def _independent(rows, candidate):
    if not rows:
        return np.linalg.norm(candidate) > TOL
    stacked = np.vstack(rows + [candidate])
    return np.linalg.matrix_rank(stacked, tol=1.0e-9) == len(rows) + 1


def solve_qp(H, g, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, names=None, x0=None):
    """
    Solve the QP; multipliers use the LP sign convention
    ``H x + g + A_ub^T lam + A_eq^T mu + nu_hi - nu_lo = 0``.

    ``x0`` is an optional feasible start. Raises InfeasibleProblemError when
    the constraints admit no point.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.asarray(g, dtype=float).reshape(-1)
    n = g.size
    A_ub, b_ub, A_eq, b_eq, lo, hi = as_problem(n, A_ub, b_ub, A_eq, b_eq, bounds)
    names = names or {}
    ub_names = names.get("ub") or [f"ub{i}" for i in range(A_ub.shape[0])]
    var_names = names.get("var") or [f"x{i}" for i in range(n)]

    # inequality rows: general, then upper bounds, then lower bounds as -x <= -lo
    hi_idx = np.flatnonzero(np.isfinite(hi))
    lo_idx = np.flatnonzero(np.isfinite(lo))
    G = np.vstack([A_ub, np.eye(n)[hi_idx], -np.eye(n)[lo_idx]])
    h = np.r_[b_ub, hi[hi_idx], -lo[lo_idx]]
    m_ub = A_ub.shape[0]
    n_eq = A_eq.shape[0]

    if x0 is None:
        x = solve_lp(np.zeros(n), A_ub, b_ub, A_eq, b_eq, list(zip(lo, hi)), names=names).x
    else:
        x = np.asarray(x0, dtype=float).copy()
        if G.shape[0] and np.max(G @ x - h) > 1.0e-8:
            raise InfeasibleProblemError("QP start point violates the constraints")

    eq_rows = []
    for k in range(n_eq):
        if not _independent(eq_rows, A_eq[k]):
            logging.debug(f"Dropping dependent equality row {k}")
            continue
        eq_rows.append(A_eq[k])
    work = []
    for i in np.flatnonzero(np.abs(G @ x - h) <= 1.0e-9 * np.maximum(1.0, np.abs(h))) if G.shape[0] else []:
        if _independent(eq_rows + [G[j] for j in work], G[i]):
            work.append(int(i))

    lam_work = np.zeros(0)
    for iterations in range(1, MAX_ITER + 1):
        A_w = np.vstack(eq_rows + [G[j] for j in work]) if (eq_rows or work) else np.zeros((0, n))
        k = A_w.shape[0]
        K = np.block([[H, A_w.T], [A_w, np.zeros((k, k))]])
        rhs = np.r_[-(H @ x + g), np.zeros(k)]
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            raise NumericalError("singular KKT system in the active-set QP")
        p = sol[:n]
        mult = sol[n:]
        lam_work = mult[len(eq_rows) :]
        if np.linalg.norm(p, np.inf) <= 1.0e-12 * max(1.0, np.linalg.norm(x, np.inf)):
            if lam_work.size == 0 or lam_work.min() >= -1.0e-10:
                break
            drop = int(np.argmin(lam_work))
            work.pop(drop)
            continue
        alpha, blocking = 1.0, None
        if G.shape[0]:
            Gp = G @ p
            slack = h - G @ x
            for i in range(G.shape[0]):
                if i in work or Gp[i] <= 1.0e-14:
                    continue
                step = max(slack[i], 0.0) / Gp[i]
                if step < alpha - 1.0e-15:
                    alpha, blocking = step, i
        x = x + alpha * p
        if blocking is not None:
            work.append(int(blocking))
    else:
        raise NumericalError(f"active-set QP did not converge in {MAX_ITER} iterations")

    # multipliers back to the problem layout
    lam_g = np.zeros(G.shape[0])
    for j, i in enumerate(work):
        lam_g[i] = max(lam_work[j], 0.0)
    mu_eq = np.zeros(n_eq)
    if n_eq:
        # recover equality multipliers on all rows (dropped ones get zero) by least squares
        resid = -(H @ x + g) - G.T @ lam_g
        mu_eq = np.linalg.lstsq(A_eq.T, resid, rcond=None)[0]
    nu_hi = np.zeros(n)
    nu_lo = np.zeros(n)
    nu_hi[hi_idx] = lam_g[m_ub : m_ub + hi_idx.size]
    nu_lo[lo_idx] = lam_g[m_ub + hi_idx.size :]
    return QpResult(
        x=x,
        objective=float(0.5 * x @ H @ x + g @ x),
        lam_ub=lam_g[:m_ub],
        mu_eq=mu_eq,
        nu_lo=nu_lo,
        nu_hi=nu_hi,
        binding=binding_report(x, A_ub, b_ub, lo, hi, ub_names, var_names),
        iterations=iterations,
    )


def _project(z, lo, hi, a, b, tol=1.0e-14):
    """Euclidean projection onto {lo <= x <= hi, a . x >= b}."""
    x = np.clip(z, lo, hi)
    if a @ x >= b:
        return x
    top = 1.0
    while a @ np.clip(z + top * a, lo, hi) < b:
        top *= 2.0
        if top > 1.0e12:
            raise InfeasibleProblemError("half-space does not meet the box")
    bottom = 0.0
    while top - bottom > tol * max(1.0, top):
        mid = 0.5 * (top + bottom)
        if a @ np.clip(z + mid * a, lo, hi) >= b:
            top = mid
        else:
            bottom = mid
    return np.clip(z + top * a, lo, hi)


def projected_gradient_qp(H, g, lo, hi, a, b, tol=1.0e-13, max_iter=500_000):
    """
    Reference solver for a box plus one half-space ``a . x >= b``.

    Plain projected gradient with step 1/L; slow but shares no code with the
    active-set method, which makes it a usable oracle.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.asarray(g, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    a = np.asarray(a, dtype=float)
    step = 1.0 / np.linalg.eigvalsh(H).max()
    x = _project(np.zeros_like(g), lo, hi, a, b)
    for _ in range(max_iter):
        x_new = _project(x - step * (H @ x + g), lo, hi, a, b)
        if np.linalg.norm(x_new - x, np.inf) <= tol:
            return x_new
        x = x_new
    logging.warning("projected gradient reached its iteration limit")
    return x
