"""
Dense two-phase simplex with Bland's rule.

Problems are stated as

    minimize    c . x
    subject to  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi

and brought to standard form by shifting lower bounds, reflecting variables
that only have an upper bound, splitting free variables and adding one row
per doubly bounded variable. Multipliers follow the sign convention

    c + A_ub^T lam + A_eq^T mu + nu_hi - nu_lo = 0,   lam, nu_lo, nu_hi >= 0

which the QP solver and the KKT checker share.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from tdvsm.errors import InfeasibleProblemError, NumericalError, UnboundedProblemError
from tdvsm.utils.misc import write_text

TOL = 1.0e-9
MAX_PIVOTS = 50_000


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    lam_ub: np.ndarray
    mu_eq: np.ndarray
    nu_lo: np.ndarray
    nu_hi: np.ndarray
    binding: List[str] = field(default_factory=list)
    iterations: int = 0


def as_problem(n, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Normalize optional inputs to dense arrays; ``bounds`` is a list of (lo, hi) with None for infinite."""
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float)).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float)).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    if A_ub.shape[0] != b_ub.size or A_eq.shape[0] != b_eq.size:
        raise ValueError("constraint matrix and right-hand side sizes differ")
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    if bounds is not None:
        if len(bounds) != n:
            raise ValueError(f"{len(bounds)} bounds for {n} variables")
        for i, (l, h) in enumerate(bounds):
            lo[i] = -np.inf if l is None else float(l)
            hi[i] = np.inf if h is None else float(h)
    if np.any(lo > hi):
        bad = int(np.flatnonzero(lo > hi)[0])
        raise InfeasibleProblemError("LP is infeasible", f"x{bad}: lower bound {lo[bad]:g} above upper bound {hi[bad]:g}")
    return A_ub, b_ub, A_eq, b_eq, lo, hi


def _names(prefix, count, given):
    if given is not None and len(given) == count:
        return list(given)
    return [f"{prefix}{i}" for i in range(count)]


def _pivot(T, row, col):
    T[row] /= T[row, col]
    others = np.flatnonzero(np.arange(T.shape[0]) != row)
    T[others] -= np.outer(T[others, col], T[row])


def _simplex(T, basis, n_cols, iterations):
    """Bland's rule on tableau ``T`` (last row reduced costs, last column rhs)."""
    while True:
        if iterations >= MAX_PIVOTS:
            raise NumericalError(f"simplex did not terminate within {MAX_PIVOTS} pivots")
        entering = np.flatnonzero(T[-1, :n_cols] < -TOL)
        if entering.size == 0:
            return iterations
        j = int(entering[0])
        col = T[:-1, j]
        rows = np.flatnonzero(col > TOL)
        if rows.size == 0:
            raise UnboundedProblemError(f"LP is unbounded along column {j}")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + TOL * max(1.0, abs(best))]
        i = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, i, j)
        basis[i] = j
        iterations += 1


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, names=None, dump_path=None):
    """
    Minimize ``c . x``; variables without bounds are free.

    ``names`` may hold "ub", "eq" and "var" name lists used in the binding
    constraint report and infeasibility diagnosis. Raises
    InfeasibleProblemError or UnboundedProblemError.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    n = c.size
    A_ub, b_ub, A_eq, b_eq, lo, hi = as_problem(n, A_ub, b_ub, A_eq, b_eq, bounds)
    names = names or {}
    ub_names = _names("ub", A_ub.shape[0], names.get("ub"))
    eq_names = _names("eq", A_eq.shape[0], names.get("eq"))
    var_names = _names("x", n, names.get("var"))
    if dump_path is not None:
        dump_lp(dump_path, c, A_ub, b_ub, A_eq, b_eq, list(zip(lo, hi)), var_names, ub_names, eq_names)

    # x = offset + T z, z >= 0
    offset = np.zeros(n)
    cols = []  # (variable, sign)
    z_of = {}
    for i in range(n):
        if np.isfinite(lo[i]):
            offset[i] = lo[i]
            z_of[i] = len(cols)
            cols.append((i, 1.0))
        elif np.isfinite(hi[i]):
            offset[i] = hi[i]
            z_of[i] = len(cols)
            cols.append((i, -1.0))
        else:
            z_of[i] = len(cols)
            cols.append((i, 1.0))
            cols.append((i, -1.0))
    nz = len(cols)
    Tz = np.zeros((n, nz))
    for k, (i, s) in enumerate(cols):
        Tz[i, k] = s
    boxed = [i for i in range(n) if np.isfinite(lo[i]) and np.isfinite(hi[i])]

    m_ub, m_eq, m_bd = A_ub.shape[0], A_eq.shape[0], len(boxed)
    m = m_ub + m_eq + m_bd
    n_slack = m_ub + m_bd
    n_real = nz + n_slack
    M = np.zeros((m, n_real))
    r = np.zeros(m)
    M[:m_ub, :nz] = A_ub @ Tz
    r[:m_ub] = b_ub - A_ub @ offset
    M[m_ub : m_ub + m_eq, :nz] = A_eq @ Tz
    r[m_ub : m_ub + m_eq] = b_eq - A_eq @ offset
    for k, i in enumerate(boxed):
        M[m_ub + m_eq + k, z_of[i]] = 1.0
        r[m_ub + m_eq + k] = hi[i] - lo[i]
    slack_rows = list(range(m_ub)) + list(range(m_ub + m_eq, m))
    for k, row in enumerate(slack_rows):
        M[row, nz + k] = 1.0
    sign = np.where(r < 0.0, -1.0, 1.0)
    M *= sign[:, None]
    r *= sign
    cz = np.r_[Tz.T @ c, np.zeros(n_slack)]
    row_names = ub_names + eq_names + [f"{var_names[i]} <= {hi[i]:g}" for i in boxed]

    # phase one: artificial basis
    T = np.zeros((m + 1, n_real + m + 1))
    T[:m, :n_real] = M
    T[:m, n_real : n_real + m] = np.eye(m)
    T[:m, -1] = r
    T[-1, :n_real] = -M.sum(axis=0)
    T[-1, -1] = -r.sum()
    basis = list(range(n_real, n_real + m))
    iterations = _simplex(T, basis, n_real + m, 0)
    infeas = -T[-1, -1]
    scale = max(1.0, float(np.abs(r).max(initial=0.0)))
    if infeas > 1.0e-7 * scale:
        art = {basis[i]: T[i, -1] for i in range(m) if basis[i] >= n_real}
        violated = [f"{row_names[k]} ({art[n_real + k]:.3g})" for k in range(m) if art.get(n_real + k, 0.0) > TOL]
        raise InfeasibleProblemError("LP is infeasible", "violated: " + ", ".join(violated))

    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n_real:
            candidates = np.flatnonzero(np.abs(T[i, :n_real]) > 1.0e-7)
            if candidates.size:
                _pivot(T, i, int(candidates[0]))
                basis[i] = int(candidates[0])
            else:
                keep[i] = False  # redundant row
    rows = np.flatnonzero(keep)
    basis = [basis[i] for i in rows]
    T2 = np.zeros((rows.size + 1, n_real + 1))
    T2[:-1, :n_real] = T[rows, :n_real]
    T2[:-1, -1] = T[rows, -1]
    T2[-1, :n_real] = cz
    for k, b in enumerate(basis):
        T2[-1] -= cz[b] * T2[k]
    iterations = _simplex(T2, basis, n_real, iterations)

    z = np.zeros(n_real)
    for k, b in enumerate(basis):
        z[b] = T2[k, -1]
    x = offset + Tz @ z[:nz]

    # duals from the optimal basis in the original row orientation
    y = np.zeros(m)
    if rows.size:
        B = M[rows][:, basis]
        try:
            y[rows] = np.linalg.solve(B.T, cz[basis])
        except np.linalg.LinAlgError:
            y[rows] = np.linalg.lstsq(B.T, cz[basis], rcond=None)[0]
    d = cz - M.T @ y
    y = y * sign
    lam_ub = np.maximum(-y[:m_ub], 0.0)
    mu_eq = -y[m_ub : m_ub + m_eq]
    nu_lo = np.zeros(n)
    nu_hi = np.zeros(n)
    for i in range(n):
        if np.isfinite(lo[i]):
            nu_lo[i] = max(d[z_of[i]], 0.0)
        elif np.isfinite(hi[i]):
            nu_hi[i] = max(d[z_of[i]], 0.0)
    for k, i in enumerate(boxed):
        nu_hi[i] = max(-y[m_ub + m_eq + k], 0.0)

    result = LpResult(
        x=x,
        objective=float(c @ x),
        lam_ub=lam_ub,
        mu_eq=mu_eq,
        nu_lo=nu_lo,
        nu_hi=nu_hi,
        binding=binding_report(x, A_ub, b_ub, lo, hi, ub_names, var_names),
        iterations=iterations,
    )
    logging.debug(f"LP solved in {iterations} pivots, objective {result.objective:.6g}")
    return result


def binding_report(x, A_ub, b_ub, lo, hi, ub_names, var_names, tol=1.0e-7):
    out = []
    if A_ub.shape[0]:
        slack = b_ub - A_ub @ x
        out += [ub_names[k] for k in np.flatnonzero(np.abs(slack) <= tol * np.maximum(1.0, np.abs(b_ub)))]
    for i in range(x.size):
        if np.isfinite(lo[i]) and abs(x[i] - lo[i]) <= tol * max(1.0, abs(lo[i])):
            out.append(f"{var_names[i]} at lower bound")
        elif np.isfinite(hi[i]) and abs(x[i] - hi[i]) <= tol * max(1.0, abs(hi[i])):
            out.append(f"{var_names[i]} at upper bound")
    return out


def _linear(coefs, names):
    terms = [f"{'-' if v < 0 else '+'} {abs(v):.17g} {name}" for v, name in zip(coefs, names) if v != 0.0]
    return " ".join(terms) if terms else "0 " + names[0]


def dump_lp(path, c, A_ub, b_ub, A_eq, b_eq, bounds, var_names=None, ub_names=None, eq_names=None):
    """Write the problem in CPLEX LP text format."""
    c = np.asarray(c, dtype=float)
    n = c.size
    var_names = var_names or [f"x{i}" for i in range(n)]
    ub_names = ub_names or [f"ub{i}" for i in range(len(b_ub))]
    eq_names = eq_names or [f"eq{i}" for i in range(len(b_eq))]

    def safe(s):
        return "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in str(s))

    vn = [safe(v) for v in var_names]
    lines = ["\\ tdvsm linear program", "Minimize", f" obj: {_linear(c, vn)}", "Subject To"]
    for name, row, rhs in zip(ub_names, A_ub, b_ub):
        lines.append(f" {safe(name)}: {_linear(row, vn)} <= {rhs:.17g}")
    for name, row, rhs in zip(eq_names, A_eq, b_eq):
        lines.append(f" {safe(name)}: {_linear(row, vn)} = {rhs:.17g}")
    lines.append("Bounds")
    for name, (l, h) in zip(vn, bounds):
        l = -np.inf if l is None else l
        h = np.inf if h is None else h
        if np.isinf(l) and np.isinf(h):
            lines.append(f" {name} free")
        else:
            lo_s = "-inf" if np.isinf(l) else f"{l:.17g}"
            hi_s = "+inf" if np.isinf(h) else f"{h:.17g}"
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
    lines.append("End")
    write_text(path, "\n".join(lines) + "\n")
