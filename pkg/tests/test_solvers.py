import numpy as np
import pytest

from tdvsm.errors import InfeasibleProblemError, UnboundedProblemError
from tdvsm.solvers import check_kkt, check_lp_feasibility, projected_gradient_qp, solve_lp, solve_qp
from tdvsm.utils.misc import read_text

NONNEG2 = [(0.0, None), (0.0, None)]


def test_lp_textbook_vertex():
    A = [[1.0, 2.0], [3.0, 1.0]]
    b = [4.0, 6.0]
    res = solve_lp([-1.0, -1.0], A, b, bounds=NONNEG2)
    np.testing.assert_allclose(res.x, [1.6, 1.2], atol=1e-9)
    assert res.objective == pytest.approx(-2.8)
    np.testing.assert_allclose(res.lam_ub, [0.4, 0.2], atol=1e-9)
    assert check_kkt(res, [-1.0, -1.0], None, A, b, bounds=NONNEG2).ok()
    assert res.binding == ["ub0", "ub1"]


def test_lp_degenerate_cycling_example():
    c = [-0.75, 20.0, -0.5, 6.0]
    A = [
        [0.25, -8.0, -1.0, 9.0],
        [0.5, -12.0, -0.5, 3.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
    b = [0.0, 0.0, 1.0]
    bounds = [(0.0, None)] * 4
    res = solve_lp(c, A, b, bounds=bounds)
    assert res.objective == pytest.approx(-1.25)
    np.testing.assert_allclose(res.x, [1.0, 0.0, 1.0, 0.0], atol=1e-9)
    assert check_kkt(res, c, None, A, b, bounds=bounds).ok()


def test_lp_free_variable_and_equality():
    bounds = [(0.0, 5.0), (None, None)]
    res = solve_lp([1.0, 1.0], A_eq=[[1.0, -1.0]], b_eq=[1.0], bounds=bounds)
    np.testing.assert_allclose(res.x, [0.0, -1.0], atol=1e-9)
    report = check_kkt(res, [1.0, 1.0], None, A_eq=[[1.0, -1.0]], b_eq=[1.0], bounds=bounds)
    assert report.ok()
    assert res.nu_lo[0] == pytest.approx(2.0)


def test_lp_upper_bounded_variable():
    bounds = [(None, 3.0), (0.0, None)]
    res = solve_lp([-1.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], bounds=bounds)
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-9)


def test_lp_redundant_equalities():
    A_eq = [[1.0, 1.0], [2.0, 2.0]]
    res = solve_lp([1.0, 2.0], A_eq=A_eq, b_eq=[1.0, 2.0], bounds=NONNEG2)
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-9)
    assert check_lp_feasibility(res.x, A_eq=A_eq, b_eq=[1.0, 2.0], bounds=NONNEG2) <= 1e-9


def test_lp_infeasible_names_violated_rows():
    names = {"ub": ["budget"], "var": ["a", "b"]}
    with pytest.raises(InfeasibleProblemError) as err:
        solve_lp([1.0, 1.0], [[1.0, 1.0]], [-1.0], bounds=NONNEG2, names=names)
    assert "budget" in err.value.diagnosis


def test_lp_crossed_bounds():
    with pytest.raises(InfeasibleProblemError, match="lower bound"):
        solve_lp([1.0], bounds=[(2.0, 1.0)])


def test_lp_unbounded():
    with pytest.raises(UnboundedProblemError):
        solve_lp([-1.0, 0.0], [[0.0, 1.0]], [1.0], bounds=NONNEG2)


def test_lp_dump(tmp_path):
    path = str(tmp_path / "problem.lp")
    solve_lp(
        [1.0, -2.0],
        [[1.0, 1.0]],
        [4.0],
        bounds=[(0.0, 3.0), (None, None)],
        names={"ub": ["cap"], "var": ["q[1]", "q[2]"]},
        dump_path=path,
        A_eq=[[0.0, 1.0]],
        b_eq=[1.0],
    )
    text = read_text(path)
    for token in ("Minimize", "Subject To", "Bounds", "End", " cap:", "q[2] free", "0 <= q[1] <= 3"):
        assert token in text


def test_qp_projection():
    H = 2.0 * np.eye(2)
    g = [-2.0, -4.0]
    res = solve_qp(H, g, [[1.0, 1.0]], [2.0])
    np.testing.assert_allclose(res.x, [0.5, 1.5], atol=1e-10)
    assert res.lam_ub[0] == pytest.approx(1.0)
    assert check_kkt(res, g, H, [[1.0, 1.0]], [2.0]).ok()


def test_qp_equality_multiplier():
    res = solve_qp(2.0 * np.eye(2), [0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[1.0])
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-10)
    assert res.mu_eq[0] == pytest.approx(-1.0)


def test_qp_interior_optimum_has_no_active_constraints():
    res = solve_qp(np.eye(2), [-0.1, 0.2], bounds=[(-1.0, 1.0), (-1.0, 1.0)])
    np.testing.assert_allclose(res.x, [0.1, -0.2], atol=1e-12)
    assert res.binding == []
    assert not res.nu_lo.any() and not res.nu_hi.any()


def test_qp_rejects_infeasible_start():
    with pytest.raises(InfeasibleProblemError):
        solve_qp(np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [1.0], x0=[2.0, 2.0])


@pytest.mark.parametrize("seed", range(20))
def test_qp_matches_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(4, 4))
    H = L @ L.T + 0.5 * np.eye(4)
    g = rng.normal(size=4)
    lo, hi = -np.ones(4), np.ones(4)
    a = rng.uniform(0.5, 1.5, size=4)
    b = 1.0
    res = solve_qp(H, g, [-a], [-b], bounds=list(zip(lo, hi)))
    reference = projected_gradient_qp(H, g, lo, hi, a, b)
    np.testing.assert_allclose(res.x, reference, atol=1e-6)
    assert check_kkt(res, g, H, [-a], [-b], bounds=list(zip(lo, hi))).ok()


def _best_vertex(c, A, b, lo, hi):
    """Brute force over intersections of every pair of constraint lines."""
    lines = [(row, rhs) for row, rhs in zip(A, b)]
    for i in range(2):
        unit = np.eye(2)[i]
        lines += [(unit, hi[i]), (-unit, -lo[i])]
    best = np.inf
    for j in range(len(lines)):
        for k in range(j + 1, len(lines)):
            M = np.array([lines[j][0], lines[k][0]])
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            x = np.linalg.solve(M, [lines[j][1], lines[k][1]])
            if np.all(A @ x <= b + 1e-9) and np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9):
                best = min(best, float(c @ x))
    return best


@pytest.mark.parametrize("seed", range(20))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=2)
    A = rng.normal(size=(int(rng.integers(1, 5)), 2))
    b = rng.uniform(0.2, 2.0, size=A.shape[0])
    lo = -rng.uniform(0.5, 3.0, size=2)
    hi = rng.uniform(0.5, 3.0, size=2)
    bounds = list(zip(lo, hi))
    res = solve_lp(c, A, b, bounds=bounds)
    assert res.objective == pytest.approx(_best_vertex(c, A, b, lo, hi), abs=1e-8)
    assert check_lp_feasibility(res.x, A, b, bounds=bounds) <= 1e-9
    assert check_kkt(res, c, None, A, b, bounds=bounds).ok()
