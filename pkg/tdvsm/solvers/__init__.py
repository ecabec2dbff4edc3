from tdvsm.solvers.kkt import KktReport, check_kkt, check_lp_feasibility  # noqa
from tdvsm.solvers.lp import LpResult, dump_lp, solve_lp  # noqa
from tdvsm.solvers.qp import QpResult, projected_gradient_qp, solve_qp  # noqa
