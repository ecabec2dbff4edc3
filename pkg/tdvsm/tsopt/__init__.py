from tdvsm.tsopt.problem import TsoConfig, TsoDispatch, TsoProblem, build_tso_problem, build_weights, solve_tso  # noqa
from tdvsm.tsopt.verify import apply_dispatch, evaluate_vsm, verify_dispatch  # noqa
