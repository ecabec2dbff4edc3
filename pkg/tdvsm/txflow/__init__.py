from tdvsm.txflow.newton import PowerFlowConfig, TxSolution, make_ybus, solve_nr  # noqa
from tdvsm.txflow.sensitivities import TxSensitivities, check_sensitivities, sensitivities  # noqa
