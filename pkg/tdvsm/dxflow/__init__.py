from tdvsm.dxflow.lindistflow import LinDistState, path_incidence, path_matrices, solve_lindistflow  # noqa
from tdvsm.dxflow.sweep import BfsConfig, DxSolution, boundary_aggregate, select_tap, solve_bfs  # noqa
