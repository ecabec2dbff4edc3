"""
Gauss-ordered T&D co-simulation.

Each round solves every boundary feeder at the current interface voltage,
lifts the substation injections to the transmission side (times beta), solves
the transmission network and pushes the new bus voltages back down. The
alternation stops when interface voltages and boundary reactive loads settle.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from tdvsm.dxflow.sweep import BfsConfig, DxSolution, boundary_aggregate, solve_bfs
from tdvsm.netmodel.contingency import apply_contingency
from tdvsm.txflow.newton import PowerFlowConfig, TxSolution, solve_nr
from tdvsm.utils.misc import ordered_map, write_csv


@dataclass
class CoSimConfig:
    v_tol: float = 1.0e-5  # pu
    q_tol: float = 1.0e-3  # MVAr
    max_rounds: int = 50
    jobs: int = 1

    def __post_init__(self):
        self.v_tol = float(self.v_tol)
        self.q_tol = float(self.q_tol)
        self.max_rounds = int(self.max_rounds)
        self.jobs = int(self.jobs)


@dataclass
class CoSimResult:
    tx: TxSolution
    dx: Dict[int, DxSolution]  # keyed by boundary bus
    boundary: Dict[int, Tuple[float, float, complex]]  # bus -> (P_L MW, Q_L MVAr, V_interface)
    converged: bool
    rounds: int
    net: object = None  # network with the contingency applied
    reason: str = ""
    trace: list = field(default_factory=list)


def cosimulate(
    net,
    feeders,
    op,
    contingency=None,
    config=None,
    pf_config=None,
    bfs_config=None,
    warm_start=None,
    trace_path=None,
):
    """
    Co-simulate ``net`` and its boundary feeders at operating point ``op``.

    ``feeders`` is a list (or dict by id) of FeederModel. A converged
    ``warm_start`` seeds interface voltages, taps and PV->PQ switches, so
    repeating a converged run settles in one round. Divergence of either side
    or of the alternation returns ``converged=False``.
    """
    config = config or CoSimConfig()
    pf_config = pf_config or PowerFlowConfig()
    bfs_config = bfs_config or BfsConfig()
    if not isinstance(feeders, dict):
        feeders = {f.id: f for f in feeders}
    net_c = apply_contingency(net, contingency) if contingency is not None else net
    idx = net_c.bus_index
    n = len(net_c.buses)
    links = net_c.boundary_links

    tx = warm_start.tx if warm_start is not None else None
    if tx is not None:
        v_if = {link.tx_bus: complex(tx.V[idx[link.tx_bus]]) for link in links}
        q_prev = {bus: vals[1] for bus, vals in warm_start.boundary.items()}
        taps = {bus: sol.tap for bus, sol in warm_start.dx.items()}
    else:
        v_if = {link.tx_bus: 1.0 + 0j for link in links}
        q_prev = None
        taps = {}

    def solve_link(item):
        i, link = item
        feeder = feeders[link.feeder]
        scale = op.load_scale * (op.feeder_scale[i] if op.feeder_scale else 1.0)
        return solve_bfs(
            feeder,
            v_if[link.tx_bus],
            der_q=op.der_q_array(i, len(feeder.ders)),
            load_scale=scale,
            config=bfs_config,
            tap_hint=taps.get(link.tx_bus),
        )

    trace = []
    dx = {}
    boundary = {}
    for rounds in range(1, config.max_rounds + 1):
        sols = ordered_map(solve_link, list(enumerate(links)), jobs=config.jobs)
        extra_p = np.zeros(n)
        extra_q = np.zeros(n)
        q_now = {}
        for link, sol in zip(links, sols):
            if not sol.converged:
                return CoSimResult(tx, dx, boundary, False, rounds, net_c, f"feeder at bus {link.tx_bus} diverged", trace)
            p_l, q_l = boundary_aggregate(sol, link)
            extra_p[idx[link.tx_bus]] += p_l
            extra_q[idx[link.tx_bus]] += q_l
            q_now[link.tx_bus] = q_l
            dx[link.tx_bus] = sol
            taps[link.tx_bus] = sol.tap

        tx = solve_nr(net_c, op, pf_config, warm_start=tx, extra_load=(extra_p, extra_q))
        if not tx.converged:
            return CoSimResult(tx, dx, boundary, False, rounds, net_c, "transmission power flow diverged", trace)

        V = tx.V
        dv = max((abs(abs(V[idx[b]]) - abs(v_if[b])) for b in v_if), default=0.0)
        dq = max((abs(q_now[b] - q_prev[b]) for b in q_now), default=0.0) if q_prev is not None else np.inf
        if not links:
            dq = 0.0
        boundary = {}
        for link in links:
            b = link.tx_bus
            boundary[b] = (float(extra_p[idx[b]]), float(extra_q[idx[b]]), complex(V[idx[b]]))
            trace.append({"round": rounds, "bus": b, "V": abs(V[idx[b]]), "P_L": boundary[b][0], "Q_L": boundary[b][1]})
            v_if[b] = complex(V[idx[b]])
        q_prev = q_now
        if dv <= config.v_tol and dq <= config.q_tol:
            if trace_path is not None:
                write_csv(trace_path, pd.DataFrame(trace, columns=["round", "bus", "V", "P_L", "Q_L"]))
            return CoSimResult(tx, dx, boundary, True, rounds, net_c, "", trace)

    logging.debug(f"Co-simulation did not settle within {config.max_rounds} rounds")
    if trace_path is not None:
        write_csv(trace_path, pd.DataFrame(trace, columns=["round", "bus", "V", "P_L", "Q_L"]))
    return CoSimResult(tx, dx, boundary, False, config.max_rounds, net_c, "round limit reached", trace)
