"""State vector x = [P_g..., V_g..., P_L..., Q_L...] fed to the VSM surrogate."""

import numpy as np


def feature_names(net):
    n = len(net.controllers)
    m = len(net.load_buses)
    return (
        [f"Pg_{i + 1}" for i in range(n)]
        + [f"Vg_{i + 1}" for i in range(n)]
        + [f"PL_{i + 1}" for i in range(m)]
        + [f"QL_{i + 1}" for i in range(m)]
    )


def state_vector(net, result):
    """
    Build x from a co-simulation result.

    P_g includes the slack output from the solution, V_g is the solved
    magnitude at each controller bus, and P_L/Q_L are the net transmission
    side loads at every load bus (boundary aggregates included).
    """
    tx = result.tx
    idx = net.bus_index
    ctrl = net.controllers
    buses = net.load_buses
    pg = np.asarray(tx.gen_p, dtype=float)
    vg = np.array([tx.v_mag[idx[u.bus]] for u in ctrl])
    pl = np.array([tx.p_load[idx[b]] for b in buses])
    ql = np.array([tx.q_load[idx[b]] for b in buses])
    return np.concatenate([pg, vg, pl, ql])


def split_index(net):
    """Slices of the P_g, V_g, P_L and Q_L blocks inside x."""
    n = len(net.controllers)
    m = len(net.load_buses)
    return slice(0, n), slice(n, 2 * n), slice(2 * n, 2 * n + m), slice(2 * n + m, 2 * n + 2 * m)
