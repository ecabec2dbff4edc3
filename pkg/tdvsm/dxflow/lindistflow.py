"""
LinDistFlow: the lossless linear branch-flow model of a radial feeder.

Quantities are single-phase equivalent, i.e. phase sums expressed in pu of
the feeder's three-phase ``base_kva``; voltages are squared magnitudes.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class LinDistState:
    v_sq: np.ndarray  # per node, pu^2
    p_flow: np.ndarray  # per edge, pu
    q_flow: np.ndarray
    p0: float  # substation inflow, pu
    q0: float


@lru_cache(maxsize=64)
def path_incidence(feeder):
    """
    A[j, e] = 1 when edge ``e`` lies on the path from the substation to node ``j``.

    Row ``j`` of A is the path of node j; column ``e`` (equivalently row ``e``
    of A.T) is the set of nodes downstream of edge ``e``.
    """
    n = len(feeder.nodes)
    A = np.zeros((n, len(feeder.edges)))
    edge_to = feeder.edge_to
    for j in feeder.order[1:]:
        k = edge_to[j]
        A[j] = A[feeder.edges[k].parent]
        A[j, k] = 1.0
    A.flags.writeable = False
    return A


def path_matrices(feeder):
    """Shared-path resistance and reactance matrices R, X (node x node, pu)."""
    A = path_incidence(feeder)
    r = np.array([e.r for e in feeder.edges])
    x = np.array([e.x for e in feeder.edges])
    return (A * r) @ A.T, (A * x) @ A.T


def der_injections(feeder, der_q=None):
    """Aggregated DER injections per node (pu): active from ``p_gen``, reactive from ``der_q`` (kVAr)."""
    n = len(feeder.nodes)
    p = np.zeros(n)
    q = np.zeros(n)
    if der_q is None:
        der_q = np.zeros(len(feeder.ders))
    der_q = np.asarray(der_q, dtype=float)
    if der_q.ndim == 2:
        der_q = der_q.sum(axis=1)
    for der, qj in zip(feeder.ders, der_q):
        p[der.node] += der.p_gen
        q[der.node] += qj
    return p / feeder.base_kva, q / feeder.base_kva


def der_incidence(feeder):
    """Node x DER matrix mapping per-DER quantities onto their nodes."""
    M = np.zeros((len(feeder.nodes), len(feeder.ders)))
    for k, der in enumerate(feeder.ders):
        M[der.node, k] = 1.0
    return M


def solve_lindistflow(feeder, v0_sq, der_q=None, load_scale=1.0):
    """
    Exact solution of the linear model: flows accumulate from the leaves,
    squared voltages drop from the substation.
    """
    p_load, q_load = feeder.load_pu(load_scale)
    p_der, q_der = der_injections(feeder, der_q)
    p_net = p_load - p_der
    q_net = q_load - q_der

    order = feeder.order
    edge_to = feeder.edge_to
    P = np.zeros(len(feeder.edges))
    Q = np.zeros(len(feeder.edges))
    for j in reversed(order[1:]):
        k = edge_to[j]
        P[k] = p_net[j] + sum(P[edge_to[c]] for c in feeder.children[j])
        Q[k] = q_net[j] + sum(Q[edge_to[c]] for c in feeder.children[j])

    v = np.zeros(len(feeder.nodes))
    v[0] = v0_sq
    for j in order[1:]:
        k = edge_to[j]
        e = feeder.edges[k]
        v[j] = v[e.parent] - 2.0 * (e.r * P[k] + e.x * Q[k])

    roots = [edge_to[c] for c in feeder.children[0]]
    p0 = p_net[0] + P[roots].sum()
    q0 = q_net[0] + Q[roots].sum()
    return LinDistState(v_sq=v, p_flow=P, q_flow=Q, p0=float(p0), q0=float(q0))
