"""
Three-phase backward/forward sweep for radial feeders.

Loads are constant power per phase; edges use their 3x3 phase impedance
(or the positive-sequence value on each phase). The OLTC at the head picks a
discrete tap holding the node-0 voltage nearest 1.0 pu.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from tdvsm.dxflow.lindistflow import path_incidence
from tdvsm.utils.misc import write_csv

ALPHA = np.exp(-2j * np.pi / 3)
BALANCED = np.array([1.0, ALPHA, ALPHA**2])


@dataclass
class BfsConfig:
    tol: float = 1.0e-8
    max_sweeps: int = 100
    v_floor: float = 0.3

    def __post_init__(self):
        self.tol = float(self.tol)
        self.v_floor = float(self.v_floor)
        self.max_sweeps = int(self.max_sweeps)


@dataclass
class DxSolution:
    v_phase: np.ndarray  # node x phase, complex pu
    p_flow: np.ndarray  # per edge, kW summed over phases
    q_flow: np.ndarray
    p0: float  # substation injection, kW
    q0: float
    tap: float
    converged: bool
    sweeps: int = 0
    max_mismatch: float = np.inf

    @property
    def v_mag(self):
        return np.abs(self.v_phase)


def select_tap(oltc, v_primary, hint=None):
    """
    Tap position holding ``tap * |V_primary|`` nearest 1.0 pu.

    A previous position passed as ``hint`` is kept while it stays within one
    step of the target, which stops the tap from chattering between rounds.
    """
    positions = oltc.positions
    if hint is not None and oltc.tap_min - 1e-12 <= hint <= oltc.tap_max + 1e-12:
        if abs(hint * v_primary - 1.0) <= oltc.step * v_primary:
            return float(hint)
    return float(positions[np.argmin(np.abs(positions * v_primary - 1.0))])


def _per_phase_der(feeder, der_q):
    """DER injections per node and phase in kW/kVAr."""
    n = len(feeder.nodes)
    s = np.zeros((n, 3), dtype=complex)
    if der_q is None:
        der_q = np.zeros(len(feeder.ders))
    der_q = np.asarray(der_q, dtype=float)
    for k, der in enumerate(feeder.ders):
        phases = list(der.phases)
        if der_q.ndim == 2:
            q = der_q[k]
        else:
            q = np.zeros(3)
            q[phases] = der_q[k] / len(phases)
        p = np.zeros(3)
        p[phases] = der.p_gen / len(phases)
        s[der.node] += p + 1j * q
    return s


def solve_bfs(feeder, substation_v, der_q=None, load_scale=1.0, config=None, tap_hint=None):
    """
    Arguments:
      feeder: FeederModel
      substation_v: complex primary voltage (broadcast as balanced three-phase)
        or an array of 3 phase voltages
      der_q: per-DER total kVAr (split equally over its phases) or per-DER per-phase kVAr
      load_scale: multiplier applied to every load
      tap_hint: tap of a previous solve, kept while still acceptable

    Returns:
      DxSolution
    """
    config = config or BfsConfig()
    sub = np.asarray(substation_v, dtype=complex)
    v_primary = sub * BALANCED if sub.ndim == 0 else sub
    tap = select_tap(feeder.oltc, float(np.mean(np.abs(v_primary))), tap_hint)
    V0 = tap * v_primary

    n = len(feeder.nodes)
    to_pu = 3.0 / feeder.base_kva
    loads = np.array([np.array(nd.load_p_phase) + 1j * np.array(nd.load_q_phase) for nd in feeder.nodes])
    S_net = (loads * load_scale - _per_phase_der(feeder, der_q)) * to_pu
    A = path_incidence(feeder)
    Z = np.array([e.phase_impedance() for e in feeder.edges]).reshape(len(feeder.edges), 3, 3)

    V = np.tile(V0, (n, 1))
    converged = False
    mismatch = np.inf
    sweeps = 0
    I_edge = np.zeros((len(feeder.edges), 3), dtype=complex)
    for sweeps in range(1, config.max_sweeps + 1):
        I_node = np.conj(S_net / V)
        # backward: each edge carries every current downstream of it
        I_edge = A.T @ I_node
        # forward: accumulated drops along the path to each node
        drops = np.einsum("eij,ej->ei", Z, I_edge)
        V_new = V0 - A @ drops
        mismatch = float(np.max(np.abs(V_new - V)))
        V = V_new
        if not np.all(np.isfinite(V)) or np.min(np.abs(V)) < config.v_floor:
            break
        if mismatch <= config.tol:
            converged = True
            break

    base = feeder.base_kva / 3.0
    parents = [e.parent for e in feeder.edges]
    S_edge = (V[parents] * np.conj(I_edge)).sum(axis=1) * base
    I_root = np.conj(S_net[0] / V[0]) + I_edge[[k for k, e in enumerate(feeder.edges) if e.parent == 0]].sum(axis=0)
    S0 = (V[0] * np.conj(I_root)).sum() * base
    return DxSolution(
        v_phase=V,
        p_flow=S_edge.real,
        q_flow=S_edge.imag,
        p0=float(S0.real),
        q0=float(S0.imag),
        tap=tap,
        converged=converged,
        sweeps=sweeps,
        max_mismatch=mismatch,
    )


def boundary_aggregate(sol, link):
    """Transmission-side load (MW, MVAr) of ``link.beta`` copies of the solved feeder."""
    return link.beta * sol.p0 / 1000.0, link.beta * sol.q0 / 1000.0


def dump_voltage_profile(path, sol):
    n = sol.v_phase.shape[0]
    frame = pd.DataFrame(
        {
            "node": np.repeat(np.arange(n), 3),
            "phase": np.tile(np.arange(3), n),
            "vmag": np.abs(sol.v_phase).ravel(),
        }
    )
    write_csv(path, frame)
