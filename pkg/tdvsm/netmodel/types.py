"""
Data model of the coupled transmission/distribution system.

Every type is a frozen dataclass; changes are expressed with
``dataclasses.replace`` so models can be shared between concurrent solves.
Powers are MW/MVAr on the transmission side and kW/kVAr inside feeders.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

IBR_Q_FRACTION = 0.3287

BUS_KINDS = ("slack", "pv", "pq")
IBR_KINDS = ("wind", "solar")
CURVE_KINDS = ("box", "circle", "ibr_fraction")


@dataclass(frozen=True)
class CapabilityCurve:
    kind: str = "box"
    q_min: float = 0.0
    q_max: float = 0.0
    s_rating: float = 0.0
    icr: float = 0.0

    def limits(self, p=0.0):
        if self.kind == "box":
            return self.q_min, self.q_max
        if self.kind == "circle":
            q = math.sqrt(max(self.s_rating**2 - p**2, 0.0))
            return -q, q
        if self.kind == "ibr_fraction":
            q = IBR_Q_FRACTION * self.icr
            return -q, q
        raise ValueError(f"unknown capability curve kind {self.kind}")

    def reserves(self, q, p=0.0):
        """Distance (up, down) from ``q`` to the curve, clipped at zero."""
        q_min, q_max = self.limits(p)
        return max(q_max - q, 0.0), max(q - q_min, 0.0)


@dataclass(frozen=True)
class TxBus:
    id: int
    kind: str = "pq"
    v_min: float = 0.94
    v_max: float = 1.06
    base_load_p: float = 0.0
    base_load_q: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class TxBranch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    in_service: bool = True
    tap: float = 1.0


@dataclass(frozen=True)
class GenUnit:
    bus: int
    p_out: float
    v_set: float
    q_min: float
    q_max: float
    p_max: float
    capability: CapabilityCurve = CapabilityCurve()

    def q_limits(self):
        if self.capability.kind == "box":
            return self.q_min, self.q_max
        return self.capability.limits(self.p_out)


@dataclass(frozen=True)
class IbrUnit:
    bus: int
    p_out: float
    icr: float
    kind: str = "solar"
    v_set: float = 1.0

    @property
    def capability(self):
        return CapabilityCurve(kind="ibr_fraction", icr=self.icr)


@dataclass(frozen=True)
class BoundaryLink:
    tx_bus: int
    feeder: str
    beta: int = 1
    kv_tx: float = 0.0
    kv_dx: float = 0.0


@dataclass(frozen=True)
class Contingency:
    id: str = "none"
    kind: str = "none"
    element: Optional[int] = None


NO_CONTINGENCY = Contingency()


@dataclass(frozen=True)
class TransmissionNetwork:
    buses: Tuple[TxBus, ...]
    branches: Tuple[TxBranch, ...]
    generators: Tuple[GenUnit, ...]
    ibrs: Tuple[IbrUnit, ...] = ()
    boundary_links: Tuple[BoundaryLink, ...] = ()
    base_mva: float = 100.0
    slack_bus: int = 1
    name: str = ""

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    @property
    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def controllers(self):
        """Voltage-controlling units in model order: generators, then IBRs."""
        return list(self.generators) + list(self.ibrs)

    @property
    def slack_controller(self):
        for i, g in enumerate(self.generators):
            if g.bus == self.slack_bus:
                return i
        raise ValueError("no generator at the slack bus")

    @property
    def boundary_buses(self):
        return sorted({link.tx_bus for link in self.boundary_links})

    @property
    def load_buses(self):
        """Buses carrying a transmission-side load: fixed loads and boundary links."""
        loaded = {b.id for b in self.buses if b.base_load_p != 0.0 or b.base_load_q != 0.0}
        loaded.update(self.boundary_buses)
        return sorted(loaded)

    def links_at(self, bus):
        return [i for i, link in enumerate(self.boundary_links) if link.tx_bus == bus]


@dataclass(frozen=True)
class DxNode:
    id: int
    load_p_phase: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    load_q_phase: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    v_min: float = 0.9025
    v_max: float = 1.1025


@dataclass(frozen=True)
class DxEdge:
    parent: int
    child: int
    r: float
    x: float
    z_phase: Optional[Tuple[complex, ...]] = None

    def phase_impedance(self):
        if self.z_phase is None:
            return np.eye(3) * complex(self.r, self.x)
        return np.array(self.z_phase, dtype=complex).reshape(3, 3)


@dataclass(frozen=True)
class DerUnit:
    node: int
    p_gen: float
    s_rating: float
    phases: Tuple[int, ...] = (0, 1, 2)

    # limits follow p_gen, so they are derived rather than stored
    @property
    def q_max(self):
        return math.sqrt(max(self.s_rating**2 - self.p_gen**2, 0.0))

    @property
    def q_min(self):
        return -self.q_max


@dataclass(frozen=True)
class Oltc:
    tap_min: float = 0.9
    tap_max: float = 1.1
    steps: int = 32

    @property
    def positions(self):
        return np.linspace(self.tap_min, self.tap_max, self.steps + 1)

    @property
    def step(self):
        return (self.tap_max - self.tap_min) / self.steps


@dataclass(frozen=True)
class FeederModel:
    id: str
    nodes: Tuple[DxNode, ...]
    edges: Tuple[DxEdge, ...]
    ders: Tuple[DerUnit, ...] = ()
    oltc: Oltc = Oltc()
    base_kva: float = 1000.0
    kv: float = 0.0
    children: Tuple[Tuple[int, ...], ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        kids = [[] for _ in self.nodes]
        for e in self.edges:
            if 0 <= e.parent < len(kids):
                kids[e.parent].append(e.child)
        object.__setattr__(self, "children", tuple(tuple(sorted(k)) for k in kids))

    @property
    def order(self):
        """Nodes in breadth-first order from the substation."""
        seen, queue = [], [0]
        while queue:
            j = queue.pop(0)
            seen.append(j)
            queue.extend(self.children[j])
        return seen

    @property
    def edge_to(self):
        """Map child node -> index of the edge feeding it."""
        return {e.child: k for k, e in enumerate(self.edges)}

    def load_pu(self, scale=1.0):
        """Aggregated (phase-summed) nodal loads in pu of ``base_kva``."""
        p = np.array([sum(n.load_p_phase) for n in self.nodes]) * scale / self.base_kva
        q = np.array([sum(n.load_q_phase) for n in self.nodes]) * scale / self.base_kva
        return p, q


@dataclass(frozen=True)
class OperatingPoint:
    """
    Operating point handed to the power-flow machinery.

    ``p_gen``/``v_gen`` follow ``TransmissionNetwork.controllers`` ordering,
    ``p_load``/``q_load`` are the fixed transmission loads per bus,
    ``feeder_scale`` and ``der_q`` are per boundary link (DER set points as
    per-DER per-phase kVAr), ``q_inject`` is an extra reactive injection per
    bus in MVAr and ``load_scale`` multiplies every load on both sides.
    """

    p_gen: Tuple[float, ...]
    v_gen: Tuple[float, ...]
    p_load: Tuple[float, ...]
    q_load: Tuple[float, ...]
    feeder_scale: Tuple[float, ...] = ()
    der_q: Tuple[Tuple[Tuple[float, float, float], ...], ...] = ()
    q_inject: Tuple[float, ...] = ()
    load_scale: float = 1.0

    def der_q_array(self, link_index, n_der):
        if not self.der_q or not self.der_q[link_index]:
            return np.zeros((n_der, 3))
        return np.array(self.der_q[link_index], dtype=float).reshape(n_der, 3)


def nominal_operating_point(net: TransmissionNetwork) -> OperatingPoint:
    ctrl = net.controllers
    return OperatingPoint(
        p_gen=tuple(float(u.p_out) for u in ctrl),
        v_gen=tuple(float(u.v_set) for u in ctrl),
        p_load=tuple(float(b.base_load_p) for b in net.buses),
        q_load=tuple(float(b.base_load_q) for b in net.buses),
        feeder_scale=tuple(1.0 for _ in net.boundary_links),
    )


def der_phase_split(der: DerUnit, q_total):
    """Equal split of a DER's reactive output across its connected phases."""
    out = np.zeros(3)
    out[list(der.phases)] = q_total / len(der.phases)
    return out
