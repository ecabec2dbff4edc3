import math

import numpy as np

from tdvsm.netmodel.types import IBR_Q_FRACTION, DerUnit, IbrUnit


def ibr_q_limits(u: IbrUnit):
    """Fixed reactive box of an IBR in MVAr: +/- 0.3287 * ICR at any output."""
    q = IBR_Q_FRACTION * u.icr
    return -q, q


def der_q_limits(u: DerUnit):
    """Reactive limits of a DER in kVAr from its P-Q circle."""
    q = math.sqrt(max(u.s_rating**2 - u.p_gen**2, 0.0))
    return -q, q


def controller_q_limits(net):
    """(q_min, q_max) in MVAr per controller, generators first then IBRs."""
    limits = [g.q_limits() for g in net.generators]
    limits += [ibr_q_limits(u) for u in net.ibrs]
    return limits


def reactive_reserves(net, sol):
    """
    Reactive power reserves of every transmission controller.

    Returns a list of dicts with the controller bus, kind, current Q and the
    up/down distance to its capability limit (MVAr).
    """
    out = []
    units = [("gen", g) for g in net.generators] + [("ibr", u) for u in net.ibrs]
    for (kind, unit), (q_min, q_max), q in zip(units, controller_q_limits(net), sol.gen_q):
        out.append(
            {
                "bus": unit.bus,
                "kind": kind,
                "q": float(q),
                "up": max(q_max - q, 0.0),
                "down": max(q - q_min, 0.0),
            }
        )
    return out


def der_reserves(feeder, q):
    """Up/down reserves (kVAr) of each DER at total reactive outputs ``q``."""
    q = np.asarray(q, dtype=float)
    up, down = [], []
    for der, qj in zip(feeder.ders, q):
        q_min, q_max = der_q_limits(der)
        up.append(max(q_max - qj, 0.0))
        down.append(max(qj - q_min, 0.0))
    return np.array(up), np.array(down)
