"""
Voltage stability margin by load scaling to divergence.

All loads (transmission and feeder) grow with the loading factor at constant
power factor; non-slack synchronous units pick up the extra demand in
proportion to their remaining headroom and the slack absorbs the rest. A
coarse march brackets the first failing factor and bisection narrows the
bracket.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from tdvsm.cosim import cosimulate
from tdvsm.errors import BaseInfeasibleError, ConfigError
from tdvsm.margin.state import state_vector
from tdvsm.netmodel.types import NO_CONTINGENCY


@dataclass
class MarginConfig:
    step: float = 0.05
    width: float = 1.0e-3
    lambda_cap: float = 20.0
    participation: float = 1.0  # share of the load growth offered to non-slack units

    def __post_init__(self):
        self.step = float(self.step)
        self.width = float(self.width)
        self.lambda_cap = float(self.lambda_cap)
        self.participation = float(self.participation)
        if self.step <= 0.0 or self.width <= 0.0 or self.lambda_cap <= 1.0:
            raise ConfigError("margin step/width must be positive and lambda_cap > 1")


@dataclass
class VsmSample:
    x: np.ndarray
    contingency: str
    vsm: float  # MW
    lambda_max: float
    seed: int = 0


def dispatch_at(net, op, lam, base_total_p, participation=1.0):
    """Operating point at loading factor ``lam`` with generation following load."""
    p_gen = np.array(op.p_gen, dtype=float)
    slack = net.slack_controller
    extra = max(lam - 1.0, 0.0) * base_total_p * participation
    headroom = np.zeros(len(p_gen))
    for i, g in enumerate(net.generators):
        if i != slack:
            headroom[i] = max(g.p_max - p_gen[i], 0.0)
    total = headroom.sum()
    if total > 0.0:
        p_gen += headroom * min(extra, total) / total
    return replace(op, p_gen=tuple(p_gen.tolist()), load_scale=op.load_scale * lam)


class _Sweep:
    """Evaluates the co-simulation along the loading direction with warm starts."""

    def __init__(self, net, feeders, scenario, contingency, config, cosim_config, pf_config):
        self.net = net
        self.feeders = feeders
        self.scenario = scenario
        self.contingency = contingency
        self.config = config
        self.cosim_config = cosim_config
        self.pf_config = pf_config

    def solve(self, lam, warm=None):
        op = dispatch_at(self.net, self.scenario.op, lam, self.scenario.base_total_p, self.config.participation)
        return cosimulate(
            self.net,
            self.feeders,
            op,
            self.contingency,
            config=self.cosim_config,
            pf_config=self.pf_config,
            warm_start=warm,
        )


def compute_vsm(net, feeders, scenario, contingency=None, config=None, cosim_config=None, pf_config=None):
    """
    Margin of ``scenario`` under ``contingency`` as a VsmSample.

    Raises BaseInfeasibleError when the loading factor 1 point does not solve.
    """
    config = config or MarginConfig()
    contingency = contingency or NO_CONTINGENCY
    sweep = _Sweep(net, feeders, scenario, contingency, config, cosim_config, pf_config)
    base = sweep.solve(1.0)
    if not base.converged:
        raise BaseInfeasibleError(f"seed {scenario.seed}, contingency {contingency.id}: base case fails ({base.reason})")

    good, good_res = 1.0, base
    bad = None
    k = 1
    while True:
        lam = 1.0 + k * config.step
        if lam > config.lambda_cap + 1e-12:
            break
        res = sweep.solve(lam, good_res)
        if not res.converged:
            bad = lam
            break
        good, good_res = lam, res
        k += 1

    if bad is None:
        logging.warning(f"seed {scenario.seed}, contingency {contingency.id}: margin capped at lambda={good:.3f}")
    else:
        while bad - good > config.width:
            mid = 0.5 * (good + bad)
            res = sweep.solve(mid, good_res)
            if res.converged:
                good, good_res = mid, res
            else:
                bad = mid

    return VsmSample(
        x=state_vector(net, base),
        contingency=contingency.id,
        vsm=(good - 1.0) * scenario.base_total_p,
        lambda_max=good,
        seed=scenario.seed,
    )


def scan_lambda(net, feeders, scenario, contingency=None, step=1.0e-3, config=None, cosim_config=None, pf_config=None):
    """Exhaustive march at ``step``; returns the last converged loading factor."""
    config = config or MarginConfig()
    contingency = contingency or NO_CONTINGENCY
    sweep = _Sweep(net, feeders, scenario, contingency, config, cosim_config, pf_config)
    warm = sweep.solve(1.0)
    if not warm.converged:
        raise BaseInfeasibleError(f"contingency {contingency.id}: base case fails")
    good = 1.0
    k = 1
    while 1.0 + k * step <= config.lambda_cap + 1e-12:
        res = sweep.solve(1.0 + k * step, warm)
        if not res.converged:
            break
        good, warm = 1.0 + k * step, res
        k += 1
    return good
