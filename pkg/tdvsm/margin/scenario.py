import logging
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

from tdvsm.cosim import cosimulate
from tdvsm.errors import ConfigError, InfeasibleScenarioError
from tdvsm.netmodel.types import nominal_operating_point

DEFAULT_PROFILES = [
    {"name": "windy", "wind": [0.6, 1.0], "solar": [0.0, 0.3]},
    {"name": "sunny", "wind": [0.1, 0.5], "solar": [0.6, 1.0]},
    {"name": "mixed", "wind": [0.3, 0.8], "solar": [0.3, 0.8]},
]


@dataclass
class ScenarioConfig:
    load_spread: float = 0.2  # relative half-width of the load draw
    load_dist: str = "uniform"  # uniform | normal (truncated at +/- load_spread)
    feeder_spread: float = 0.2
    pg_spread: float = 0.2
    sample_vg: bool = True
    vg_band: float = 0.02  # pu
    profiles: List[dict] = field(default_factory=lambda: [dict(p) for p in DEFAULT_PROFILES])
    max_resample: int = 20
    check_slack: bool = True

    def __post_init__(self):
        for name in ("load_spread", "feeder_spread", "pg_spread", "vg_band"):
            value = float(getattr(self, name))
            if value < 0.0:
                raise ConfigError(f"{name} must be non-negative")
            setattr(self, name, value)
        if self.load_dist not in ("uniform", "normal"):
            raise ConfigError(f"load_dist should be uniform/normal, not {self.load_dist}.")
        self.max_resample = int(self.max_resample)
        self.profiles = [dict(p) for p in (self.profiles or [])]
        for p in self.profiles:
            for kind in ("wind", "solar"):
                lo, hi = (float(v) for v in p.get(kind, [0.0, 1.0]))
                if not 0.0 <= lo <= hi <= 1.0:
                    raise ConfigError(f"profile {p.get('name')}: {kind} envelope must satisfy 0 <= lo <= hi <= 1")


@dataclass
class Scenario:
    seed: int
    op: object  # OperatingPoint at load factor 1
    profile: str
    p_load: np.ndarray  # realized transmission-side loads per load bus, MW
    q_load: np.ndarray
    base_total_p: float  # total transmission-side active load, MW
    base: object = field(default=None, repr=False, compare=False)


def _relative_draw(rng, spread, size, dist):
    if spread == 0.0:
        return np.zeros(size)
    if dist == "uniform":
        return rng.uniform(-spread, spread, size)
    out = rng.normal(0.0, spread / 2.0, size)
    bad = np.abs(out) > spread
    while np.any(bad):
        out[bad] = rng.normal(0.0, spread / 2.0, int(bad.sum()))
        bad = np.abs(out) > spread
    return out


def _draw_operating_point(net, config, rng):
    op = nominal_operating_point(net)
    n_gen = len(net.generators)
    slack = net.slack_controller

    profile = {"name": "nominal"}
    if config.profiles:
        profile = config.profiles[int(rng.integers(len(config.profiles)))]

    p_gen = np.array(op.p_gen, dtype=float)
    rel = _relative_draw(rng, config.pg_spread, n_gen, "uniform")
    for i, g in enumerate(net.generators):
        if i != slack:
            p_gen[i] = float(np.clip(g.p_out * (1.0 + rel[i]), 0.0, g.p_max))
    for k, u in enumerate(net.ibrs):
        if config.profiles:
            lo, hi = (float(v) for v in profile[u.kind])
            p_gen[n_gen + k] = u.icr * rng.uniform(lo, hi)

    v_gen = np.array(op.v_gen, dtype=float)
    if config.sample_vg and config.vg_band > 0.0:
        v_gen = v_gen + rng.uniform(-config.vg_band, config.vg_band, len(v_gen))

    scale = 1.0 + _relative_draw(rng, config.load_spread, len(net.buses), config.load_dist)
    feeder_scale = 1.0 + _relative_draw(rng, config.feeder_spread, len(net.boundary_links), config.load_dist)
    op = replace(
        op,
        p_gen=tuple(p_gen.tolist()),
        v_gen=tuple(v_gen.tolist()),
        p_load=tuple((np.array(op.p_load) * scale).tolist()),
        q_load=tuple((np.array(op.q_load) * scale).tolist()),
        feeder_scale=tuple(feeder_scale.tolist()),
    )
    return op, profile["name"]


def sample_scenario(net, feeders, config, seed, cosim_config=None, pf_config=None):
    """
    Draw one operating point deterministically from ``seed``.

    The draw is repeated (up to ``config.max_resample`` more times) until the
    base case co-simulates and the slack stays within its rating.
    """
    config = config or ScenarioConfig()
    rng = np.random.default_rng(seed)
    slack = net.slack_controller
    for attempt in range(config.max_resample + 1):
        op, profile = _draw_operating_point(net, config, rng)
        res = cosimulate(net, feeders, op, config=cosim_config, pf_config=pf_config)
        if not res.converged:
            logging.debug(f"Scenario seed {seed} attempt {attempt}: base case does not solve ({res.reason})")
            continue
        p_slack = res.tx.gen_p[slack]
        if config.check_slack and not 0.0 <= p_slack <= net.generators[slack].p_max:
            logging.debug(f"Scenario seed {seed} attempt {attempt}: slack output {p_slack:.2f} MW out of range")
            continue
        return _scenario(net, seed, op, profile, res)
    raise InfeasibleScenarioError(f"no feasible scenario for seed {seed} after {config.max_resample} resamples")


def _scenario(net, seed, op, profile, res):
    idx = net.bus_index
    buses = net.load_buses
    return Scenario(
        seed=seed,
        op=op,
        profile=profile,
        p_load=np.array([res.tx.p_load[idx[b]] for b in buses]),
        q_load=np.array([res.tx.q_load[idx[b]] for b in buses]),
        base_total_p=float(res.tx.p_load.sum()),
        base=res,
    )


def scenario_from_op(net, feeders, op, seed=0, profile="fixed", cosim_config=None, pf_config=None):
    """Wrap a hand-built operating point as a Scenario (its base case must solve)."""
    res = cosimulate(net, feeders, op, config=cosim_config, pf_config=pf_config)
    if not res.converged:
        raise InfeasibleScenarioError(f"operating point does not solve ({res.reason})")
    return _scenario(net, seed, op, profile, res)
