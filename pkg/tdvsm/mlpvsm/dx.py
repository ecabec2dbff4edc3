"""Distribution-side surrogate: DER reactive set points -> substation reactive demand."""

import logging

import numpy as np

from tdvsm.dxflow.sweep import solve_bfs
from tdvsm.mlpvsm.train import ArrayDataset, TrainConfig, train_rprop
from tdvsm.netmodel.capability import der_q_limits


def der_feature_names(feeder):
    return [f"qg_{k + 1}" for k in range(len(feeder.ders))]


def latin_hypercube(rng, n, lo, hi):
    """One stratified draw per row and column, columns permuted independently."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = np.empty((n, lo.size))
    for j in range(lo.size):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return lo + u * (hi - lo)


def sample_dx_dataset(feeder, n, seed=0, substation_v=1.0, load_scale=1.0, bfs_config=None):
    """
    Space-filling DER reactive set points (kVAr, total per DER) inside their
    capability boxes, labelled with the BFS substation reactive injection q0
    (kVAr, one feeder copy). Non-converged draws are dropped.
    """
    rng = np.random.default_rng(seed)
    limits = np.array([der_q_limits(d) for d in feeder.ders]).reshape(-1, 2)
    x = latin_hypercube(rng, int(n), limits[:, 0], limits[:, 1])
    y = np.empty(len(x))
    keep = np.ones(len(x), dtype=bool)
    tap = None
    for i, q in enumerate(x):
        sol = solve_bfs(feeder, substation_v, der_q=q, load_scale=load_scale, config=bfs_config, tap_hint=tap)
        if not sol.converged:
            keep[i] = False
            continue
        tap = sol.tap
        y[i] = sol.q0
    if not keep.all():
        logging.warning(f"Feeder {feeder.id}: dropped {int((~keep).sum())} non-converged samples")
    return ArrayDataset(x=x[keep], y=y[keep], feature_names=der_feature_names(feeder))


def train_dx_model(feeder, samples=None, config=None, n=400, seed=0, substation_v=1.0, load_scale=1.0):
    """
    Fit the boundary reactive-power surrogate of ``feeder``.

    ``samples`` defaults to ``sample_dx_dataset(feeder, n, seed)``. The
    validation metrics end up in ``model.meta["validation"]``.
    """
    if not feeder.ders:
        raise ValueError(f"feeder {feeder.id} has no DERs to model")
    if samples is None:
        samples = sample_dx_dataset(feeder, n, seed, substation_v, load_scale)
    model, held_out = train_rprop(samples, config or TrainConfig(seed=seed))
    model.meta["feeder"] = feeder.id
    model.meta["substation_v"] = float(abs(substation_v))
    model.meta["load_scale"] = float(load_scale)
    logging.info(f"Feeder {feeder.id} surrogate: validation R2 {held_out.r2:.4f}")
    return model
