import logging
from dataclasses import dataclass

import numpy as np

from tdvsm.errors import UndefinedMetricError

MAE_EPS = 1.0e-6  # MW; targets this small are left out of the relative MAE


@dataclass
class Metrics:
    r2: float
    mae_pct: float
    mse: float
    n: int = 0
    excluded: int = 0

    def to_dict(self):
        return {"r2": self.r2, "mae_pct": self.mae_pct, "mse": self.mse, "n": self.n, "excluded": self.excluded}


def metrics(y_true, y_pred, eps=MAE_EPS):
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} targets, {y_pred.size} predictions")
    if y_true.size < 2:
        raise ValueError("metrics need at least 2 samples")
    err = y_true - y_pred
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R2 is undefined for targets with zero variance")
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot

    keep = np.abs(y_true) >= eps
    excluded = int(y_true.size - keep.sum())
    if excluded:
        logging.info(f"{excluded} sample(s) with |y| < {eps:g} left out of MAE%")
    mae_pct = float(np.mean(np.abs(err[keep]) / np.abs(y_true[keep])) * 100.0) if keep.any() else float("nan")
    return Metrics(r2=r2, mae_pct=mae_pct, mse=float(np.mean(err**2)), n=int(y_true.size), excluded=excluded)
