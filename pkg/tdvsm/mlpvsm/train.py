"""
Full-batch RProp training of the tanh surrogates.

``torch.optim.Rprop`` implements iRprop-: on a gradient sign change the step
shrinks by ``eta_minus`` and that gradient component is zeroed for the next
update, without weight backtracking.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
from tqdm import tqdm

from tdvsm.errors import ConfigError, InsufficientDataError, TrainingDivergedError, UndefinedMetricError
from tdvsm.mlpvsm.metrics import Metrics, metrics
from tdvsm.mlpvsm.model import MlpModel, TanhMLP
from tdvsm.utils.misc import ordered_map, text_digest

MIN_SAMPLES = 50


@dataclass
class TrainConfig:
    hidden_units: int = 20
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_min: float = 1.0e-6
    delta_max: float = 50.0
    max_epochs: int = 2000
    patience: int = 200  # epochs without validation improvement before stopping
    val_fraction: float = 0.2
    normalize: bool = True
    seed: int = 0
    progress: bool = False

    def __post_init__(self):
        for name in ("eta_plus", "eta_minus", "delta0", "delta_min", "delta_max", "val_fraction"):
            setattr(self, name, float(getattr(self, name)))
        for name in ("hidden_units", "max_epochs", "patience", "seed"):
            setattr(self, name, int(getattr(self, name)))
        if not self.eta_minus < 1.0 < self.eta_plus:
            raise ConfigError(f"RProp needs eta_minus < 1 < eta_plus, got {self.eta_minus}, {self.eta_plus}")
        if not 0.0 < self.delta_min <= self.delta0 <= self.delta_max:
            raise ConfigError("RProp step sizes must satisfy 0 < delta_min <= delta0 <= delta_max")
        if self.hidden_units < 1 or self.max_epochs < 1:
            raise ConfigError("hidden_units and max_epochs must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass
class ArrayDataset:
    """Plain (x, y) training set; ``margin.Dataset`` exposes the same surface."""

    x: np.ndarray
    y: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    source_digest: str = ""

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.shape[0] != self.y.size:
            raise ValueError(f"{self.x.shape[0]} inputs for {self.y.size} targets")
        if not self.feature_names:
            self.feature_names = [f"x_{i + 1}" for i in range(self.x.shape[1])]

    def __len__(self):
        return self.y.size

    def digest(self):
        if not self.source_digest:
            self.source_digest = text_digest(np.array2string(np.c_[self.x, self.y], precision=17, threshold=np.inf))
        return self.source_digest


def split_indices(n, val_fraction, seed):
    """Seeded shuffle into (train, validation) index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _stats(a, floor=1e-12):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std < floor, 1.0, std)


def fit_mlp(x, y, config, train_idx, val_idx=None):
    """
    Train on ``x[train_idx]`` and keep the parameters of the best validation epoch.

    Returns (MlpModel, history) where history holds per-epoch train/validation
    MSE and the best-so-far validation MSE, all in target units squared.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    train_idx = np.asarray(train_idx)
    val_idx = train_idx if val_idx is None or len(val_idx) == 0 else np.asarray(val_idx)

    if config.normalize:
        x_mean, x_std = _stats(x[train_idx])
    else:
        x_mean, x_std = np.zeros(x.shape[1]), np.ones(x.shape[1])
    y_mean, y_std = _stats(y[train_idx])
    y_mean, y_std = float(y_mean), float(y_std)

    def tensors(idx):
        xt = torch.as_tensor((x[idx] - x_mean) / x_std, dtype=torch.float64)
        yt = torch.as_tensor((y[idx] - y_mean) / y_std, dtype=torch.float64)
        return xt, yt

    x_tr, y_tr = tensors(train_idx)
    x_va, y_va = tensors(val_idx)

    generator = torch.Generator().manual_seed(config.seed)
    net = TanhMLP(x.shape[1], config.hidden_units).to(torch.float64)
    net.init_uniform(generator)
    optimizer = torch.optim.Rprop(
        net.parameters(),
        lr=config.delta0,
        etas=(config.eta_minus, config.eta_plus),
        step_sizes=(config.delta_min, config.delta_max),
    )

    best_val = np.inf
    best_state = {k: v.clone() for k, v in net.state_dict().items()}
    best_epoch = 0
    history = {"train_mse": [], "val_mse": [], "best_val_mse": []}
    epochs = range(config.max_epochs)
    if config.progress:
        epochs = tqdm(epochs, desc="Training surrogate")
    for epoch in epochs:
        optimizer.zero_grad()
        loss = torch.mean((net(x_tr) - y_tr) ** 2)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"training MSE became non-finite at epoch {epoch} (last finite best {best_val:.6g})")
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            val = float(torch.mean((net(x_va) - y_va) ** 2))
        if not np.isfinite(val):
            raise TrainingDivergedError(f"validation MSE became non-finite at epoch {epoch}")
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
        history["train_mse"].append(float(loss) * y_std**2)
        history["val_mse"].append(val * y_std**2)
        history["best_val_mse"].append(best_val * y_std**2)
        if epoch - best_epoch >= config.patience:
            logging.debug(f"Early stop at epoch {epoch}, best epoch {best_epoch}")
            break

    net.load_state_dict(best_state)
    w_in = net.hidden.weight.detach().numpy().copy()
    b_in = net.hidden.bias.detach().numpy().copy()
    w_out = net.output.weight.detach().numpy().reshape(-1) * y_std
    b_out = float(net.output.bias.detach().numpy()[0]) * y_std + y_mean
    model = MlpModel(
        w_in,
        b_in,
        w_out,
        b_out,
        x_mean if config.normalize else None,
        x_std if config.normalize else None,
        meta={"best_epoch": best_epoch, "epochs": len(history["train_mse"])},
    )
    return model, history


def _safe_metrics(y_true, y_pred):
    try:
        return metrics(y_true, y_pred)
    except UndefinedMetricError as e:
        logging.warning(f"{e}; reporting R2 as nan")
        err = np.asarray(y_true) - np.asarray(y_pred)
        keep = np.abs(y_true) >= 1.0e-6
        mae = float(np.mean(np.abs(err[keep]) / np.abs(y_true[keep])) * 100.0) if keep.any() else float("nan")
        return Metrics(r2=float("nan"), mae_pct=mae, mse=float(np.mean(err**2)), n=len(err))


def _config_echo(config):
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


def train_rprop(dataset, config=None):
    """
    Train a surrogate on ``dataset`` (anything with ``x``, ``y``, ``feature_names``).

    Returns (MlpModel, Metrics on the held-out split).
    """
    config = config or TrainConfig()
    x, y = dataset.x, dataset.y
    n = len(y)
    if n < MIN_SAMPLES:
        raise InsufficientDataError(f"{n} samples given, ≥ {MIN_SAMPLES} samples required")
    train_idx, val_idx = split_indices(n, config.val_fraction, config.seed)
    model, history = fit_mlp(x, y, config, train_idx, val_idx)
    held_out = _safe_metrics(y[val_idx], model.forward(x[val_idx]))
    model.feature_names = list(dataset.feature_names)
    model.dataset_hash = dataset.digest()
    model.meta.update({"config": _config_echo(config), "validation": held_out.to_dict(), "samples": n})
    logging.info(
        f"Surrogate trained on {len(train_idx)} samples: validation R2 {held_out.r2:.4f}, "
        f"MAE {held_out.mae_pct:.2f}% (best epoch {model.meta['best_epoch']})"
    )
    model.meta["best_val_mse"] = history["best_val_mse"][-1]
    return model, held_out


@dataclass
class CvResult:
    mean: Metrics
    folds: List[Metrics]
    pooled: Metrics


def kfold_cv(dataset, config=None, folds=5, jobs=1):
    """
    Seeded k-fold cross-validation.

    Each fold trains on the remaining samples (with an inner seeded
    validation split for early stopping) and is scored on itself. Folds too
    small to score (leave-one-out) are covered by the pooled out-of-fold
    predictions, which are also what ``mean`` falls back to.
    """
    config = config or TrainConfig()
    x, y = dataset.x, dataset.y
    n = len(y)
    folds = int(folds)
    if folds < 2 or n < folds:
        raise InsufficientDataError(f"{folds}-fold cross-validation needs at least {folds} samples, got {n}")
    perm = np.random.default_rng(config.seed).permutation(n)
    parts = np.array_split(perm, folds)

    def run(k):
        test = parts[k]
        rest = np.concatenate([parts[j] for j in range(folds) if j != k])
        if len(rest) >= 5:
            inner_tr, inner_va = split_indices(len(rest), config.val_fraction, config.seed + k)
            tr, va = rest[inner_tr], rest[inner_va]
        else:
            tr, va = rest, rest
        model, _ = fit_mlp(x, y, config, tr, va)
        return test, model.forward(x[test])

    results = ordered_map(run, range(folds), jobs=jobs)
    oof = np.zeros(n)
    fold_metrics = []
    for k, (test, pred) in enumerate(results):
        oof[test] = pred
        if len(test) >= 2:
            try:
                fold_metrics.append(metrics(y[test], pred))
            except UndefinedMetricError:
                logging.info(f"Fold {k}: targets constant, scored through the pooled predictions only")
    pooled = _safe_metrics(y, oof)
    if fold_metrics:
        mean = Metrics(
            r2=float(np.mean([m.r2 for m in fold_metrics])),
            mae_pct=float(np.nanmean([m.mae_pct for m in fold_metrics])),
            mse=float(np.mean([m.mse for m in fold_metrics])),
            n=n,
        )
    else:
        mean = pooled
    logging.info(f"{folds}-fold CV: mean R2 {mean.r2:.4f}, mean MAE {mean.mae_pct:.2f}%")
    return CvResult(mean=mean, folds=fold_metrics, pooled=pooled)
