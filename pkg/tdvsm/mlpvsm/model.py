"""
Single-hidden-layer tanh surrogates.

``TanhMLP`` is the trainable torch module; ``MlpModel`` is the frozen numpy
artifact used everywhere else (optimization, verification, reports). The
artifact takes inputs in physical units and applies its own z-score
normalization when it carries statistics.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn

from tdvsm.utils.misc import read_text, write_text

ARTIFACT_FORMAT = "tdvsm-mlp/1"


class TanhMLP(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int) -> None:
        super().__init__()
        self.hidden = nn.Linear(input_dim, hidden_dim)
        self.output = nn.Linear(hidden_dim, 1)
        self.act = nn.Tanh()

    def forward(self, x):
        return self.output(self.act(self.hidden(x))).squeeze(-1)

    def init_uniform(self, generator):
        """Weights and biases uniform in +/- 1/sqrt(fan_in) of their layer."""
        with torch.no_grad():
            for layer in (self.hidden, self.output):
                bound = 1.0 / np.sqrt(layer.in_features)
                for p in (layer.weight, layer.bias):
                    p.copy_((torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2.0 - 1.0) * bound)


@dataclass
class MlpModel:
    w_input: np.ndarray  # k x d
    b_input: np.ndarray  # k
    w_output: np.ndarray  # k
    b_output: float
    x_mean: Optional[np.ndarray] = None
    x_std: Optional[np.ndarray] = None
    feature_names: List[str] = field(default_factory=list)
    dataset_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w_input = np.atleast_2d(np.asarray(self.w_input, dtype=float))
        self.b_input = np.asarray(self.b_input, dtype=float).reshape(-1)
        self.w_output = np.asarray(self.w_output, dtype=float).reshape(-1)
        self.b_output = float(self.b_output)
        k, d = self.w_input.shape
        if self.b_input.shape != (k,) or self.w_output.shape != (k,):
            raise ValueError(f"inconsistent MLP dimensions: W_input {k}x{d}, b_input {self.b_input.shape}, W_output {self.w_output.shape}")
        if (self.x_mean is None) != (self.x_std is None):
            raise ValueError("normalization needs both mean and std")
        if self.x_mean is not None:
            self.x_mean = np.asarray(self.x_mean, dtype=float).reshape(-1)
            self.x_std = np.asarray(self.x_std, dtype=float).reshape(-1)
            if self.x_mean.shape != (d,) or self.x_std.shape != (d,):
                raise ValueError(f"normalization statistics must have length {d}")
            if np.any(self.x_std <= 0.0):
                raise ValueError("normalization std must be positive")
        if self.feature_names and len(self.feature_names) != d:
            raise ValueError(f"{len(self.feature_names)} feature names for {d} inputs")
        arrays = [self.w_input, self.b_input, self.w_output, [self.b_output]]
        if self.x_mean is not None:
            arrays += [self.x_mean, self.x_std]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("MLP parameters must be finite")
        self.feature_names = list(self.feature_names)

    @property
    def hidden_units(self):
        return self.w_input.shape[0]

    @property
    def input_dim(self):
        return self.w_input.shape[1]

    @property
    def normalized(self):
        return self.x_mean is not None

    def _scale(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {x.shape[-1]}")
        if self.normalized:
            return (x - self.x_mean) / self.x_std
        return x

    def forward(self, x):
        """b_output + sum_s C_s tanh(W_s . z + b_s) for one vector or a batch of rows."""
        z = self._scale(x)
        return self.b_output + np.tanh(z @ self.w_input.T + self.b_input) @ self.w_output

    def gradient(self, x):
        """Input-space gradient in physical units (chain rule through the normalization)."""
        z = self._scale(x)
        t = np.tanh(z @ self.w_input.T + self.b_input)
        g = ((1.0 - t**2) * self.w_output) @ self.w_input
        if self.normalized:
            g = g / self.x_std
        return g

    def explicit(self):
        """Equivalent model without normalization: the z-score is folded into W_input and b_input."""
        if not self.normalized:
            return self
        w = self.w_input / self.x_std
        b = self.b_input - w @ self.x_mean
        return MlpModel(w, b, self.w_output.copy(), self.b_output, None, None, self.feature_names, self.dataset_hash, dict(self.meta))

    def to_dict(self):
        k, d = self.w_input.shape
        return {
            "format": ARTIFACT_FORMAT,
            "hidden_units": k,
            "input_dim": d,
            "feature_names": list(self.feature_names),
            "w_input": self.w_input.tolist(),
            "b_input": self.b_input.tolist(),
            "w_output": self.w_output.tolist(),
            "b_output": self.b_output,
            "x_mean": None if self.x_mean is None else self.x_mean.tolist(),
            "x_std": None if self.x_std is None else self.x_std.tolist(),
            "dataset_hash": self.dataset_hash,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != ARTIFACT_FORMAT:
            raise ValueError(f"unsupported model artifact format {d.get('format')!r}")
        model = cls(
            w_input=np.array(d["w_input"], dtype=float).reshape(d["hidden_units"], d["input_dim"]),
            b_input=d["b_input"],
            w_output=d["w_output"],
            b_output=d["b_output"],
            x_mean=d.get("x_mean"),
            x_std=d.get("x_std"),
            feature_names=d.get("feature_names", []),
            dataset_hash=d.get("dataset_hash", ""),
            meta=d.get("meta", {}),
        )
        return model


def forward(model: MlpModel, x):
    return model.forward(x)


def gradient(model: MlpModel, x):
    return model.gradient(x)


def save_model(path, model: MlpModel):
    # json writes floats with repr, which round-trips every double exactly
    write_text(path, json.dumps(model.to_dict(), sort_keys=True, indent=1) + "\n")


def load_model(path) -> MlpModel:
    return MlpModel.from_dict(json.loads(read_text(path)))
