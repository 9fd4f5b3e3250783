"""Per-node two-layer predictor over a 3x3 feature neighborhood.

Outputs objectness ``P`` and link scores ``S1..S3`` through logistic units;
the flow mapping layer parameters ride along so they are trained too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mcn.fml import FmlParams, NodeSignals, sigmoid

WEIGHT_NAMES = ("W1", "b1", "W2", "b2")
OFFSETS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]


def neighborhood(features: np.ndarray) -> np.ndarray:
    """Concatenate each node's 3x3 neighborhood (zero-padded): (R, C, F) -> (R, C, 9F)."""
    R, C, F = features.shape
    padded = np.zeros((R + 2, C + 2, F))
    padded[1:-1, 1:-1] = features
    return np.concatenate([padded[1 + di : 1 + di + R, 1 + dj : 1 + dj + C] for di, dj in OFFSETS], axis=2)


@dataclass
class ToyPredictor:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    fml: FmlParams = field(default_factory=FmlParams)

    @property
    def n_features(self) -> int:
        return self.W1.shape[0] // 9

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def init(cls, n_features: int = 8, hidden: int = 16, seed: int = 0, scale: float = 0.1) -> "ToyPredictor":
        rng = np.random.default_rng(seed)
        d = 9 * n_features
        return cls(
            W1=rng.standard_normal((d, hidden)) * scale / np.sqrt(d) * 3,
            b1=np.zeros(hidden),
            W2=rng.standard_normal((hidden, 4)) * scale,
            b2=np.zeros(4),
        )

    @classmethod
    def zeros(cls, n_features: int = 8, hidden: int = 16) -> "ToyPredictor":
        return cls(np.zeros((9 * n_features, hidden)), np.zeros(hidden), np.zeros((hidden, 4)), np.zeros(4))

    def weights(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def copy(self) -> "ToyPredictor":
        return ToyPredictor(
            *(getattr(self, n).copy() for n in WEIGHT_NAMES),
            fml=FmlParams(self.fml.alpha, self.fml.beta, self.fml.gamma),
        )

    def to_json(self) -> dict:
        out = {name: {"shape": list(w.shape), "data": w.ravel().tolist()} for name, w in self.weights().items()}
        out["fml"] = {"alpha": self.fml.alpha, "beta": self.fml.beta, "gamma": self.fml.gamma}
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ToyPredictor":
        arrays = [np.asarray(data[n]["data"], dtype=np.float64).reshape(data[n]["shape"]) for n in WEIGHT_NAMES]
        return cls(*arrays, fml=FmlParams(**data["fml"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ToyPredictor":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class PredictCache:
    x: np.ndarray  # (n, 9F)
    h: np.ndarray  # (n, H)
    s: np.ndarray  # (n, 4)
    dims: tuple[int, int]


def predict(model: ToyPredictor, features: np.ndarray, return_cache: bool = False):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] != model.n_features:
        raise ValueError(f"features have shape {features.shape}, model expects (R, C, {model.n_features})")
    R, C, _ = features.shape
    x = neighborhood(features).reshape(R * C, -1)
    h = np.tanh(x @ model.W1 + model.b1)
    s = sigmoid(h @ model.W2 + model.b2)
    planes = [s[:, k].reshape(R, C) for k in range(4)]
    sig = NodeSignals(*planes)
    if return_cache:
        return sig, PredictCache(x, h, s, (R, C))
    return sig


def predictor_backward(model: ToyPredictor, cache: PredictCache, g_sig: NodeSignals) -> dict[str, np.ndarray]:
    """Weight gradients given gradients w.r.t. the four output planes."""
    g_s = np.stack([g.reshape(-1) for g in g_sig.planes], axis=1)
    g_z = g_s * cache.s * (1.0 - cache.s)
    g_W2 = cache.h.T @ g_z
    g_b2 = g_z.sum(axis=0)
    g_a = (g_z @ model.W2.T) * (1.0 - cache.h**2)
    g_W1 = cache.x.T @ g_a
    g_b1 = g_a.sum(axis=0)
    return {"W1": g_W1, "b1": g_b1, "W2": g_W2, "b2": g_b2}
