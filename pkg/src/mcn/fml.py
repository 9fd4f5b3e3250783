"""Flow mapping layer: objectness and link scores to stochastic flows.

    f0  = exp(-alpha * (1 - mu(1 - P)) * (S1^2 + S2^2 + S3^2))
    f_k = (1 - f0) * S_k / (S1 + S2 + S3)
    mu(x) = 1 / (1 + exp(-beta * (x - gamma)))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcn.grid import FlowMaps

CLAMP = 1e-6
SINGULAR = 1e-9


@dataclass
class FmlParams:
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be finite and positive, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and positive, got {self.beta}")
        if not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


@dataclass
class NodeSignals:
    """Objectness ``P`` and bottom/right/left link scores, each an (R, C) grid."""

    P: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray

    def __post_init__(self):
        self.P, self.S1, self.S2, self.S3 = (
            np.asarray(a, dtype=np.float64) for a in (self.P, self.S1, self.S2, self.S3)
        )
        shapes = {a.shape for a in self.planes}
        if len(shapes) != 1:
            raise ValueError(f"signal planes differ in shape: {sorted(shapes)}")

    @property
    def planes(self) -> list[np.ndarray]:
        return [self.P, self.S1, self.S2, self.S3]

    @property
    def S(self) -> np.ndarray:
        return np.stack([self.S1, self.S2, self.S3])

    def stack(self) -> np.ndarray:
        return np.stack(self.planes)

    @classmethod
    def from_stack(cls, arr) -> "NodeSignals":
        arr = np.asarray(arr)
        return cls(arr[0], arr[1], arr[2], arr[3])


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def mu(x, params: FmlParams):
    return sigmoid(params.beta * (np.asarray(x, dtype=np.float64) - params.gamma))


def _clamp(a):
    return np.clip(a, CLAMP, 1.0 - CLAMP)


def fml_forward(sig: NodeSignals, params: FmlParams = FmlParams()) -> FlowMaps:
    raw_sum = sig.S1 + sig.S2 + sig.S3
    P = _clamp(sig.P)
    S = _clamp(sig.S)
    gate = 1.0 - mu(1.0 - P, params)
    f0 = np.exp(-params.alpha * gate * np.sum(S**2, axis=0))
    share = S / S.sum(axis=0)
    fk = (1.0 - f0) * share
    singular = raw_sum < SINGULAR
    f0 = np.where(singular, 1.0, f0)
    fk = np.where(singular, 0.0, fk)
    return FlowMaps(f0, fk[0], fk[1], fk[2])


@dataclass
class FmlGrads:
    P: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    alpha: float
    beta: float
    gamma: float

    @property
    def params(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


def fml_backward(sig: NodeSignals, params: FmlParams, upstream: FlowMaps) -> FmlGrads:
    """Chain-rule partials of the flow mapping; parameter grads are summed over nodes.

    Clamped inputs receive zero gradient, as do nodes handled by the
    singular (all-zero link score) rule.
    """
    raw_sum = sig.S1 + sig.S2 + sig.S3
    P = _clamp(sig.P)
    S = _clamp(sig.S)
    x = 1.0 - P
    m = mu(x, params)
    dm = m * (1.0 - m)  # d sigmoid / d its argument
    gate = 1.0 - m
    Q = np.sum(S**2, axis=0)
    f0 = np.exp(-params.alpha * gate * Q)
    T = S.sum(axis=0)
    share = S / T

    g0, gk = upstream.f0, np.stack([upstream.f1, upstream.f2, upstream.f3])
    live = ~(raw_sum < SINGULAR)
    g0 = np.where(live, g0, 0.0)
    gk = np.where(live, gk, 0.0)

    # f_k = (1 - f0) * share_k
    g_f0 = g0 - np.sum(gk * share, axis=0)
    g_share = gk * (1.0 - f0)
    # share_k = S_k / T
    g_S = (g_share - np.sum(g_share * share, axis=0)) / T
    # f0 = exp(-alpha * gate * Q)
    g_z = -g_f0 * f0  # z = alpha * gate * Q
    g_S = g_S + g_z * params.alpha * gate * 2.0 * S
    g_gate = g_z * params.alpha * Q
    g_alpha = float(np.sum(g_z * gate * Q))
    # gate = 1 - sigmoid(beta * (x - gamma)), x = 1 - P
    g_arg = -g_gate * dm
    g_P = -g_arg * params.beta
    g_beta = float(np.sum(g_arg * (x - params.gamma)))
    g_gamma = float(np.sum(-g_arg * params.beta))

    p_live = (sig.P > CLAMP) & (sig.P < 1.0 - CLAMP)
    s_live = (sig.S > CLAMP) & (sig.S < 1.0 - CLAMP)
    g_P = np.where(p_live, g_P, 0.0)
    g_S = np.where(s_live, g_S, 0.0)
    return FmlGrads(g_P, g_S[0], g_S[1], g_S[2], g_alpha, g_beta, g_gamma)
