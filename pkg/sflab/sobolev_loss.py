"""Directional Sobolev loss, residual vectors and the exact parameter gradient"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import TrainingSet
from .errors import InvalidInputError
from .network import NetParams, activation_pattern, direction_gradients, forward_batch


@dataclass(frozen=True)
class ResidualState:
    """Value residuals e (n,) and directional residuals S (n, k).

    Stacked layout: e at indices 0..n-1, then the block of sample i at
    n + i*k .. n + (i+1)*k - 1.
    """

    e: np.ndarray
    S: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.e, self.S.reshape(-1)])

    @property
    def e_norm(self) -> float:
        return float(np.linalg.norm(self.e))

    @property
    def S_norm(self) -> float:
        return float(np.linalg.norm(self.S))

    @property
    def squared_norm(self) -> float:
        return float(self.e @ self.e + np.sum(self.S * self.S))

    @property
    def loss(self) -> float:
        return 0.5 * self.squared_norm


@dataclass(frozen=True)
class LossGradient:
    dW: np.ndarray
    db: Optional[np.ndarray] = None


def _check_compatible(p: NetParams, ts: TrainingSet) -> None:
    if p.d != ts.d:
        raise InvalidInputError(f"Network input dim {p.d} does not match dataset d={ts.d}")


def residuals(p: NetParams, ts: TrainingSet, pattern: Optional[np.ndarray] = None) -> ResidualState:
    """e_i = y_i - f(x_i); S_i = h_i - V_i^T grad f(x_i), divided by alpha for the bias net.

    With an (n, m) activation `pattern` the network is evaluated on that
    linear piece, so the residuals are affine in the parameters.
    """
    _check_compatible(p, ts)
    e = ts.y - forward_batch(p, ts.x, pattern)
    dir_out = np.einsum('nd,ndk->nk', direction_gradients(p, ts.x, pattern), ts.V)
    # alpha is exactly 1 for the bias-free net
    S = ts.h / p.alpha - dir_out
    return ResidualState(e=e, S=S)


def loss(p: NetParams, ts: TrainingSet) -> float:
    return residuals(p, ts).loss


def gradient_from_residuals(
    p: NetParams,
    ts: TrainingSet,
    res: ResidualState,
    pattern: Optional[np.ndarray] = None,
) -> LossGradient:
    """Gradient of the loss given the residuals at p (sigma'(0) = 0)"""
    if pattern is None:
        pattern = activation_pattern(p, ts.x)
    gate = pattern * p.a
    # per-sample direction each active neuron is pulled along
    pull = p.alpha * res.e[:, None] * ts.x + np.einsum('ndk,nk->nd', ts.V, res.S)
    dW = -(gate.T @ pull)
    db = -p.beta * (gate.T @ res.e) if p.has_bias else None
    return LossGradient(dW=dW, db=db)


def loss_gradient(p: NetParams, ts: TrainingSet) -> LossGradient:
    """Gradient of L with respect to W (and b for the bias net)"""
    return gradient_from_residuals(p, ts, residuals(p, ts))


def lemma4_row_bound(p: NetParams, res: ResidualState) -> np.ndarray:
    """Per-row bound (1/sqrt(m)) sum|e_i| + sqrt(k/m) sum |S_i| on |dW_r|"""
    k = res.S.shape[1]
    bound = np.sum(np.abs(res.e)) / np.sqrt(p.m) + np.sqrt(k / p.m) * np.sum(np.linalg.norm(res.S, axis=1))
    return np.full(p.m, bound)


def coarse_row_bound(p: NetParams, res: ResidualState) -> float:
    """2 sqrt(kn/m) (|e| + |S|), the bound used to integrate the weight drift"""
    n, k = res.S.shape
    return 2.0 * np.sqrt(max(k, 1) * n / p.m) * (res.e_norm + res.S_norm)
