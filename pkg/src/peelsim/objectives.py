"""Peel/safety objective, penetration penalty, direction smoothness and the MPC loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .scene import Sdf


@dataclass(frozen=True)
class LossParams:
    gamma: float = 1.0
    alpha: float = 0.1
    beta: float = 0.01
    sigma: float = 0.005
    # -1 subtracts beta * smoothness (as printed); +1 adds it as a penalty
    smoothness_sign: int = -1

    def __post_init__(self):
        for name in ("gamma", "alpha", "beta", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss.{name} must be >= 0")
        if self.smoothness_sign not in (-1, 1):
            raise ValueError("loss.smoothness_sign must be -1 or +1")


@dataclass(frozen=True)
class Action:
    direction: np.ndarray
    step_size: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or not np.all(np.isfinite(d)):
            raise ValueError(f"action direction must be a finite 3-vector, got {self.direction!r}")
        if self.step_size <= 0:
            raise ValueError("action step_size must be > 0")
        object.__setattr__(self, "direction", d)

    def normalized(self) -> "Action":
        return Action(normalize(self.direction), self.step_size)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite direction")
    return v / n


def _layer_mean(positions: np.ndarray, pairs: np.ndarray, layer: Iterable[int]) -> np.ndarray:
    """Mean adhesion stretch over ``layer`` for one state (n, 3) or a batch (m, n, 3)."""
    idx = np.array(sorted(layer), dtype=np.int64)
    if len(idx) == 0:
        return np.zeros(positions.shape[:-2])
    d = positions[..., pairs[idx, 0], :] - positions[..., pairs[idx, 1], :]
    return np.sqrt(np.sum(d * d, axis=-1)).mean(axis=-1)


def peel_objective_from_layers(positions: np.ndarray, pairs: np.ndarray, layer1, layer2, gamma: float):
    """Pull the first boundary layer, hold the second. Empty layers contribute 0."""
    return -_layer_mean(positions, pairs, layer1) + gamma * _layer_mean(positions, pairs, layer2)


def peel_objective(state, book, gamma: float) -> float:
    return float(peel_objective_from_layers(state.positions, book.pairs, book.layer1, book.layer2, gamma))


def penetration_penalty(u, sdf: Sdf, sigma: float):
    """``exp(-min(phi(u) - sigma, 0))``; exactly 1 outside the margin. Vectorized over leading axes."""
    phi = sdf(u)
    out = np.exp(-np.minimum(phi - sigma, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def smoothness(a_now: Action, a_prev: Action) -> float:
    return float(np.linalg.norm(a_now.direction - a_prev.direction))


def mpc_loss_terms(h_value, penalty_sum, smooth, params: LossParams):
    return h_value + params.alpha * penalty_sum + params.smoothness_sign * params.beta * smooth


def mpc_loss(final_state, book, u_path, a_now: Action, a_prev: Action, params: LossParams, sdf: Sdf) -> float:
    """Peel objective on the rollout's final state plus weighted penalty and smoothness terms.

    ``book`` carries the boundary layers frozen at rollout start.
    """
    h_value = peel_objective(final_state, book, params.gamma)
    penalty_sum = float(np.sum(penetration_penalty(np.asarray(u_path), sdf, params.sigma)))
    return float(mpc_loss_terms(h_value, penalty_sum, smoothness(a_now, a_prev), params))
