"""Linear-trajectory rollouts and finite-difference gradients of the MPC loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import Action, LossParams, mpc_loss_terms, normalize, peel_objective_from_layers, penetration_penalty
from .scene import Sdf
from .sim import ConstraintSet, ParticleSystem, SolverParams, rollout_batch


@dataclass(frozen=True)
class RolloutSpec:
    """Frozen inputs of a prediction: fractures are disabled inside the horizon."""

    start_state: ParticleSystem
    constraints: ConstraintSet
    start_u: np.ndarray
    pairs: np.ndarray
    layer1: frozenset
    layer2: frozenset
    prev_direction: np.ndarray
    sdf: Sdf
    loss: LossParams = LossParams()
    horizon: int = 10
    solver: SolverParams = SolverParams()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True)
class RolloutResult:
    final_positions: np.ndarray
    u_path: np.ndarray
    loss: float


def _lane_ok(finals: np.ndarray, spec: RolloutSpec) -> np.ndarray:
    limit = spec.solver.divergence_scale * spec.start_state.scene_diagonal
    flat = finals.reshape(len(finals), -1)
    return np.all(np.isfinite(flat), axis=1) & (np.max(np.abs(flat), axis=1) <= limit)


def evaluate_directions(spec: RolloutSpec, directions: np.ndarray, step_size: float):
    """Loss of each (already unit) direction; diverged rollouts score ``inf``.

    Returns ``(losses, finals, paths)``.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    finals, paths = rollout_batch(
        spec.start_state, spec.constraints, spec.start_u, dirs, step_size, spec.horizon, spec.solver
    )
    with np.errstate(all="ignore"):
        h_value = peel_objective_from_layers(finals, spec.pairs, spec.layer1, spec.layer2, spec.loss.gamma)
        penalty = penetration_penalty(paths, spec.sdf, spec.loss.sigma).sum(axis=1)
        smooth = np.linalg.norm(dirs - spec.prev_direction, axis=1)
        losses = mpc_loss_terms(h_value, penalty, smooth, spec.loss)
    losses = np.where(_lane_ok(finals, spec) & np.isfinite(losses), losses, np.inf)
    return losses, finals, paths


def rollout(spec: RolloutSpec, action: Action) -> RolloutResult:
    losses, finals, paths = evaluate_directions(spec, action.direction[None, :], action.step_size)
    return RolloutResult(finals[0], paths[0], float(losses[0]))


def _perturbed(directions: np.ndarray, delta: float) -> np.ndarray:
    """Rows ordered (candidate, axis, sign) with sign +, -; each re-normalized."""
    m = len(directions)
    out = np.empty((m, 3, 2, 3))
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = delta
        out[:, axis, 0] = directions + e
        out[:, axis, 1] = directions - e
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return out.reshape(-1, 3)


def gradients_from_losses(perturbed_losses: np.ndarray, delta: float) -> np.ndarray:
    """Central differences from losses laid out as in ``_perturbed``; NaN rows mark failures."""
    pl = perturbed_losses.reshape(-1, 3, 2)
    with np.errstate(invalid="ignore"):
        g = (pl[:, :, 0] - pl[:, :, 1]) / (2.0 * delta)
    g[~np.all(np.isfinite(pl), axis=(1, 2))] = np.nan
    return g


def batch_gradients(spec: RolloutSpec, directions: np.ndarray, step_size: float, delta: float = 1e-4) -> np.ndarray:
    losses, _, _ = evaluate_directions(spec, _perturbed(np.atleast_2d(directions), delta), step_size)
    return gradients_from_losses(losses, delta)


def loss_gradient(spec: RolloutSpec, action: Action, delta: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the rollout loss w.r.t. the three direction components.

    Returns NaNs when any perturbed rollout failed.
    """
    return batch_gradients(spec, normalize(action.direction)[None, :], action.step_size, delta)[0]


def loss_breakdown(spec: RolloutSpec, direction, step_size: float) -> dict:
    """Individual loss terms for one unit direction (same arithmetic as ``evaluate_directions``)."""
    d = np.asarray(direction, dtype=np.float64)
    finals, paths = rollout_batch(spec.start_state, spec.constraints, spec.start_u, d[None, :], step_size,
                                  spec.horizon, spec.solver)
    h_value = float(peel_objective_from_layers(finals[0], spec.pairs, spec.layer1, spec.layer2, spec.loss.gamma))
    penalty = float(np.sum(penetration_penalty(paths[0], spec.sdf, spec.loss.sigma)))
    smooth = float(np.linalg.norm(d - spec.prev_direction))
    return {
        "peel": h_value,
        "penetration_sum": penalty,
        "smoothness": smooth,
        "loss": float(mpc_loss_terms(h_value, penalty, smooth, spec.loss)),
        "gamma": spec.loss.gamma,
        "alpha": spec.loss.alpha,
        "beta": spec.loss.beta,
        "smoothness_sign": spec.loss.smoothness_sign,
    }
