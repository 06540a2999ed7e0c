"""Sampled, gradient-refined model predictive control of the end-effector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adhesion import AdhesionBook
from .objectives import Action, LossParams, normalize
from .rollout import RolloutSpec, _perturbed, evaluate_directions, gradients_from_losses, loss_breakdown
from .scene import Sdf
from .sim import ConstraintSet, ParticleSystem, SolverParams


class ControllerFailure(RuntimeError):
    """Every candidate rollout diverged."""


@dataclass(frozen=True)
class MpcParams:
    num_seeds: int = 60
    horizon: int = 10
    gd_iterations: int = 1
    learning_rate: float = 0.5
    sample_sigma: float = 0.05
    step_size: float = 0.002
    fd_delta: float = 1e-4
    rng_seed: int = 0
    # first-step reference direction; None uses the 45-degree peel-back default
    initial_direction: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.num_seeds < 1:
            raise ValueError("mpc.num_seeds must be >= 1")
        if self.horizon < 1:
            raise ValueError("mpc.horizon must be >= 1")
        if self.gd_iterations < 0:
            raise ValueError("mpc.gd_iterations must be >= 0")
        if self.sample_sigma <= 0:
            raise ValueError("mpc.sample_sigma must be > 0")
        if self.step_size <= 0:
            raise ValueError("mpc.step_size must be > 0")
        if self.initial_direction is not None:
            d = np.asarray(self.initial_direction, dtype=np.float64)
            if d.shape != (3,) or not np.all(np.isfinite(d)) or np.linalg.norm(d) == 0:
                raise ValueError("mpc.initial_direction must be a finite non-zero 3-vector")


@dataclass
class MpcDiagnostics:
    candidates: int
    best_index: int
    best_loss: float
    initial_best_loss: float
    accepted_updates: int
    directions: np.ndarray = field(repr=False)
    losses: np.ndarray = field(repr=False)
    gradients: np.ndarray = field(repr=False)
    breakdown: dict = field(default_factory=dict)

    @property
    def gd_improvement(self) -> float:
        return self.initial_best_loss - self.best_loss


def sample_seeds(prev_action: Action, params: MpcParams, rng: np.random.Generator, max_retries: int = 100) -> list[Action]:
    """Gaussian perturbations of the previous direction, one draw of 3 normals per seed."""
    prev = normalize(prev_action.direction)
    out = []
    for _ in range(params.num_seeds):
        for _ in range(max_retries):
            v = prev + rng.normal(0.0, params.sample_sigma, size=3)
            n = np.linalg.norm(v)
            if n > 1e-12:
                break
        else:
            raise ControllerFailure("could not draw a non-degenerate seed direction")
        out.append(Action(v / n, params.step_size))
    return out


def select_candidate(losses: np.ndarray) -> int:
    """Index of the smallest finite loss; the lowest index wins ties."""
    losses = np.asarray(losses, dtype=np.float64)
    if not np.any(np.isfinite(losses)):
        raise ControllerFailure("all candidate rollouts failed")
    return int(np.argmin(np.where(np.isfinite(losses), losses, np.inf)))


def optimize_candidates(spec: RolloutSpec, directions: np.ndarray, params: MpcParams):
    """Gradient-refine candidate directions; a step is kept only if it does not raise that loss.

    Returns ``(directions, losses, initial_losses, gradients, accepted)``.
    """
    dirs = np.array(directions, dtype=np.float64)
    m = len(dirs)
    grads = np.full((m, 3), np.nan)
    accepted = 0
    if params.gd_iterations == 0:
        losses, _, _ = evaluate_directions(spec, dirs, params.step_size)
        return dirs, losses, losses.copy(), grads, accepted
    initial = None
    for _ in range(params.gd_iterations):
        batch = np.vstack([dirs, _perturbed(dirs, params.fd_delta)])
        all_losses, _, _ = evaluate_directions(spec, batch, params.step_size)
        losses = all_losses[:m]
        if initial is None:
            initial = losses.copy()
        grads = gradients_from_losses(all_losses[m:], params.fd_delta)
        trial = dirs - params.learning_rate * np.nan_to_num(grads)
        norms = np.linalg.norm(trial, axis=1)
        usable = np.all(np.isfinite(grads), axis=1) & (norms > 1e-12) & np.isfinite(losses)
        trial[usable] /= norms[usable, None]
        trial[~usable] = dirs[~usable]
        trial_losses, _, _ = evaluate_directions(spec, trial, params.step_size)
        keep = usable & (trial_losses <= losses)
        dirs[keep] = trial[keep]
        losses = np.where(keep, trial_losses, losses)
        accepted += int(keep.sum())
    return dirs, losses, initial, grads, accepted


def mpc_step(
    book: AdhesionBook,
    prev_action: Action,
    state: ParticleSystem,
    constraints: ConstraintSet,
    u_t,
    params: MpcParams,
    sdf: Sdf,
    loss_params: LossParams,
    rng: np.random.Generator,
    solver: SolverParams = SolverParams(),
    seeds: list[Action] | None = None,
    with_breakdown: bool = False,
) -> tuple[np.ndarray, Action, MpcDiagnostics]:
    """One control step: sample, refine, pick the argmin and advance the end-effector by ``s``.

    ``book`` must carry current boundary layers; they stay frozen over the horizon.
    """
    u_t = np.asarray(u_t, dtype=np.float64)
    if seeds is None:
        seeds = sample_seeds(prev_action, params, rng)
    spec = RolloutSpec(
        start_state=state,
        constraints=constraints,
        start_u=u_t,
        pairs=book.pairs,
        layer1=book.layer1,
        layer2=book.layer2,
        prev_direction=normalize(prev_action.direction),
        sdf=sdf,
        loss=loss_params,
        horizon=params.horizon,
        solver=solver,
    )
    dirs0 = np.array([normalize(a.direction) for a in seeds])
    dirs, losses, initial, grads, accepted = optimize_candidates(spec, dirs0, params)
    best = select_candidate(losses)
    chosen = Action(dirs[best], params.step_size)
    next_u = u_t + chosen.direction * chosen.step_size
    finite_initial = initial[np.isfinite(initial)]
    diag = MpcDiagnostics(
        candidates=len(dirs),
        best_index=best,
        best_loss=float(losses[best]),
        initial_best_loss=float(finite_initial.min()) if len(finite_initial) else float("inf"),
        accepted_updates=accepted,
        directions=dirs,
        losses=losses,
        gradients=grads,
    )
    if with_breakdown:
        diag.breakdown = loss_breakdown(spec, chosen.direction, chosen.step_size)
    return next_u, chosen, diag
