"""Outer peeling loop (predict, fracture, re-solve) driven by MPC or a heuristic baseline."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adhesion import (
    AdhesionBook,
    FractureEvent,
    adhesion_energies,
    boundary_layers,
    check_removal,
    fracture,
    update_adhesion,
)
from .mpc import ControllerFailure, MpcParams, mpc_step
from .objectives import Action, LossParams, normalize
from .scene import Scene
from .sim import ConstraintSet, ParticleSystem, SolverDivergence, SolverParams, step

log = logging.getLogger(__name__)

METHODS = ("mpc", "up", "arc")


@dataclass(frozen=True)
class RunLimits:
    max_steps: int = 2000
    snapshot_every: int = 5


@dataclass
class RunRecord:
    method: str
    status: str = "running"
    reason: str = ""
    u_path: list = field(default_factory=list)
    directions: list = field(default_factory=list)
    landmark_positions: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    fractures: list = field(default_factory=list)
    detached_counts: list = field(default_factory=list)
    max_alive_energy_ratio: list = field(default_factory=list)
    loss_rows: list = field(default_factory=list)
    mpc_rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    n_pairs: int = 0
    final_state: Optional[ParticleSystem] = None
    final_constraints: Optional[ConstraintSet] = None
    final_book: Optional[AdhesionBook] = None

    @property
    def steps(self) -> int:
        return len(self.u_path)

    @property
    def complete(self) -> bool:
        return self.status == "complete"


# controller(t, state, constraints, book, u_t) -> (u_next, direction)
Controller = Callable[[int, ParticleSystem, ConstraintSet, AdhesionBook, np.ndarray], tuple]


def bootstrap(scene: Scene) -> tuple[ConstraintSet, AdhesionBook, list[FractureEvent]]:
    """Fracture the grasped corner's own adhesion pair before control starts."""
    book = AdhesionBook.from_constraints(scene.graph.adhesion_pairs, scene.constraints)
    grasped = [p for p in range(book.n_pairs) if book.pairs[p, 0] == scene.graph.grasp_particle]
    return fracture(scene.constraints, book, grasped, step_index=0)


def commit_step(state, constraints, book, u_next, t: int, solver: SolverParams):
    """Predict, fracture on the prediction, then re-solve from ``state`` with the new stiffness."""
    x_hat = step(state, constraints, u_next, solver)
    constraints, book, events = update_adhesion(x_hat, constraints, book, step_index=t)
    if events:
        new_state = step(state, constraints, u_next, solver)
    else:
        new_state = x_hat
    return x_hat, new_state, constraints, book, events


def _alive_energy_ratio(x_hat, constraints, book) -> float:
    if not book.alive.any():
        return 0.0
    e = adhesion_energies(x_hat.positions, constraints, book)
    eps = constraints.eps[book.constraint_offset : book.constraint_offset + book.n_pairs]
    return float(np.max(e[book.alive] / eps[book.alive]))


def peel_loop(scene: Scene, controller: Controller, method: str, limits: RunLimits = RunLimits(),
              solver: SolverParams = SolverParams()) -> RunRecord:
    constraints, book, events = bootstrap(scene)
    state = scene.system
    record = RunRecord(method=method, n_pairs=book.n_pairs)
    record.fractures.extend(events)
    record.metadata["bootstrap_fractured_pairs"] = [e.pair for e in events]
    record.snapshots[0] = state.positions.copy()
    u = scene.grasp_point
    t = 0
    try:
        while check_removal(constraints, book) != frozenset(range(book.n_pairs)):
            if t >= limits.max_steps:
                record.status = "incomplete"
                record.reason = f"step limit {limits.max_steps} reached with {len(book.detached)}/{book.n_pairs} pairs detached"
                break
            book = boundary_layers(book, scene.graph)
            u_next, direction = controller(t, state, constraints, book, u)
            t += 1
            x_hat, state, constraints, book, events = commit_step(state, constraints, book, u_next, t, solver)
            if check_removal(constraints, book) != book.detached:
                raise RuntimeError("detached set diverged from zero-stiffness pairs")
            record.max_alive_energy_ratio.append(_alive_energy_ratio(x_hat, constraints, book))
            record.fractures.extend(events)
            u = np.asarray(u_next, dtype=np.float64)
            record.u_path.append(u.copy())
            record.directions.append(np.asarray(direction, dtype=np.float64))
            record.landmark_positions.append(state.positions[scene.landmarks.indices].copy())
            record.detached_counts.append(len(book.detached))
            if limits.snapshot_every > 0 and t % limits.snapshot_every == 0:
                record.snapshots[t] = state.positions.copy()
        else:
            record.status = "complete"
    except (SolverDivergence, ControllerFailure) as exc:
        record.status = "failed"
        record.reason = f"{type(exc).__name__}: {exc}"
        log.warning("run %s failed at step %d: %s", method, t, exc)
    record.snapshots[t] = state.positions.copy()
    record.final_state = state
    record.final_constraints = constraints
    record.final_book = book
    return record


def surface_frame(scene: Scene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grasp point, outward normal there, and the unit tangent toward the dressing center."""
    g = scene.grasp_point
    n = scene.sdf.normal(g)
    to_center = scene.dressing_center - g
    tangent = to_center - np.dot(to_center, n) * n
    return g, n, normalize(tangent)


def initial_direction(scene: Scene) -> np.ndarray:
    """45 degrees between the surface normal and the inward (peel-back) tangent."""
    _, n, tangent = surface_frame(scene)
    return normalize(n + tangent)


def run_peel(scene: Scene, mpc_params: MpcParams = MpcParams(), loss_params: LossParams = LossParams(),
             limits: RunLimits = RunLimits(), solver: SolverParams = SolverParams(),
             start_direction=None) -> RunRecord:
    rng = np.random.default_rng(mpc_params.rng_seed)
    if start_direction is None:
        start_direction = mpc_params.initial_direction
    if start_direction is None:
        start_direction = initial_direction(scene)
    prev = Action(normalize(start_direction), mpc_params.step_size)
    start = [float(v) for v in prev.direction]
    rows = []
    loss_rows = []

    def controller(t, state, constraints, book, u):
        nonlocal prev
        u_next, action, diag = mpc_step(book, prev, state, constraints, u, mpc_params, scene.sdf, loss_params,
                                        rng, solver, with_breakdown=True)
        loss_rows.append({"step": t + 1, **diag.breakdown})
        rows.append(
            {
                "step": t + 1,
                "candidates": diag.candidates,
                "best_loss": diag.best_loss,
                "initial_best_loss": diag.initial_best_loss,
                "gd_improvement": diag.gd_improvement,
                "accepted_updates": diag.accepted_updates,
                "dir_x": action.direction[0],
                "dir_y": action.direction[1],
                "dir_z": action.direction[2],
                "layer1": len(book.layer1),
                "layer2": len(book.layer2),
            }
        )
        prev = action
        return u_next, action.direction

    record = peel_loop(scene, controller, "mpc", limits, solver)
    record.mpc_rows = rows
    record.loss_rows = loss_rows
    record.metadata.update(
        {
            "rng_seed": mpc_params.rng_seed,
            "initial_direction": start,
        }
    )
    return record


def up_positions(scene: Scene, step_size: float):
    g, n, _ = surface_frame(scene)

    def position(k: int) -> np.ndarray:
        return g + k * step_size * n

    return position


def arc_positions(scene: Scene, step_size: float):
    """Circle through the grasp point around the dressing center's surface point.

    The circle lies in the plane spanned by the center-to-grasp direction and
    the surface normal at the center. Arc length advances by ``step_size``
    per step over the upper half circle; after that the end-effector rises
    along the normal at the center.
    """
    g = scene.grasp_point
    c = scene.dressing_center
    radius = float(np.linalg.norm(g - c))
    e = (g - c) / radius
    n_c = scene.sdf.normal(c)
    up = normalize(n_c - np.dot(n_c, e) * e)
    end_k = np.pi * radius / step_size

    def position(k: int) -> np.ndarray:
        if k <= end_k:
            theta = k * step_size / radius
            return c + radius * (np.cos(theta) * e + np.sin(theta) * up)
        return c - radius * e + (k - end_k) * step_size * up

    return position, c, radius, e, up


def run_baseline(kind: str, scene: Scene, step_size: float = 0.002, limits: RunLimits = RunLimits(),
                 solver: SolverParams = SolverParams()) -> RunRecord:
    if kind == "up":
        position = up_positions(scene, step_size)
        meta = {"baseline": "up", "normal": scene.sdf.normal(scene.grasp_point).tolist()}
    elif kind == "arc":
        position, c, radius, e, up = arc_positions(scene, step_size)
        meta = {
            "baseline": "arc",
            "arc_center": c.tolist(),
            "arc_radius": radius,
            "arc_plane": [e.tolist(), up.tolist()],
            "interpretation": "upper half circle through the grasp point centered at the dressing center, then rise along the normal",
        }
    else:
        raise ValueError(f"unknown baseline {kind!r}")

    def controller(t, state, constraints, book, u):
        u_next = position(t + 1)
        return u_next, normalize(u_next - u)

    record = peel_loop(scene, controller, kind, limits, solver)
    record.metadata.update(meta)
    return record


def replay(scene: Scene, u_path, solver: SolverParams = SolverParams()):
    """Re-simulate a recorded end-effector path open loop; returns (state, constraints, book)."""
    constraints, book, _ = bootstrap(scene)
    state = scene.system
    for t, u in enumerate(u_path, start=1):
        book = boundary_layers(book, scene.graph)
        _, state, constraints, book, _ = commit_step(state, constraints, book, np.asarray(u), t, solver)
    return state, constraints, book
