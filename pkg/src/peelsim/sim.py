"""Quasi-static XPBD stepper over skin, dressing and adhesion distance constraints."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numba
import numpy as np

SKIN, DRESSING, ADHESION = 0, 1, 2
KIND_NAMES = {SKIN: "skin_internal", DRESSING: "dressing_internal", ADHESION: "adhesion"}


class SolverDivergence(RuntimeError):
    """Raised when a solve produces non-finite or runaway positions."""


@dataclass(frozen=True)
class SolverParams:
    iterations: int = 30
    # predicted per-step offset applied to free particles before projection
    gravity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    divergence_scale: float = 10.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("solver.iterations must be >= 1")


@dataclass(frozen=True)
class ParticleSystem:
    """Full skin + dressing state.

    Skin particles occupy ``[0, n_skin)`` and dressing particles
    ``[n_skin, n)``. ``inverse_mass == 0`` marks a pinned particle.
    """

    positions: np.ndarray
    inverse_mass: np.ndarray
    driven_index: int
    n_skin: int
    adhesive_dressing: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    scene_diagonal: float = 1.0

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def skin_indices(self) -> np.ndarray:
        return np.arange(self.n_skin)

    @property
    def dressing_indices(self) -> np.ndarray:
        return np.arange(self.n_skin, self.n)

    @property
    def pinned(self) -> np.ndarray:
        return self.inverse_mass == 0.0

    def with_positions(self, positions: np.ndarray) -> "ParticleSystem":
        return dataclasses.replace(self, positions=positions)


@dataclass(frozen=True)
class ConstraintSet:
    """Distance constraints in fixed solve order: skin, dressing, adhesion.

    Adhesion constraints are contiguous from ``adhesion_offset`` and are in
    the same order as the adhesion pair list.
    """

    i: np.ndarray
    j: np.ndarray
    rest: np.ndarray
    stiffness: np.ndarray
    kind: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        if np.any(self.rest < 0) or np.any(self.stiffness < 0):
            raise ValueError("rest lengths and stiffnesses must be non-negative")
        if np.any(self.rest[self.kind == ADHESION] != 0.0):
            raise ValueError("adhesion constraints must have zero rest length")

    def __len__(self) -> int:
        return len(self.i)

    @property
    def adhesion_offset(self) -> int:
        idx = np.flatnonzero(self.kind == ADHESION)
        return int(idx[0]) if len(idx) else len(self.i)

    @property
    def adhesion_stiffness(self) -> np.ndarray:
        return self.stiffness[self.kind == ADHESION]

    def with_stiffness(self, stiffness: np.ndarray) -> "ConstraintSet":
        return dataclasses.replace(self, stiffness=stiffness)

    @classmethod
    def concatenate(cls, parts: list["ConstraintSet"]) -> "ConstraintSet":
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts]) for f in dataclasses.fields(cls)))

    @classmethod
    def from_edges(cls, edges, positions, stiffness: float, kind: int, eps: float = np.inf) -> "ConstraintSet":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if kind == ADHESION:
            rest = np.zeros(len(edges))
        else:
            rest = np.linalg.norm(positions[edges[:, 0]] - positions[edges[:, 1]], axis=1)
        m = len(edges)
        return cls(
            i=edges[:, 0].copy(),
            j=edges[:, 1].copy(),
            rest=rest,
            stiffness=np.full(m, float(stiffness)),
            kind=np.full(m, kind, dtype=np.int8),
            eps=np.full(m, float(eps)),
        )


def compliance_of(stiffness: np.ndarray) -> np.ndarray:
    """XPBD compliance 1/k with a unit pseudo-timestep; k = inf gives 0."""
    with np.errstate(divide="ignore"):
        return np.where(stiffness > 0, 1.0 / stiffness, np.inf)


def constraint_value(positions: np.ndarray, i: int, j: int, rest: float) -> float:
    return float(np.linalg.norm(positions[i] - positions[j]) - rest)


def constraint_energy(positions: np.ndarray, i: int, j: int, rest: float, stiffness: float) -> float:
    c = constraint_value(positions, i, j, rest)
    return 0.5 * stiffness * c * c


def constraint_values(positions: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    d = positions[constraints.i] - positions[constraints.j]
    return np.sqrt(np.einsum("ij,ij->i", d, d)) - constraints.rest


def constraint_energies(positions: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    c = constraint_values(positions, constraints)
    return 0.5 * constraints.stiffness * c * c


def total_energy(positions: np.ndarray, constraints: ConstraintSet) -> float:
    return float(np.sum(constraint_energies(positions, constraints)))


@numba.njit(cache=True)
def _project(pos, w, ci, cj, rest, compliance, iterations):
    """Gauss-Seidel XPBD sweeps over ``pos`` of shape (n, 3, lanes).

    Lanes are independent systems sharing topology; the inner lane loop
    vectorizes while every lane sees the same IEEE operation sequence.
    """
    m = ci.shape[0]
    lanes = pos.shape[2]
    lam = np.zeros((m, lanes))
    for _ in range(iterations):
        for c in range(m):
            i = ci[c]
            j = cj[c]
            wi = w[i]
            wj = w[j]
            a = compliance[c]
            r = rest[c]
            den = wi + wj + a
            xi = pos[i, 0]
            yi = pos[i, 1]
            zi = pos[i, 2]
            xj = pos[j, 0]
            yj = pos[j, 1]
            zj = pos[j, 2]
            lc = lam[c]
            for k in range(lanes):
                dx = xj[k] - xi[k]
                dy = yj[k] - yi[k]
                dz = zj[k] - zi[k]
                length = np.sqrt(dx * dx + dy * dy + dz * dz)
                ok = length >= 1e-12
                safe = length if ok else 1.0
                dlam = (r - length - a * lc[k]) / den
                dlam = dlam if ok else 0.0
                lc[k] += dlam
                f = dlam / safe
                xi[k] -= wi * f * dx
                yi[k] -= wi * f * dy
                zi[k] -= wi * f * dz
                xj[k] += wj * f * dx
                yj[k] += wj * f * dy
                zj[k] += wj * f * dz


@numba.njit(cache=True)
def _rollout_lanes(pos, w, driven, ci, cj, rest, compliance, iterations, gravity, u, dirs, step_size, horizon):
    """Advance every lane ``horizon`` steps along its own fixed direction, in place.

    ``u`` and ``dirs`` have shape (3, lanes); returns the u path (horizon, 3, lanes).
    """
    n = pos.shape[0]
    lanes = pos.shape[2]
    paths = np.empty((horizon, 3, lanes))
    for t in range(horizon):
        for d in range(3):
            for k in range(lanes):
                u[d, k] = u[d, k] + dirs[d, k] * step_size
        for p in range(n):
            if w[p] > 0.0:
                for d in range(3):
                    for k in range(lanes):
                        pos[p, d, k] += gravity[d]
        for d in range(3):
            for k in range(lanes):
                pos[driven, d, k] = u[d, k]
        _project(pos, w, ci, cj, rest, compliance, iterations)
        paths[t] = u
    return paths


def solver_weights(state: ParticleSystem) -> np.ndarray:
    w = state.inverse_mass.astype(np.float64).copy()
    w[state.driven_index] = 0.0
    return w


def active_constraints(constraints: ConstraintSet, w: np.ndarray):
    """Kernel arrays for constraints that can move something: k > 0 and not both ends fixed."""
    keep = (constraints.stiffness > 0) & (w[constraints.i] + w[constraints.j] > 0)
    return (
        np.ascontiguousarray(constraints.i[keep]),
        np.ascontiguousarray(constraints.j[keep]),
        np.ascontiguousarray(constraints.rest[keep]),
        np.ascontiguousarray(compliance_of(constraints.stiffness[keep])),
    )


def check_finite(positions: np.ndarray, state: ParticleSystem, scale: float) -> None:
    if not np.all(np.isfinite(positions)):
        raise SolverDivergence("non-finite particle positions after solve")
    limit = scale * state.scene_diagonal
    worst = float(np.max(np.abs(positions))) if positions.size else 0.0
    if worst > limit:
        raise SolverDivergence(f"coordinate magnitude {worst:.3g} m exceeds divergence guard {limit:.3g} m")


def step(
    state: ParticleSystem,
    constraints: ConstraintSet,
    u_target,
    solver: SolverParams = SolverParams(),
) -> ParticleSystem:
    """Place the driven particle at ``u_target`` and relax the free particles.

    The driven particle is treated as infinitely heavy during projection and
    zero-stiffness constraints are skipped. The input state is not modified.
    """
    u = np.asarray(u_target, dtype=np.float64)
    if u.shape != (3,) or not np.all(np.isfinite(u)):
        raise ValueError(f"u_target must be a finite 3-vector, got {u_target!r}")
    pos = np.array(state.positions, dtype=np.float64)[:, :, None].copy()
    w = solver_weights(state)
    gravity = np.asarray(solver.gravity, dtype=np.float64)
    if np.any(gravity):
        pos[w > 0, :, 0] += gravity
    pos[state.driven_index, :, 0] = u
    _project(pos, w, *active_constraints(constraints, w), solver.iterations)
    out = np.ascontiguousarray(pos[:, :, 0])
    check_finite(out, state, solver.divergence_scale)
    return state.with_positions(out)


def rollout_batch(
    state: ParticleSystem,
    constraints: ConstraintSet,
    u0,
    directions: np.ndarray,
    step_size: float,
    horizon: int,
    solver: SolverParams = SolverParams(),
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``horizon`` steps per direction row, repeating the same action each step.

    Returns ``(finals, paths)`` of shapes ``(m, n, 3)`` and ``(m, horizon, 3)``.
    Rows never interact, and a row's result is bitwise independent of batching.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    m = len(dirs)
    pos = np.repeat(np.asarray(state.positions, dtype=np.float64)[:, :, None], m, axis=2)
    u = np.repeat(np.asarray(u0, dtype=np.float64)[:, None], m, axis=1)
    w = solver_weights(state)
    paths = _rollout_lanes(
        pos,
        w,
        state.driven_index,
        *active_constraints(constraints, w),
        solver.iterations,
        np.asarray(solver.gravity, dtype=np.float64),
        u,
        np.ascontiguousarray(dirs.T),
        float(step_size),
        int(horizon),
    )
    return np.ascontiguousarray(pos.transpose(2, 0, 1)), np.ascontiguousarray(paths.transpose(2, 0, 1))
