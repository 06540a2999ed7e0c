"""Adhesion fracture bookkeeping and boundary-layer extraction.

Pairs are referred to by their index ``p`` into the adhesion pair list;
``pairs[p] = (dressing particle, skin particle)`` and the matching
constraint sits at ``constraint_offset + p`` in the constraint set.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .scene import ConnectivityGraph
from .sim import ADHESION, ConstraintSet, ParticleSystem, constraint_energies


class FractureEvent(NamedTuple):
    step: int
    pair: int
    dressing_index: int
    skin_index: int
    energy: float


@dataclass(frozen=True)
class AdhesionBook:
    pairs: np.ndarray
    alive: np.ndarray
    detached: frozenset
    layer1: frozenset = frozenset()
    layer2: frozenset = frozenset()
    constraint_offset: int = 0

    @classmethod
    def from_constraints(cls, pairs: np.ndarray, constraints: ConstraintSet) -> "AdhesionBook":
        offset = constraints.adhesion_offset
        k = constraints.stiffness[offset : offset + len(pairs)]
        if np.any(constraints.kind[offset : offset + len(pairs)] != ADHESION):
            raise ValueError("adhesion constraints do not line up with the pair list")
        alive = k > 0
        return cls(
            pairs=np.asarray(pairs),
            alive=alive,
            detached=frozenset(np.flatnonzero(~alive).tolist()),
            constraint_offset=offset,
        )

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def complete(self) -> bool:
        return len(self.detached) == self.n_pairs

    def pair_tuples(self, subset: Iterable[int]) -> set[tuple[int, int]]:
        return {tuple(int(v) for v in self.pairs[p]) for p in subset}

    def constraint_index(self, subset: Iterable[int]) -> np.ndarray:
        return np.array(sorted(subset), dtype=np.int64) + self.constraint_offset


def fracture(constraints: ConstraintSet, book: AdhesionBook, pairs: Iterable[int], step_index: int = 0,
             energies=None) -> tuple[ConstraintSet, AdhesionBook, list[FractureEvent]]:
    """Zero the stiffness of the given pairs and move them into the detached set."""
    pairs = sorted(int(p) for p in pairs if book.alive[p])
    if not pairs:
        return constraints, book, []
    stiffness = constraints.stiffness.copy()
    alive = book.alive.copy()
    events = []
    for p in pairs:
        stiffness[book.constraint_offset + p] = 0.0
        alive[p] = False
        e = 0.0 if energies is None else float(energies[p])
        events.append(FractureEvent(step_index, p, int(book.pairs[p, 0]), int(book.pairs[p, 1]), e))
    book = dataclasses.replace(book, alive=alive, detached=book.detached | frozenset(pairs))
    return constraints.with_stiffness(stiffness), book, events


def adhesion_energies(positions: np.ndarray, constraints: ConstraintSet, book: AdhesionBook) -> np.ndarray:
    sl = slice(book.constraint_offset, book.constraint_offset + book.n_pairs)
    sub = dataclasses.replace(
        constraints,
        i=constraints.i[sl],
        j=constraints.j[sl],
        rest=constraints.rest[sl],
        stiffness=constraints.stiffness[sl],
        kind=constraints.kind[sl],
        eps=constraints.eps[sl],
    )
    return constraint_energies(positions, sub)


def update_adhesion(state: ParticleSystem, constraints: ConstraintSet, book: AdhesionBook,
                    step_index: int = 0) -> tuple[ConstraintSet, AdhesionBook, list[FractureEvent]]:
    """Fracture every alive adhesion constraint whose energy reached its threshold."""
    energies = adhesion_energies(state.positions, constraints, book)
    eps = constraints.eps[book.constraint_offset : book.constraint_offset + book.n_pairs]
    over = np.flatnonzero(book.alive & (energies >= eps))
    return fracture(constraints, book, over.tolist(), step_index, energies)


def check_removal(constraints: ConstraintSet, book: AdhesionBook) -> frozenset:
    k = constraints.stiffness[book.constraint_offset : book.constraint_offset + book.n_pairs]
    return frozenset(np.flatnonzero(k == 0).tolist())


def _expand(particles: set[int], graph: ConnectivityGraph, book: AdhesionBook) -> frozenset:
    grown = set(particles)
    for a in particles:
        grown.update(graph.dressing_adjacency.get(a, ()))
    added = grown - particles
    return frozenset(p for p in range(book.n_pairs) if book.alive[p] and int(book.pairs[p, 0]) in added)


def adhesion_boundary(seed_set: Iterable[int], graph: ConnectivityGraph, book: AdhesionBook) -> frozenset:
    """Alive pairs whose dressing particle is exactly one axis edge away from the seed's particles.

    An empty seed starts from the grasped dressing particle.
    """
    seed = {int(book.pairs[p, 0]) for p in seed_set}
    if not seed:
        seed = {graph.grasp_particle}
    return _expand(seed, graph, book)


def boundary_layers(book: AdhesionBook, graph: ConnectivityGraph) -> AdhesionBook:
    """Recompute the first and second boundary layers from the detached set."""
    base = {int(book.pairs[p, 0]) for p in book.detached}
    if not base:
        base = {graph.grasp_particle}
    layer1 = _expand(base, graph, book)
    layer2 = _expand(base | {int(book.pairs[p, 0]) for p in layer1}, graph, book)
    return dataclasses.replace(book, layer1=layer1, layer2=layer2)


def write_fracture_log(path: Path, events: Iterable[FractureEvent]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "dressing_index", "skin_index", "energy_at_fracture"])
        for ev in events:
            writer.writerow([ev.step, ev.dressing_index, ev.skin_index, repr(float(ev.energy))])
