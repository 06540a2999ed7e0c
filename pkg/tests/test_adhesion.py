import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boundary_oracle import bfs_boundary, bfs_layers, grid_instance
from peelsim.adhesion import (
    AdhesionBook,
    adhesion_energies,
    adhesion_boundary,
    boundary_layers,
    check_removal,
    fracture,
    update_adhesion,
    write_fracture_log,
)
from peelsim.peeler import bootstrap
from peelsim.sim import step


def _pairs_of(book, dressing_ids):
    return frozenset(p for p in range(book.n_pairs) if int(book.pairs[p, 0]) in dressing_ids)


def test_first_layers_from_grasp_corner(small_scene):
    book = AdhesionBook.from_constraints(small_scene.graph.adhesion_pairs, small_scene.constraints)
    book = boundary_layers(book, small_scene.graph)
    base = small_scene.system.n_skin
    # 3x3 dressing grasped at (0, 0): ring one is (0,1),(1,0); ring two is (0,2),(1,1),(2,0)
    assert book.layer1 == _pairs_of(book, {base + 1, base + 3})
    assert book.layer2 == _pairs_of(book, {base + 2, base + 4, base + 6})


def test_boundary_of_detached_seed(small_scene):
    constraints, book, _ = bootstrap(small_scene)
    assert len(book.detached) == 1
    ring = adhesion_boundary(book.detached, small_scene.graph, book)
    base = small_scene.system.n_skin
    assert ring == _pairs_of(book, {base + 1, base + 3})


def test_layers_empty_when_everything_detached(small_scene):
    book = AdhesionBook.from_constraints(small_scene.graph.adhesion_pairs, small_scene.constraints)
    _, book, _ = fracture(small_scene.constraints, book, range(book.n_pairs))
    book = boundary_layers(book, small_scene.graph)
    assert book.complete and not book.layer1 and not book.layer2


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(3, 8), cols=st.integers(3, 8), seed=st.integers(0, 2**32 - 1),
       adhesive=st.sampled_from([1.0, 0.8]))
def test_layers_match_bfs_oracle(rows, cols, seed, adhesive):
    rng = np.random.default_rng(seed)
    graph, book, coords = grid_instance(rows, cols, rng, adhesive)
    got = boundary_layers(book, graph)
    layer1, layer2 = bfs_layers(book, graph, coords)
    assert got.layer1 == layer1
    assert got.layer2 == layer2
    assert not (got.layer1 & got.layer2)
    assert not ((got.layer1 | got.layer2) & book.detached)
    seed_set = frozenset(p for p in range(book.n_pairs) if rng.random() < 0.3)
    assert adhesion_boundary(seed_set, graph, book) == bfs_boundary(seed_set, book, graph, coords)


def test_update_adhesion_threshold_is_inclusive(small_scene):
    constraints, book, _ = bootstrap(small_scene)
    pos = small_scene.system.positions.copy()
    p = sorted(set(range(book.n_pairs)) - book.detached)[0]
    k = constraints.stiffness[book.constraint_offset + p]
    eps = constraints.eps[book.constraint_offset + p]
    d, s = book.pairs[p]
    stretch = np.sqrt(2.0 * eps / k)
    pos[d] = pos[s] + [0.0, 0.0, stretch * (1 + 1e-9)]
    c2, b2, events = update_adhesion(small_scene.system.with_positions(pos), constraints, book, step_index=7)
    assert [e.pair for e in events] == [p]
    assert events[0].step == 7 and events[0].energy >= eps
    assert c2.stiffness[book.constraint_offset + p] == 0.0
    assert b2.detached == book.detached | {p}
    assert check_removal(c2, b2) == b2.detached
    # already fractured pairs never fire again
    _, _, again = update_adhesion(small_scene.system.with_positions(pos), c2, b2)
    assert again == []


def test_fracture_is_pure(small_scene):
    constraints, book, _ = bootstrap(small_scene)
    before = constraints.stiffness.copy()
    fracture(constraints, book, [2, 3])
    assert np.array_equal(constraints.stiffness, before)


def test_no_alive_pair_over_threshold_after_update(small_scene):
    constraints, book, _ = bootstrap(small_scene)
    state = small_scene.system
    u = small_scene.grasp_point.copy()
    for t in range(1, 60):
        u = u + [0.0, 0.0, 0.002]
        x_hat = step(state, constraints, u)
        constraints, new_book, _ = update_adhesion(x_hat, constraints, book, t)
        assert book.detached <= new_book.detached
        book = new_book
        e = adhesion_energies(x_hat.positions, constraints, book)
        eps = constraints.eps[book.constraint_offset:book.constraint_offset + book.n_pairs]
        assert not np.any(book.alive & (e >= eps))
        state = step(state, constraints, u)


def test_fracture_log(tmp_path, small_scene):
    constraints, book, events = bootstrap(small_scene)
    write_fracture_log(tmp_path / "f.csv", events)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "step,dressing_index,skin_index,energy_at_fracture"
    assert len(lines) == 2


def test_book_requires_aligned_constraints(small_scene):
    kind = small_scene.constraints.kind.copy()
    kind[-1] = 0
    misaligned = dataclasses.replace(small_scene.constraints, kind=kind)
    with pytest.raises(ValueError):
        AdhesionBook.from_constraints(small_scene.graph.adhesion_pairs, misaligned)
