import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import chain, free_system
from peelsim.sim import (
    ADHESION,
    SKIN,
    ConstraintSet,
    SolverDivergence,
    SolverParams,
    constraint_energy,
    constraint_value,
    constraint_values,
    rollout_batch,
    step,
    total_energy,
)

coord = st.floats(-1.0, 1.0, allow_nan=False)
point = st.tuples(coord, coord, coord)


@pytest.mark.parametrize(
    "xi, xj, rest, expected",
    [((0, 0, 0), (0, 0, 2), 1.0, 1.0), ((1, 1, 1), (1, 1, 1), 0.0, 0.0), ((0, 0, 0), (0.3, 0.4, 0), 1.0, -0.5)],
)
def test_constraint_value(xi, xj, rest, expected):
    pos = np.array([xi, xj], dtype=float)
    assert constraint_value(pos, 0, 1, rest) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("k, c, expected", [(2.0, 1.0, 1.0), (0.0, 3.0, 0.0), (10.0, -0.5, 1.25)])
def test_constraint_energy(k, c, expected):
    pos = np.array([[0, 0, 0], [0, 0, 1.0 + c]])
    assert constraint_energy(pos, 0, 1, 1.0, k) == pytest.approx(expected, abs=1e-12)


def test_rigid_pair_meets_at_rest_length():
    # equal weights split the 1 m excess evenly: each end moves half of it
    state = free_system([[0, 0, 0], [0, 0, 2.0]])
    cons = chain([[0, 1]], state.positions, 1.0)
    out = step(state, cons, state.positions[2], SolverParams(iterations=1))
    np.testing.assert_allclose(out.positions[0], [0, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(out.positions[1], [0, 0, 1.5], atol=1e-15)
    assert constraint_value(out.positions, 0, 1, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_all_zero_stiffness_only_moves_driven(small_scene):
    cons = small_scene.constraints.with_stiffness(np.zeros(len(small_scene.constraints)))
    target = small_scene.grasp_point + [0.0, 0.0, 0.01]
    out = step(small_scene.system, cons, target)
    expected = small_scene.system.positions.copy()
    expected[small_scene.system.driven_index] = target
    assert np.array_equal(out.positions, expected)


def test_lift_reduces_energy_against_frozen_sheet():
    from peelsim.scene import SceneConfig, build_scene

    scene = build_scene(SceneConfig(skin_grid=(5, 5), skin_extent=(0.1, 0.1), dressing_grid=(3, 3),
                                    dressing_extent=(0.05, 0.05), landmark_grid=(2, 2)))
    target = scene.grasp_point + [0.0, 0.0, 0.01]
    frozen = scene.system.positions.copy()
    frozen[scene.system.driven_index] = target
    out = step(scene.system, scene.constraints, target, SolverParams(iterations=50))
    assert total_energy(out.positions, scene.constraints) < total_energy(frozen, scene.constraints)


def test_pinned_and_driven_particles(small_scene):
    target = small_scene.grasp_point + [0.003, -0.002, 0.02]
    out = step(small_scene.system, small_scene.constraints, target)
    pinned = small_scene.system.pinned
    assert pinned.sum() == 4
    assert np.array_equal(out.positions[pinned], small_scene.system.positions[pinned])
    assert np.array_equal(out.positions[small_scene.system.driven_index], target)


def test_step_is_deterministic_and_pure(small_scene):
    before = small_scene.system.positions.copy()
    target = small_scene.grasp_point + [0.0, 0.0, 0.015]
    a = step(small_scene.system, small_scene.constraints, target)
    b = step(small_scene.system, small_scene.constraints, target)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(small_scene.system.positions, before)


def test_rejects_bad_target(small_scene):
    with pytest.raises(ValueError):
        step(small_scene.system, small_scene.constraints, [0.0, np.nan, 0.0])


def test_divergence_guard(small_scene):
    with pytest.raises(SolverDivergence):
        step(small_scene.system, small_scene.constraints, [1e6, 0.0, 0.0])


def test_negative_rest_rejected():
    with pytest.raises(ValueError):
        chain([[0, 1]], None, -1.0)


def test_adhesion_rest_must_be_zero():
    with pytest.raises(ValueError):
        chain([[0, 1]], None, 0.5, 1.0, ADHESION)


def test_rollout_lane_matches_repeated_steps(small_scene):
    dirs = np.array([[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 0.6, 0.8]])
    finals, paths = rollout_batch(small_scene.system, small_scene.constraints, small_scene.grasp_point,
                                  dirs, 0.002, 4)
    for lane, d in enumerate(dirs):
        state, u = small_scene.system, small_scene.grasp_point.copy()
        for k in range(4):
            u = u + d * 0.002
            state = step(state, small_scene.constraints, u)
            assert np.array_equal(paths[lane, k], u)
        assert np.array_equal(finals[lane], state.positions)


# --- randomized properties -------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(a=point, b=point, rest=st.floats(0.0, 2.0))
def test_symmetric_correction(a, b, rest):
    state = free_system([a, b])
    if np.linalg.norm(state.positions[0] - state.positions[1]) < 1e-6:
        return
    cons = chain([[0, 1]], state.positions, rest)
    out = step(state, cons, state.positions[2], SolverParams(iterations=1))
    da = out.positions[0] - state.positions[0]
    db = out.positions[1] - state.positions[1]
    np.testing.assert_allclose(da, -db, atol=1e-12)
    axis = state.positions[1] - state.positions[0]
    assert np.linalg.norm(np.cross(da, axis)) <= 1e-9 * max(1.0, np.linalg.norm(axis))


@settings(max_examples=100, deadline=None)
@given(extra=st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24), st.floats(0.0, 0.1)), min_size=1, max_size=8),
       lift=st.floats(0.0, 0.02))
def test_zero_stiffness_neutrality(extra, lift):
    from peelsim.scene import SceneConfig, build_scene

    scene = _neutral_scene()
    extra = [(i, j, r) for i, j, r in extra if i != j]
    if not extra:
        return
    e = np.array([(i, j) for i, j, _ in extra])
    dead = ConstraintSet(e[:, 0].copy(), e[:, 1].copy(), np.array([r for *_, r in extra]),
                         np.zeros(len(e)), np.full(len(e), SKIN, dtype=np.int8), np.full(len(e), np.inf))
    target = scene.grasp_point + [0.0, 0.0, lift]
    ref = step(scene.system, scene.constraints, target)
    # zero-stiffness constraints both appended and interleaved at the front
    for cons in (ConstraintSet.concatenate([scene.constraints, dead]),
                 ConstraintSet.concatenate([dead, scene.constraints])):
        assert np.array_equal(step(scene.system, cons, target).positions, ref.positions)


_NEUTRAL = []


def _neutral_scene():
    from peelsim.scene import SceneConfig, build_scene

    if not _NEUTRAL:
        _NEUTRAL.append(build_scene(SceneConfig(skin_grid=(5, 5), skin_extent=(0.08, 0.08), dressing_grid=(3, 3),
                                                dressing_extent=(0.04, 0.04), landmark_grid=(2, 2))))
    return _NEUTRAL[0]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-4, 5e-3))
def test_energy_descent_from_perturbed_rest(seed, scale):
    scene = _neutral_scene()
    rng = np.random.default_rng(seed)
    pos = scene.system.positions + rng.normal(0.0, scale, scene.system.positions.shape)
    pos[scene.system.pinned] = scene.system.positions[scene.system.pinned]
    state = scene.system.with_positions(pos)
    u = pos[scene.system.driven_index]
    out = step(state, scene.constraints, u)
    assert total_energy(out.positions, scene.constraints) <= total_energy(pos, scene.constraints)


def random_chain(seed, links=10, noise=0.02):
    """A valid random polyline with per-link rest lengths, then jittered."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(links, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    rest = rng.uniform(0.05, 0.15, links)
    pts = np.vstack([[0.0, 0.0, 0.0], np.cumsum(d * rest[:, None], axis=0)])
    return pts + rng.normal(0.0, noise, pts.shape), rest


@pytest.mark.parametrize("seed", range(10))
def test_chain_of_ten_converges(seed):
    pts, rest = random_chain(seed)
    state = free_system(pts, pinned=(0,))
    cons = chain([[k, k + 1] for k in range(10)], state.positions, rest)
    out = step(state, cons, state.positions[-1], SolverParams(iterations=200))
    assert np.max(np.abs(constraint_values(out.positions, cons))) < 1e-6
