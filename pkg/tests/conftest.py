import numpy as np
import pytest

from peelsim.scene import SceneConfig, build_scene
from peelsim.sim import SKIN, ConstraintSet, ParticleSystem


def free_system(points, driven=None, pinned=()):
    """Particle system over ``points``; an extra isolated particle is driven unless ``driven`` is given."""
    pts = np.asarray(points, dtype=np.float64)
    if driven is None:
        pts = np.vstack([pts, [[0.0, 0.0, 5.0]]])
        driven = len(pts) - 1
    w = np.ones(len(pts))
    w[list(pinned)] = 0.0
    return ParticleSystem(positions=pts, inverse_mass=w, driven_index=driven, n_skin=len(pts))


def chain(edges, points, rest, stiffness=np.inf, kind=SKIN):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    m = len(edges)
    return ConstraintSet(
        i=edges[:, 0].copy(),
        j=edges[:, 1].copy(),
        rest=np.broadcast_to(np.asarray(rest, dtype=np.float64), (m,)).copy(),
        stiffness=np.full(m, float(stiffness)),
        kind=np.full(m, kind, dtype=np.int8),
        eps=np.full(m, np.inf),
    )


SMALL = dict(
    skin_grid=(5, 5),
    skin_extent=(0.08, 0.08),
    dressing_grid=(3, 3),
    dressing_extent=(0.04, 0.04),
    landmark_grid=(2, 2),
)


@pytest.fixture(scope="session")
def small_scene():
    return build_scene(SceneConfig(**SMALL))


@pytest.fixture(scope="session")
def default_scene():
    return build_scene(SceneConfig())


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
