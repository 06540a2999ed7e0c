"""Scene construction: skin/dressing meshes, adhesion pairing, pins, landmarks and analytic SDFs.

Planar coordinates are ``(x, y)``; grid shapes are ``(rows, cols)`` with
columns running along x and rows along y. Extents and offsets are given
as ``(x, y)`` in meters.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Optional

import numpy as np

from .sim import ADHESION, DRESSING, SKIN, ConstraintSet, ParticleSystem

INCH = 0.0254
_UNITS = {"m": 1.0, "cm": 0.01, "mm": 0.001, "in": INCH, "inch": INCH, "inches": INCH}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z]+)\s*$")


class SceneConfigError(ValueError):
    """Invalid scene configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def to_meters(value: Any, field_name: str = "length") -> float:
    """Convert a number (meters) or a tagged string like ``"7 in"`` to meters."""
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _QUANTITY.match(value)
        if m and m.group(2).lower() in _UNITS:
            return float(m.group(1)) * _UNITS[m.group(2).lower()]
    raise SceneConfigError(field_name, f"cannot interpret {value!r} as a length")


@dataclass(frozen=True)
class SceneConfig:
    skin_grid: tuple[int, int] = (15, 15)
    skin_extent: tuple[float, float] = (7 * INCH, 7 * INCH)
    dressing_grid: tuple[int, int] = (9, 9)
    dressing_extent: tuple[float, float] = (4 * INCH, 4 * INCH)
    # None centers the dressing on the skin
    dressing_offset: Optional[tuple[float, float]] = None
    geometry: str = "flat_sheet"
    cylinder_radius: float = 0.06
    cylinder_arc_span: float = np.pi / 2
    skin_stiffness: float = 1000.0
    dressing_stiffness: float = 10000.0
    adhesion_stiffness: float = 20.0
    fracture_threshold_eps: float = 2.5e-4
    pinned: str = "corners"
    landmark_grid: tuple[int, int] = (6, 8)
    grasp_corner: tuple[int, int] = (0, 0)
    # (row0, col0, row1, col1) inclusive dressing sub-rectangle; None = whole underside
    adhesive_window: Optional[tuple[int, int, int, int]] = None
    sdf_margin_sigma: float = 0.005

    def __post_init__(self):
        self.validate()

    @property
    def offset(self) -> tuple[float, float]:
        if self.dressing_offset is not None:
            return tuple(self.dressing_offset)
        return (
            0.5 * (self.skin_extent[0] - self.dressing_extent[0]),
            0.5 * (self.skin_extent[1] - self.dressing_extent[1]),
        )

    def validate(self) -> None:
        for name in ("skin_grid", "dressing_grid", "landmark_grid"):
            g = getattr(self, name)
            if len(g) != 2 or min(g) < 2:
                raise SceneConfigError(name, f"grid counts must be >= 2, got {g}")
        for name in ("skin_extent", "dressing_extent"):
            e = getattr(self, name)
            if len(e) != 2 or min(e) <= 0:
                raise SceneConfigError(name, f"extents must be > 0, got {e}")
        if self.adhesion_stiffness <= 0:
            raise SceneConfigError("adhesion_stiffness", "must be > 0")
        if self.fracture_threshold_eps <= 0:
            raise SceneConfigError("fracture_threshold_eps", "must be > 0")
        if self.skin_stiffness < 0 or self.dressing_stiffness < 0:
            raise SceneConfigError("skin_stiffness", "stiffness must be >= 0")
        if self.sdf_margin_sigma < 0:
            raise SceneConfigError("sdf_margin_sigma", "must be >= 0")
        if self.geometry not in ("flat_sheet", "cylinder"):
            raise SceneConfigError("geometry", f"unknown geometry {self.geometry!r}")
        if self.geometry == "cylinder" and (self.cylinder_radius <= 0 or not 0 < self.cylinder_arc_span < 2 * np.pi):
            raise SceneConfigError("cylinder_radius", "cylinder needs radius > 0 and 0 < arc_span < 2*pi")
        if self.pinned not in ("corners", "edges", "none"):
            raise SceneConfigError("pinned", f"unknown pin specification {self.pinned!r}")
        if tuple(self.grasp_corner) not in ((0, 0), (0, 1), (1, 0), (1, 1)):
            raise SceneConfigError("grasp_corner", "must be (row_end, col_end) with entries 0 or 1")
        ox, oy = self.offset
        tol = 1e-12
        if (
            ox < -tol
            or oy < -tol
            or ox + self.dressing_extent[0] > self.skin_extent[0] + tol
            or oy + self.dressing_extent[1] > self.skin_extent[1] + tol
        ):
            raise SceneConfigError("dressing_extent", "dressing footprint (offset + extent) lies outside the skin extent")
        if self.adhesive_window is not None:
            r0, c0, r1, c1 = self.adhesive_window
            rows, cols = self.dressing_grid
            if not (0 <= r0 <= r1 < rows and 0 <= c0 <= c1 < cols):
                raise SceneConfigError("adhesive_window", f"window {self.adhesive_window} outside dressing grid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dressing_offset"] = list(self.offset)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            name = sorted(unknown)[0]
            raise SceneConfigError(name, "unknown scene field")
        kw: dict[str, Any] = {}
        for name, value in data.items():
            if value is None:
                kw[name] = None
            elif name in ("skin_extent", "dressing_extent", "dressing_offset"):
                if not isinstance(value, (list, tuple)) or len(value) != 2:
                    raise SceneConfigError(name, "expected a pair of lengths")
                kw[name] = tuple(to_meters(v, name) for v in value)
            elif name in ("cylinder_radius", "sdf_margin_sigma"):
                kw[name] = to_meters(value, name)
            elif name in ("skin_grid", "dressing_grid", "landmark_grid", "grasp_corner", "adhesive_window"):
                try:
                    kw[name] = tuple(int(v) for v in value)
                except (TypeError, ValueError):
                    raise SceneConfigError(name, f"expected integers, got {value!r}") from None
            elif name in ("geometry", "pinned"):
                kw[name] = str(value)
            else:
                try:
                    kw[name] = float(value)
                except (TypeError, ValueError):
                    raise SceneConfigError(name, f"expected a number, got {value!r}") from None
        return cls(**kw)


@dataclass(frozen=True)
class Sdf:
    """Analytic signed distance to the forbidden region under the skin.

    ``flat_sheet``: the half-space ``z <= plane_z``. ``cylinder``: the solid
    cylinder of ``radius`` around the x axis through ``(y, z) = (0, -radius)``.
    """

    kind: str
    plane_z: float = 0.0
    radius: float = 0.0

    def axis_point(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.radius])

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        if self.kind == "flat_sheet":
            return p[..., 2] - self.plane_z
        dy = p[..., 1]
        dz = p[..., 2] + self.radius
        return np.sqrt(dy * dy + dz * dz) - self.radius

    def normal(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        if self.kind == "flat_sheet":
            return np.array([0.0, 0.0, 1.0])
        r = np.array([0.0, p[1], p[2] + self.radius])
        return r / np.linalg.norm(r)


def sdf_eval(handle: Sdf, point) -> float:
    return float(handle(point))


@dataclass(frozen=True)
class ConnectivityGraph:
    skin_edges: np.ndarray
    dressing_edges: np.ndarray
    adhesion_pairs: np.ndarray  # (P, 2): dressing particle, skin particle
    dressing_adjacency: dict[int, tuple[int, ...]]
    grasp_particle: int


@dataclass(frozen=True)
class LandmarkSet:
    indices: np.ndarray
    rest_positions: np.ndarray
    grid: tuple[int, int] = (6, 8)


@dataclass(frozen=True)
class Scene:
    config: SceneConfig
    system: ParticleSystem
    constraints: ConstraintSet
    graph: ConnectivityGraph
    sdf: Sdf
    landmarks: LandmarkSet
    dressing_center: np.ndarray = field(repr=False)

    @property
    def grasp_point(self) -> np.ndarray:
        return self.system.positions[self.system.driven_index].copy()

    @property
    def skin_faces(self) -> np.ndarray:
        return _grid_faces(*self.config.skin_grid, 0)

    @property
    def dressing_faces(self) -> np.ndarray:
        return _grid_faces(*self.config.dressing_grid, self.system.n_skin)


def _grid_faces(rows: int, cols: int, base: int) -> np.ndarray:
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = base + r * cols + c
            faces.append((a, a + 1, a + cols + 1))
            faces.append((a, a + cols + 1, a + cols))
    return np.array(faces, dtype=np.int64)


def _grid_edges(rows: int, cols: int, diagonals: bool) -> list[tuple[int, int]]:
    edges = []
    for r in range(rows):
        for c in range(cols):
            a = r * cols + c
            if c + 1 < cols:
                edges.append((a, a + 1))
            if r + 1 < rows:
                edges.append((a, a + cols))
            if diagonals and r + 1 < rows and c + 1 < cols:
                edges.append((a, a + cols + 1))
                edges.append((a + 1, a + cols))
    return edges


def _wrap(config: SceneConfig, xy: np.ndarray) -> np.ndarray:
    xy = np.atleast_2d(xy)
    out = np.zeros((len(xy), 3))
    out[:, 0] = xy[:, 0]
    if config.geometry == "flat_sheet":
        out[:, 1] = xy[:, 1]
        return out
    R = config.cylinder_radius
    theta = (xy[:, 1] / config.skin_extent[1] - 0.5) * config.cylinder_arc_span
    out[:, 1] = R * np.sin(theta)
    out[:, 2] = R * np.cos(theta) - R
    return out


def _grid_xy(rows: int, cols: int, extent, offset=(0.0, 0.0)) -> np.ndarray:
    xs = offset[0] + np.linspace(0.0, extent[0], cols)
    ys = offset[1] + np.linspace(0.0, extent[1], rows)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_scene(config: SceneConfig) -> Scene:
    """Build meshes, constraints, adhesion pairs, pins, landmarks and the SDF."""
    config.validate()
    s_rows, s_cols = config.skin_grid
    d_rows, d_cols = config.dressing_grid
    skin_xy = _grid_xy(s_rows, s_cols, config.skin_extent)
    dress_xy = _grid_xy(d_rows, d_cols, config.dressing_extent, config.offset)
    dx = config.skin_extent[0] / (s_cols - 1)
    dy = config.skin_extent[1] / (s_rows - 1)
    snap_tol = 1e-9 * max(config.skin_extent)

    skin_edges = _grid_edges(s_rows, s_cols, diagonals=True)

    if config.adhesive_window is None:
        adhesive = np.arange(d_rows * d_cols)
    else:
        r0, c0, r1, c1 = config.adhesive_window
        adhesive = np.array([r * d_cols + c for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)])

    # each adhesive dressing particle gets a coincident skin particle: the grid
    # node itself when aligned, otherwise an extra node tied to its skin cell
    extra_xy: list[np.ndarray] = []
    partner: dict[int, int] = {}
    n_grid = s_rows * s_cols
    for d in adhesive:
        x, y = dress_xy[d]
        c = int(round(x / dx))
        r = int(round(y / dy))
        if abs(c * dx - x) <= snap_tol and abs(r * dy - y) <= snap_tol:
            partner[int(d)] = r * s_cols + c
            continue
        c0 = min(int(np.floor(x / dx)), s_cols - 2)
        r0 = min(int(np.floor(y / dy)), s_rows - 2)
        idx = n_grid + len(extra_xy)
        extra_xy.append(np.array([x, y]))
        base = r0 * s_cols + c0
        for corner in (base, base + 1, base + s_cols, base + s_cols + 1):
            skin_edges.append((corner, idx))
        partner[int(d)] = idx

    n_skin = n_grid + len(extra_xy)
    all_skin_xy = np.vstack([skin_xy] + extra_xy) if extra_xy else skin_xy
    positions = np.vstack([_wrap(config, all_skin_xy), _wrap(config, dress_xy)])
    n = len(positions)

    inv_mass = np.ones(n)
    if config.pinned == "corners":
        for r, c in ((0, 0), (0, s_cols - 1), (s_rows - 1, 0), (s_rows - 1, s_cols - 1)):
            inv_mass[r * s_cols + c] = 0.0
    elif config.pinned == "edges":
        for r in range(s_rows):
            for c in range(s_cols):
                if r in (0, s_rows - 1) or c in (0, s_cols - 1):
                    inv_mass[r * s_cols + c] = 0.0

    gr, gc = config.grasp_corner
    driven = n_skin + (gr * (d_rows - 1)) * d_cols + gc * (d_cols - 1)

    dressing_edges = [(n_skin + a, n_skin + b) for a, b in _grid_edges(d_rows, d_cols, diagonals=True)]
    adjacency: dict[int, list[int]] = {n_skin + k: [] for k in range(d_rows * d_cols)}
    for a, b in _grid_edges(d_rows, d_cols, diagonals=False):
        adjacency[n_skin + a].append(n_skin + b)
        adjacency[n_skin + b].append(n_skin + a)
    pairs = np.array([(n_skin + int(d), partner[int(d)]) for d in adhesive], dtype=np.int64).reshape(-1, 2)

    skin_edges_arr = np.array(sorted({tuple(sorted(e)) for e in skin_edges}), dtype=np.int64)
    dressing_edges_arr = np.array(dressing_edges, dtype=np.int64)
    constraints = ConstraintSet.concatenate(
        [
            ConstraintSet.from_edges(skin_edges_arr, positions, config.skin_stiffness, SKIN),
            ConstraintSet.from_edges(dressing_edges_arr, positions, config.dressing_stiffness, DRESSING),
            ConstraintSet.from_edges(pairs, positions, config.adhesion_stiffness, ADHESION, config.fracture_threshold_eps),
        ]
    )

    landmarks = _landmarks(config, skin_xy, positions)
    diag = float(np.hypot(*config.skin_extent))
    system = ParticleSystem(
        positions=positions,
        inverse_mass=inv_mass,
        driven_index=int(driven),
        n_skin=n_skin,
        adhesive_dressing=pairs[:, 0].copy(),
        scene_diagonal=diag,
    )
    if config.geometry == "flat_sheet":
        sdf = Sdf("flat_sheet", plane_z=0.0)
    else:
        sdf = Sdf("cylinder", radius=config.cylinder_radius)
    ox, oy = config.offset
    center_xy = np.array([ox + 0.5 * config.dressing_extent[0], oy + 0.5 * config.dressing_extent[1]])
    graph = ConnectivityGraph(
        skin_edges=skin_edges_arr,
        dressing_edges=dressing_edges_arr,
        adhesion_pairs=pairs,
        dressing_adjacency={k: tuple(v) for k, v in adjacency.items()},
        grasp_particle=int(driven),
    )
    return Scene(
        config=config,
        system=system,
        constraints=constraints,
        graph=graph,
        sdf=sdf,
        landmarks=landmarks,
        dressing_center=_wrap(config, center_xy)[0],
    )


def _landmarks(config: SceneConfig, skin_xy: np.ndarray, positions: np.ndarray) -> LandmarkSet:
    rows, cols = config.landmark_grid
    xs = (np.arange(cols) + 0.5) / cols * config.skin_extent[0]
    ys = (np.arange(rows) + 0.5) / rows * config.skin_extent[1]
    chosen = []
    for y in ys:
        for x in xs:
            d = np.hypot(skin_xy[:, 0] - x, skin_xy[:, 1] - y)
            chosen.append(int(np.argmin(d)))
    if len(set(chosen)) != len(chosen):
        raise SceneConfigError(
            "landmark_grid", f"skin grid {config.skin_grid} too coarse to host a {rows}x{cols} landmark grid"
        )
    idx = np.array(chosen, dtype=np.int64)
    return LandmarkSet(indices=idx, rest_positions=positions[idx].copy(), grid=(rows, cols))
