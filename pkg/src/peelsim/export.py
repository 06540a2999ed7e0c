"""Run persistence: trajectory/fracture/metrics files and per-frame snapshots."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .adhesion import write_fracture_log
from .metrics import d_max, d_mean, displacement_series, write_component_series
from .peeler import RunRecord
from .scene import Scene


def write_points_csv(path: Path, positions: np.ndarray, n_skin: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "body", "x", "y", "z"])
        for i, p in enumerate(positions):
            w.writerow([i, "skin" if i < n_skin else "dressing", *(repr(float(v)) for v in p)])


def write_obj(path: Path, positions: np.ndarray, faces_by_group: dict[str, np.ndarray]) -> None:
    """Wavefront OBJ with one group per body; unused particles are still listed as vertices."""
    with open(path, "w") as fh:
        for p in positions:
            fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
        for name, faces in faces_by_group.items():
            fh.write(f"g {name}\n")
            for a, b, c in faces:
                fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def read_points_csv(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])


def run_metrics(record: RunRecord, scene: Scene) -> dict:
    metrics = {
        "method": record.method,
        "status": record.status,
        "steps": record.steps,
        "fractures": len(record.fractures),
        "pairs": record.n_pairs,
        "d_max_mm": None,
        "d_mean_mm": None,
    }
    if record.steps:
        series = displacement_series(record.landmark_positions, scene.landmarks)
        metrics["d_max_mm"] = d_max(series)
        metrics["d_mean_mm"] = d_mean(series)
    if record.reason:
        metrics["reason"] = record.reason
    return metrics


def write_run(out_dir: Path, record: RunRecord, scene: Scene, extra_metrics: dict | None = None) -> dict:
    """Persist a run record; returns the metrics dict written to metrics.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "u_x", "u_y", "u_z", "dir_x", "dir_y", "dir_z", "detached"])
        for t, (u, d, n) in enumerate(zip(record.u_path, record.directions, record.detached_counts), start=1):
            w.writerow([t, *(repr(float(v)) for v in u), *(repr(float(v)) for v in d), n])
    write_fracture_log(out_dir / "fractures.csv", record.fractures)
    if record.landmark_positions:
        write_component_series(out_dir / "landmarks.csv", record.landmark_positions, scene.landmarks)
    if record.mpc_rows:
        _write_rows(out_dir / "mpc_diagnostics.csv", record.mpc_rows)
    if record.loss_rows:
        _write_rows(out_dir / "loss.csv", record.loss_rows)
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    faces = {"skin": scene.skin_faces, "dressing": scene.dressing_faces}
    for t, pos in sorted(record.snapshots.items()):
        write_points_csv(snap_dir / f"frame_{t:05d}.csv", pos, scene.system.n_skin)
        write_obj(snap_dir / f"frame_{t:05d}.obj", pos, faces)
    metrics = run_metrics(record, scene)
    metrics.update(extra_metrics or {})
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out_dir / "metadata.json").write_text(json.dumps(_jsonable(record.metadata), indent=2, sort_keys=True) + "\n")
    return metrics


def read_trajectory(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["u_x"]), float(r["u_y"]), float(r["u_z"])] for r in rows]).reshape(-1, 3)


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
