"""Landmark displacement metrics and cross-method comparison tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scene import LandmarkSet


class MetricsError(ValueError):
    pass


def displacement_series(landmark_positions, landmarks: LandmarkSet) -> np.ndarray:
    """Per-step, per-landmark displacement magnitude (meters), shape (T, N)."""
    frames = np.asarray(landmark_positions, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1:] != landmarks.rest_positions.shape:
        raise MetricsError(
            f"landmark frames of shape {frames.shape} do not match {len(landmarks.indices)} landmarks"
        )
    return np.linalg.norm(frames - landmarks.rest_positions[None], axis=-1)


def d_max(series) -> float:
    """Largest displacement over all landmarks and steps, in millimeters."""
    s = np.asarray(series, dtype=np.float64)
    if s.size == 0:
        raise MetricsError("empty displacement series")
    return float(s.max() * 1000.0)


def d_mean(series) -> float:
    """Grand mean displacement over all landmark-step pairs, in millimeters."""
    s = np.asarray(series, dtype=np.float64)
    if s.size == 0:
        raise MetricsError("empty displacement series")
    return float(s.mean() * 1000.0)


def profile_fraction_mean(series, fraction: float) -> float:
    """Mean displacement (mm) over the first ``fraction`` of a run's steps."""
    s = np.asarray(series, dtype=np.float64)
    k = max(1, int(np.ceil(fraction * len(s))))
    return float(s[:k].mean() * 1000.0)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n: int
    d_max_mean: float
    d_max_std: float
    d_mean_mean: float
    d_mean_std: float


def _sample_std(values: Sequence[float]) -> float:
    # single-sample convention: report 0 instead of NaN
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def compare_table(runs: Mapping[str, Iterable[Mapping]]) -> list[MethodSummary]:
    """Mean and sample standard deviation of D_max and D_mean per method."""
    rows = []
    for method, items in runs.items():
        items = list(items)
        if not items:
            raise MetricsError(f"no runs for method {method!r}")
        dmax = [float(r["d_max_mm"]) for r in items]
        dmean = [float(r["d_mean_mm"]) for r in items]
        rows.append(
            MethodSummary(method, len(items), float(np.mean(dmax)), _sample_std(dmax),
                          float(np.mean(dmean)), _sample_std(dmean))
        )
    return rows


def table_csv(rows: Sequence[MethodSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "n", "d_max_mm_mean", "d_max_mm_std", "d_mean_mm_mean", "d_mean_mm_std"])
    for r in rows:
        w.writerow([r.method, r.n, f"{r.d_max_mean:.6g}", f"{r.d_max_std:.6g}",
                    f"{r.d_mean_mean:.6g}", f"{r.d_mean_std:.6g}"])
    return buf.getvalue()


def table_text(rows: Sequence[MethodSummary]) -> str:
    head = f"{'method':<16}{'D_max (mm)':>20}{'D_mean (mm)':>20}"
    lines = [head, "-" * len(head)]
    for r in rows:
        label = f"{r.method} (n={r.n})"
        lines.append(
            f"{label:<16}{f'{r.d_max_mean:.1f} ± {r.d_max_std:.1f}':>20}{f'{r.d_mean_mean:.2f} ± {r.d_mean_std:.2f}':>20}"
        )
    return "\n".join(lines)


def write_component_series(path: Path, landmark_positions, landmarks: LandmarkSet) -> None:
    """Raw per-landmark displacement components, one row per (step, landmark)."""
    frames = np.asarray(landmark_positions, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "landmark", "particle", "dx", "dy", "dz", "magnitude"])
        for t, frame in enumerate(frames, start=1):
            d = frame - landmarks.rest_positions
            for i, (row, p) in enumerate(zip(d, landmarks.indices)):
                w.writerow([t, i, int(p), *(repr(float(v)) for v in row), repr(float(np.linalg.norm(row)))])
