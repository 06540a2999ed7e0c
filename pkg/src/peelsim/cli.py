"""Command-line entry point: run, compare, calibrate."""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import os
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import calibrate as calib
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .export import write_run
from .metrics import compare_table, table_csv, table_text
from .peeler import METHODS, RunLimits, run_baseline, run_peel
from .scene import build_scene

log = logging.getLogger("peelsim")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3
EXIT_FAILED = 4
EXIT_NOT_CALIBRATED = 5

OUT_ENV = "PEELSIM_OUT"
# repetitions per method when --reps is not given
DEFAULT_REPS = {"mpc": 20, "up": 5, "arc": 5}


def derived_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(rep)]).generate_state(1)[0] % (2**31))


def execute_run(config: ExperimentConfig, method: str, rep: int, seed: int, out_root: Path) -> dict:
    """One repetition, persisted to ``<out_root>/<method>_<rep>_<seed>``; returns its metrics."""
    run_seed = derived_seed(seed, rep)
    cfg = config.with_seed(run_seed)
    run_dir = Path(out_root) / f"{method}_{rep}_{run_seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(dump_config(cfg))
    handler = logging.FileHandler(run_dir / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logging.getLogger("peelsim").addHandler(handler)
    started = time.time()
    try:
        scene = build_scene(cfg.scene)
        if method == "mpc":
            record = run_peel(scene, cfg.mpc, cfg.loss, cfg.run, cfg.solver)
        else:
            record = run_baseline(method, scene, cfg.mpc.step_size, cfg.run, cfg.solver)
        record.metadata["grasp_pair_fractured_at_start"] = True
        metrics = write_run(
            run_dir,
            record,
            scene,
            {"rep": rep, "seed": run_seed, "scene_hash": cfg.scene_hash()},
        )
        log.info("%s rep %d finished: %s in %.1fs", method, rep, record.status, time.time() - started)
    finally:
        logging.getLogger("peelsim").removeHandler(handler)
        handler.close()
    metrics["run_dir"] = str(run_dir)
    return metrics


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.max_steps is not None or args.snapshot_every is not None:
        run = dataclasses.replace(
            config.run,
            max_steps=config.run.max_steps if args.max_steps is None else args.max_steps,
            snapshot_every=config.run.snapshot_every if args.snapshot_every is None else args.snapshot_every,
        )
        config = dataclasses.replace(config, run=run)
    out_root = Path(args.out or os.environ.get(OUT_ENV, "runs"))
    out_root.mkdir(parents=True, exist_ok=True)
    reps = DEFAULT_REPS[args.method] if args.reps is None else args.reps
    if reps < 1:
        print("error: --reps must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    jobs = [(config, args.method, rep, args.seed, out_root) for rep in range(reps)]
    results: list[Optional[dict]] = [None] * len(jobs)
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(execute_run, *job): k for k, job in enumerate(jobs)}
            for fut in concurrent.futures.as_completed(futures):
                k = futures[fut]
                results[k] = _collect(fut.result, jobs[k])
    else:
        for k, job in enumerate(jobs):
            results[k] = _collect(lambda: execute_run(*job), job)
    statuses = []
    for (_, method, rep, _, _), m in zip(jobs, results):
        statuses.append(m["status"])
        print(
            f"{method} rep={rep} status={m['status']} steps={m.get('steps', 0)} "
            f"D_max={_fmt(m.get('d_max_mm'))}mm D_mean={_fmt(m.get('d_mean_mm'))}mm -> {m.get('run_dir', '')}"
        )
    if any(s in ("failed", "error") for s in statuses):
        return EXIT_FAILED
    if any(s != "complete" for s in statuses):
        return EXIT_INCOMPLETE
    return EXIT_OK


def _collect(call, job) -> dict:
    try:
        return call()
    except Exception as exc:  # a crashed repetition must not stop the others
        log.exception("repetition %s failed", job[2])
        return {"status": "error", "reason": str(exc)}


def _metrics_files(path: Path) -> list[Path]:
    if (path / "metrics.json").is_file():
        return [path / "metrics.json"]
    return sorted(path.glob("*/metrics.json"))


def cmd_compare(args) -> int:
    grouped: dict[str, list[dict]] = defaultdict(list)
    hashes = set()
    for d in args.run_dirs:
        path = Path(d)
        files = _metrics_files(path) if path.is_dir() else []
        if not files:
            print(f"error: no metrics.json found under {path}", file=sys.stderr)
            return EXIT_ERROR
        for f in files:
            try:
                m = json.loads(f.read_text())
                method = m["method"]
            except (OSError, ValueError, KeyError) as exc:
                print(f"error: corrupt metrics file {f}: {exc}", file=sys.stderr)
                return EXIT_ERROR
            if m.get("d_max_mm") is None:
                print(f"warning: {f} has no metrics (status {m.get('status')}); skipped", file=sys.stderr)
                continue
            grouped[method].append(m)
            hashes.add(m.get("scene_hash"))
    if len(hashes) > 1:
        print("warning: runs come from different scene configurations", file=sys.stderr)
    rows = compare_table(grouped)
    csv_text = table_csv(rows)
    out = Path(args.out) if args.out else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(csv_text)
    print(table_text(rows))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = load_config(args.config)
    params = config.calibration
    if args.eps:
        params = dataclasses.replace(params, eps_grid=tuple(args.eps))
    if args.stiffness:
        params = dataclasses.replace(params, stiffness_grid=tuple(args.stiffness))
    best, results = calib.calibrate(config.scene, params, config.mpc.step_size, config.solver)
    for r in results:
        step = "none" if r.first_fracture_step is None else r.first_fracture_step
        print(f"k={r.adhesion_stiffness:g} eps={r.eps:g} first_fracture_step={step} "
              f"lift={r.lift * 1000:.1f}mm {'ok' if r.passes else '--'}")
    out = Path(args.out) if args.out else None
    if best is None:
        print("no candidate met the calibration criterion; closest:")
        for r in calib.closest(results, params):
            print(f"  k={r.adhesion_stiffness:g} eps={r.eps:g} lift={r.lift * 1000:.1f}mm")
        return EXIT_NOT_CALIBRATED
    print(f"suggested adhesion_stiffness={best.adhesion_stiffness:g} fracture_threshold_eps={best.eps:g}")
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(
            f"scene:\n  adhesion_stiffness: {best.adhesion_stiffness!r}\n"
            f"  fracture_threshold_eps: {best.eps!r}\n"
            f"# probe lift at first fracture: {best.lift * 1000:.2f} mm\n"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="peelsim", description="Dressing peeling simulator and MPC trajectory optimizer")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run peeling repetitions with one method")
    r.add_argument("--config", required=True)
    r.add_argument("--method", choices=METHODS, default="mpc")
    r.add_argument("--reps", type=int, default=None, help="repetitions (default: 20 for mpc, 5 for baselines)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./runs)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--snapshot-every", type=int, default=None)
    r.add_argument("--max-steps", type=int, default=None)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="summarize D_max/D_mean across run directories")
    c.add_argument("run_dirs", nargs="+")
    c.add_argument("--out", default=None, help="comparison CSV path")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("calibrate", help="sweep adhesion stiffness / fracture threshold with a vertical pull")
    k.add_argument("--config", required=True)
    k.add_argument("--eps", type=float, nargs="+", default=None, help="override the eps grid")
    k.add_argument("--stiffness", type=float, nargs="+", default=None, help="override the stiffness grid")
    k.add_argument("--out", default=None, help="write the suggestion as a YAML fragment")
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
