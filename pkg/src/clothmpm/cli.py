"""``clothmpm`` command line: simulate, fit, eval.

Every command prints one JSON object per line on stdout (frame, iteration or
metric records, then a summary), writes the same records plus a manifest
into the output directory and renders a figure next to them.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Failures are
reported as a single JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .geometry import MeshSequence, load_mesh, load_sequence, save_mesh
from .inverse import FitResult, RolloutError, fit_parameters, worker_count
from .metrics import chamfer_distance, f_score, penetration_depth, sample_surface
from .mpm import Simulator
from .restshape import RestShapeParam, build_rest_state

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

MESH_SUFFIXES = (".obj", ".ply")


class _Reporter:
    """Writes JSON records to stdout and to a JSONL file."""

    def __init__(self, path: Path, stream=None):
        self.path = path
        self.stream = stream or sys.stdout
        self._fh = path.open("w")

    def emit(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        self._fh.write(line + "\n")
        self._fh.flush()
        print(line, file=self.stream, flush=True)

    def close(self):
        self._fh.close()


def _load_meshes(path: Path, frame_dt: float) -> MeshSequence:
    """A single mesh file becomes a one-frame (static) sequence."""
    if path.is_file() and path.suffix.lower() in MESH_SUFFIXES:
        return MeshSequence.static(load_mesh(path), 1, frame_dt)
    return load_sequence(path, frame_dt=frame_dt)


def _rest_state(cloth, cfg: RunConfig):
    g = np.asarray(cfg.sim.gravity, dtype=np.float64)
    param = (RestShapeParam.from_gravity(cfg.params.alpha, g) if np.any(g != 0)
             else RestShapeParam(cfg.params.alpha))
    return build_rest_state(cloth, param)


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed,
            "deterministic": cfg.deterministic,
            "config_file": str(cfg.source) if cfg.source else None,
            "config": cfg.echo(), **extra}


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig) -> int:
    from .plotting import plot_frame_times

    cloth = load_mesh(cfg.input_path("cloth"))
    colliders = None
    if "colliders" in cfg.inputs:
        colliders = _load_meshes(cfg.inputs["colliders"], cfg.sim.frame_dt)
    n_frames = cfg.frames if cfg.frames is not None else len(colliders) - 1
    if n_frames < 1:
        raise ConfigError("nothing to simulate: set [run] frames or give a longer collider "
                          "sequence")
    frame_dir = cfg.output / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    sim = Simulator(cloth, _rest_state(cloth, cfg), cfg.params, cfg.sim, colliders)
    files = [save_mesh(frame_dir / f"frame_{0:04d}.{cfg.fmt}", cloth.vertices, cloth.faces)]
    report = _Reporter(cfg.output / "frames.jsonl")

    def on_frame(i, verts, s):
        files.append(save_mesh(frame_dir / f"frame_{i:04d}.{cfg.fmt}", verts, cloth.faces))
        report.emit({"event": "frame", "frame": i, "wall_time": s.frame_times[-1],
                     "substeps": s.config.substeps, "file": files[-1].name})

    try:
        sim.run(n_frames, on_frame)
    finally:
        report.close()
    (cfg.output / "sequence.txt").write_text(
        f"frame_dt = {cfg.sim.frame_dt!r}\n" + "".join(f"frames/{f.name}\n" for f in files))
    times = sim.frame_times
    _write_json(cfg.output / "manifest.json", _manifest(
        cfg, "simulate", frames=[f.name for f in files], frame_wall_times=times,
        substeps_per_frame=cfg.sim.substeps, substeps_total=sim.substeps_done,
        grid_dims=sim.grid.spec.dims.tolist(), cell_size=sim.grid.h,
        particles=sim.particles.n_particles, max_touched_collider_nodes=sim.max_touched))
    plot_frame_times(times, cfg.output / "frame_times.png")
    print(json.dumps({"event": "summary", "frames": n_frames,
                      "mean_frame_time": float(np.mean(times)),
                      "output": str(cfg.output)}, sort_keys=True))
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    from .plotting import plot_loss_history

    cloth = load_mesh(cfg.input_path("cloth"))
    target = _load_meshes(cfg.input_path("target"), cfg.sim.frame_dt)
    colliders = None
    if "colliders" in cfg.inputs:
        colliders = _load_meshes(cfg.inputs["colliders"], cfg.sim.frame_dt)
    report = _Reporter(cfg.output / "fit_history.jsonl")

    def on_iteration(it, P, fd):
        report.emit({"event": "iteration", "iteration": it, "loss": fd.base_loss,
                     "params": {k: getattr(P, k) for k in ("rho", "E", "alpha")},
                     "grad": fd.grad, "evaluations": fd.evaluations})

    try:
        result: FitResult = fit_parameters(cloth, colliders, target, cfg.optim, cfg.sim,
                                           on_iteration=on_iteration, workers=worker_count())
    finally:
        report.close()
    summary = {"params": result.params.as_dict(), "best_loss": result.best_loss,
               "initial_loss": result.loss_history[0], "loss_history": result.loss_history,
               "rollouts": result.n_rollouts, "iterations": len(result.loss_history),
               "wall_time": result.wall_time}
    _write_json(cfg.output / "fit.json", summary)
    _write_json(cfg.output / "manifest.json", _manifest(cfg, "fit", optim=cfg.optim.as_dict()))
    plot_loss_history(result.loss_history, cfg.output / "loss.png", result.trajectory)
    print(json.dumps({"event": "summary", **{k: v for k, v in summary.items()
                                             if k != "loss_history"}}, sort_keys=True))
    return EXIT_OK


def evaluate_sequences(simulated: MeshSequence, reference: MeshSequence,
                       body: MeshSequence | None, tau: float, samples: int, seed: int):
    """Per-frame metric records. Both surfaces of frame ``i`` are sampled with
    seed ``seed + i``."""
    if len(simulated) != len(reference):
        raise ValueError(f"frame count mismatch: simulated has {len(simulated)} frames, "
                         f"reference has {len(reference)}")
    if body is not None and len(body) not in (1, len(simulated)):
        raise ValueError(f"body sequence has {len(body)} frames, expected 1 or "
                         f"{len(simulated)}")
    records = []
    for i in range(len(simulated)):
        t0 = time.perf_counter()
        a = sample_surface(simulated.mesh(i), samples, seed + i)
        b = sample_surface(reference.mesh(i), samples, seed + i)
        rec = {"event": "frame", "frame": i, "chamfer": chamfer_distance(a, b),
               "f_score": f_score(a, b, tau)}
        if body is not None:
            rec["penetration_depth"] = penetration_depth(simulated.mesh(i),
                                                         body.mesh(min(i, len(body) - 1)))
        rec["timing"] = time.perf_counter() - t0
        records.append(rec)
    return records


def cmd_eval(cfg: RunConfig) -> int:
    from .plotting import plot_metrics

    dt = cfg.sim.frame_dt
    simulated = _load_meshes(cfg.input_path("simulated"), dt)
    reference = _load_meshes(cfg.input_path("reference"), dt)
    body = _load_meshes(cfg.inputs["body"], dt) if "body" in cfg.inputs else None
    records = evaluate_sequences(simulated, reference, body, cfg.tau, cfg.samples, cfg.seed)
    report = _Reporter(cfg.output / "metrics.jsonl")
    for rec in records:
        report.emit(rec)
    keys = [k for k in ("chamfer", "f_score", "penetration_depth") if k in records[0]]
    summary = {"event": "summary", "frames": len(records),
               **{f"mean_{k}": float(np.mean([r[k] for r in records])) for k in keys}}
    report.emit(summary)
    report.close()
    _write_json(cfg.output / "manifest.json", _manifest(cfg, "eval"))
    plot_metrics(records, cfg.output / "metrics.png")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "eval": cmd_eval}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clothmpm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"clothmpm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", type=Path, help="INI run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("-o", "--output", help="output directory ([run] output)")
        p.add_argument("--seed", type=int, help="[run] seed")
        p.add_argument("--frames", type=int, help="[run] frames")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _error(kind: str, exc: BaseException, **extra) -> dict:
    return {"event": "error", "kind": kind, "type": type(exc).__name__,
            "message": str(exc), **extra}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = list(args.overrides)
    for flag, key in (("output", "run.output"), ("seed", "run.seed"), ("frames", "run.frames")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = load_config(args.config, overrides, command=args.command)
    except ConfigError as exc:
        print(json.dumps(_error("config", exc), sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(json.dumps(_error("config", exc), sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG
    except RolloutError as exc:
        extra = {"iteration": exc.iteration,
                 "params": exc.params.as_dict() if exc.params is not None else None}
        print(json.dumps(_error("runtime", exc, **extra), sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(json.dumps(_error("runtime", exc), sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
