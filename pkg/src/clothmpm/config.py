"""Run configuration: one INI file per run, overridable from the command line.

Sections and keys (all optional unless a command needs them)::

    [run]      output, seed, deterministic, format (obj|ply), frames
    [inputs]   cloth, colliders, target, simulated, reference, body
    [sim]      frame_dt, substeps, grid_resolution, domain_lo, domain_hi, gravity,
               pinned, pin_top_row, friction, cloth_friction, strict, boundary_nodes
    [params]   E, nu, gamma, kappa, rho, alpha
    [optim]    iterations, d_rho, d_E, d_alpha, lr_rho, lr_E, lr_alpha, beta1, beta2,
               eps, rho0, E0, alpha0, horizon
    [metrics]  tau, samples

Vectors are comma separated. Relative input paths resolve against the config
file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .inverse import OptimConfig
from .mpm import SimConfig
from .params import PhysParams


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


_SCHEMA = {
    "run": {"output": str, "seed": int, "deterministic": bool, "format": str, "frames": int},
    "inputs": {k: str for k in ("cloth", "colliders", "target", "simulated", "reference", "body")},
    "sim": {"frame_dt": float, "substeps": int, "grid_resolution": int, "domain_lo": "vec",
            "domain_hi": "vec", "gravity": "vec", "pinned": "ints", "pin_top_row": int,
            "friction": float, "cloth_friction": float, "strict": bool, "boundary_nodes": int},
    "params": {k: float for k in ("E", "nu", "gamma", "kappa", "rho", "alpha")},
    "optim": {**{k: float for k in ("d_rho", "d_E", "d_alpha", "lr_rho", "lr_E", "lr_alpha",
                                    "beta1", "beta2", "eps", "rho0", "E0", "alpha0")},
              "iterations": int, "horizon": int},
    "metrics": {"tau": float, "samples": int},
}


@dataclass
class RunConfig:
    source: Path | None = None
    output: Path = Path("out")
    seed: int = 0
    deterministic: bool = True
    fmt: str = "obj"
    frames: int | None = None
    inputs: dict = field(default_factory=dict)
    sim: SimConfig = field(default_factory=SimConfig)
    params: PhysParams = field(default_factory=PhysParams)
    optim: OptimConfig = field(default_factory=OptimConfig)
    tau: float = 0.001
    samples: int = 10000
    raw: dict = field(default_factory=dict)

    def input_path(self, key: str, required: bool = True) -> Path | None:
        p = self.inputs.get(key)
        if p is None:
            if required:
                raise ConfigError(f"missing required input [inputs] {key}")
            return None
        return p

    def echo(self) -> dict:
        """Parsed values, for run manifests."""
        return {s: dict(v) for s, v in self.raw.items()}


def _convert(section, key, kind, text):
    try:
        if kind is str:
            return text
        if kind is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "vec":
            vals = tuple(float(t) for t in text.split(","))
            if len(vals) != 3:
                raise ValueError(text)
            return vals
        if kind == "ints":
            return tuple(int(t) for t in text.split(",") if t.strip())
        return kind(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r}") from None


def parse_override(text: str):
    """``section.key=value`` -> (section, key, value)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section.strip(), key.strip(), value.strip()


def load_config(path, overrides=(), command: str | None = None) -> RunConfig:
    """Read, merge overrides, convert and validate. Raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as E are case sensitive
    base = None
    if path is not None:
        base = Path(path)
        if not base.is_file():
            raise ConfigError(f"config file not found: {base}")
        try:
            cp.read(base)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {base}: {exc}") from None
    for item in overrides:
        section, key, value = parse_override(item)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)

    raw = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        raw[section] = {}
        for key, text in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            raw[section][key] = _convert(section, key, _SCHEMA[section][key], text)
    return _build(raw, base, command)


def _build(raw, base, command):
    root = base.parent if base is not None else Path(".")
    run = raw.get("run", {})
    cfg = RunConfig(source=base, raw=raw)
    cfg.output = Path(run.get("output", "out"))
    if not cfg.output.is_absolute():
        cfg.output = root / cfg.output
    cfg.seed = run.get("seed", 0)
    cfg.deterministic = run.get("deterministic", True)
    cfg.fmt = run.get("format", "obj").lower()
    if cfg.fmt not in ("obj", "ply"):
        raise ConfigError(f"[run] format must be obj or ply, got {cfg.fmt!r}")
    cfg.frames = run.get("frames")
    if cfg.frames is not None and cfg.frames < 1:
        raise ConfigError(f"[run] frames must be >= 1, got {cfg.frames}")

    for key, text in raw.get("inputs", {}).items():
        p = Path(text)
        p = p if p.is_absolute() else root / p
        if not p.exists():
            raise ConfigError(f"[inputs] {key}: path does not exist: {p}")
        cfg.inputs[key] = p

    sim = dict(raw.get("sim", {}))
    try:
        lo, hi = sim.pop("domain_lo", None), sim.pop("domain_hi", None)
        if (lo is None) != (hi is None):
            raise ConfigError("[sim] domain_lo and domain_hi must be given together")
        top = sim.pop("pin_top_row", None)
        if top is not None:
            if top < 1:
                raise ConfigError("[sim] pin_top_row must be >= 1")
            sim["pinned"] = tuple(sorted(set(sim.get("pinned", ())) | set(range(top))))
        cfg.sim = SimConfig(domain_bounds=(lo, hi) if lo is not None else None,
                            deterministic=cfg.deterministic, **sim)
        cfg.params = PhysParams(**raw.get("params", {}))
        cfg.optim = OptimConfig(**raw.get("optim", {}))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    metrics = raw.get("metrics", {})
    cfg.tau = metrics.get("tau", 0.001)
    cfg.samples = metrics.get("samples", 10000)
    if not cfg.tau > 0:
        raise ConfigError(f"[metrics] tau must be positive, got {cfg.tau}")
    if cfg.samples < 1:
        raise ConfigError(f"[metrics] samples must be >= 1, got {cfg.samples}")

    needs = {"simulate": ("cloth",), "fit": ("cloth", "target"),
             "eval": ("simulated", "reference")}.get(command, ())
    for key in needs:
        cfg.input_path(key)
    if command == "simulate" and "colliders" not in cfg.inputs and cfg.frames is None:
        raise ConfigError("simulate needs [inputs] colliders or [run] frames")
    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.output}: {exc}") from None
    return cfg
