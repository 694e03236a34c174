"""Fitting (rho, E, alpha) to an observed cloth sequence.

Each iteration rolls the simulator out four times (the current point and one
forward perturbation per parameter), forms one-sided finite-difference
gradients of the vertex L2 loss and takes an Adam step.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import MeshError, MeshSequence, TriMesh
from .mpm import SimConfig, simulate_sequence
from .params import PhysParams
from .restshape import RestShapeParam, build_rest_state

__all__ = ["PhysParams", "OptimConfig", "AdamState", "FDResult", "FitResult", "RolloutError",
           "phys_loss", "finite_diff_grad", "adam_step", "fit_parameters", "rollout",
           "worker_count", "FIT_KEYS"]

log = logging.getLogger(__name__)

FIT_KEYS = ("rho", "E", "alpha")
POSITIVE_FLOOR = 1e-6
THREADS_ENV = "CLOTHMPM_THREADS"


class RolloutError(RuntimeError):
    """A simulation inside the fit failed; carries where it happened."""

    def __init__(self, message, params: PhysParams | None = None, iteration: int | None = None):
        super().__init__(message)
        self.params = params
        self.iteration = iteration


@dataclass(frozen=True)
class OptimConfig:
    iterations: int = 200
    d_rho: float = 0.05
    d_E: float = 5.0
    d_alpha: float = 0.005
    lr_rho: float = 0.01
    lr_E: float = 0.3
    lr_alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho0: float = 1.0
    E0: float = 100.0
    alpha0: float = 1.0
    nu: float = 0.3
    gamma: float = 500.0
    kappa: float = 500.0
    horizon: int | None = None

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be an integer >= 1, got {self.iterations}")
        for name in ("d_rho", "d_E", "d_alpha", "lr_rho", "lr_E", "lr_alpha", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.horizon is not None and self.horizon < 2:
            raise ValueError(f"horizon must be >= 2 frames, got {self.horizon}")
        self.initial_params()  # validates the starting point

    def initial_params(self) -> PhysParams:
        return PhysParams(E=self.E0, nu=self.nu, gamma=self.gamma, kappa=self.kappa,
                          rho=self.rho0, alpha=self.alpha0)

    def delta(self, key):
        return getattr(self, "d_" + key)

    def lr(self, key):
        return getattr(self, "lr_" + key)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AdamState:
    m: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class FDResult:
    grad: dict
    base_loss: float
    evaluations: int
    points: tuple  # (label, PhysParams, loss) for every evaluation


@dataclass
class FitResult:
    params: PhysParams
    best_loss: float
    loss_history: list
    trajectory: list
    n_rollouts: int
    wall_time: float

    @property
    def running_min(self):
        return list(np.minimum.accumulate(self.loss_history))


def worker_count(default_cap: int = 4) -> int:
    """Worker threads from ``CLOTHMPM_THREADS``; 0 or unset picks automatically."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0, got {n}")
    if n == 0:
        n = min(default_cap, os.cpu_count() or 1)
    return n


def phys_loss(simulated: MeshSequence, target: MeshSequence, horizon: int | None = None) -> float:
    """Sum of squared vertex differences over frames ``1 .. T-1`` (frame 0 is the
    shared initial state)."""
    T = len(target) if horizon is None else horizon
    if len(simulated) < T or len(target) < T:
        raise MeshError(f"sequences have {len(simulated)} and {len(target)} frames; "
                        f"horizon {T} needs both to cover it")
    if simulated.faces.shape != target.faces.shape or not np.array_equal(simulated.faces,
                                                                          target.faces):
        raise MeshError("simulated and target sequences have different topology")
    total = 0.0
    for i in range(1, T):
        a, b = simulated.frames[i], target.frames[i]
        if a.shape != b.shape:
            raise MeshError(f"frame {i}: vertex arrays {a.shape} vs {b.shape}")
        total += float(((a - b) ** 2).sum())
    return total


def _perturbed(P: PhysParams, key: str, cfg: OptimConfig):
    step = cfg.delta(key)
    value = getattr(P, key)
    if key == "alpha" and value + step > 1.0:
        step = -step  # backward difference at the upper bound
    return P.replace(**{key: value + step}), step


def finite_diff_grad(loss_fn, P: PhysParams, cfg: OptimConfig, executor=None) -> FDResult:
    """One-sided differences in (rho, E, alpha): exactly four calls to ``loss_fn``.

    ``executor`` (anything with ``map``) may evaluate the four points
    concurrently; results do not depend on evaluation order.
    """
    points = [("base", P, 0.0)]
    for key in FIT_KEYS:
        Pk, step = _perturbed(P, key, cfg)
        points.append((key, Pk, step))

    def evaluate(item):
        label, Q, _ = item
        try:
            value = float(loss_fn(Q))
        except RolloutError:
            raise
        except Exception as exc:
            raise RolloutError(f"loss evaluation failed at {label} point {Q.as_dict()}: {exc}",
                               params=Q) from exc
        if not np.isfinite(value):
            raise RolloutError(f"non-finite loss at {label} point {Q.as_dict()}", params=Q)
        return value

    losses = list(executor.map(evaluate, points) if executor is not None
                  else map(evaluate, points))
    base = losses[0]
    grad = {key: (losses[i + 1] - base) / points[i + 1][2] for i, key in enumerate(FIT_KEYS)}
    return FDResult(grad, base, len(points),
                    tuple((label, Q, loss) for (label, Q, _), loss in zip(points, losses)))


def adam_step(P: PhysParams, grad, moments: AdamState, iteration: int, cfg: OptimConfig):
    """Bias-corrected Adam update of (rho, E, alpha); returns ``(P', moments')``.

    ``grad`` is a mapping keyed by :data:`FIT_KEYS`. The inputs are not mutated.
    """
    if iteration < 1:
        raise ValueError(f"iteration index must be >= 1, got {iteration}")
    g = np.array([float(grad[k]) for k in FIT_KEYS])
    if not np.all(np.isfinite(g)):
        raise ValueError(f"non-finite gradient {dict(zip(FIT_KEYS, g.tolist()))}")
    m = cfg.beta1 * moments.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * moments.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1 ** iteration)
    v_hat = v / (1.0 - cfg.beta2 ** iteration)
    new = {}
    for i, key in enumerate(FIT_KEYS):
        value = getattr(P, key) - cfg.lr(key) * m_hat[i] / (np.sqrt(v_hat[i]) + cfg.eps)
        if key == "alpha":
            value = min(1.0, max(0.0, value))
        else:
            value = max(POSITIVE_FLOOR, value)
        new[key] = float(value)
    return P.replace(**new), AdamState(m, v)


def rollout(cloth0: TriMesh, colliders: MeshSequence | None, P: PhysParams, sim_cfg: SimConfig,
            n_frames: int) -> MeshSequence:
    """Simulate ``n_frames`` frames from ``cloth0`` with a rest shape built from ``P.alpha``."""
    g = np.asarray(sim_cfg.gravity, dtype=np.float64)
    param = (RestShapeParam.from_gravity(P.alpha, g) if np.any(g != 0)
             else RestShapeParam(P.alpha))
    rest = build_rest_state(cloth0, param)
    return simulate_sequence(cloth0, rest, colliders, P, sim_cfg, n_frames=n_frames)


def fit_parameters(cloth0: TriMesh, colliders: MeshSequence | None, target: MeshSequence,
                   cfg: OptimConfig, sim_cfg: SimConfig, on_iteration=None,
                   workers: int | None = None) -> FitResult:
    """Adam on finite-difference gradients; returns the best-loss parameters.

    ``on_iteration(it, P, fd)`` is called after every gradient evaluation.
    ``workers`` defaults to :func:`worker_count`.
    """
    T = cfg.horizon or len(target)
    if T > len(target):
        raise MeshError(f"horizon {T} exceeds the target's {len(target)} frames")
    if not np.array_equal(target.faces, cloth0.faces) or target.frames[0].shape != \
            cloth0.vertices.shape:
        raise MeshError("target topology does not match the cloth mesh")
    if colliders is not None and len(colliders) > 1 and len(colliders) < T:
        raise MeshError(f"collider sequence has {len(colliders)} frames; horizon is {T}")
    counter = {"n": 0}
    state = {"iteration": 0}

    def loss_fn(P):
        counter["n"] += 1
        try:
            sim = rollout(cloth0, colliders, P, sim_cfg, T - 1)
        except Exception as exc:
            raise RolloutError(f"rollout failed in iteration {state['iteration']} at "
                               f"{P.as_dict()}: {exc}", params=P,
                               iteration=state["iteration"]) from exc
        return phys_loss(sim, target, T)

    workers = worker_count() if workers is None else workers
    executor = ThreadPoolExecutor(min(workers, 4)) if workers > 1 else None
    t0 = time.perf_counter()
    P = cfg.initial_params()
    moments = AdamState()
    history, trajectory = [], []
    best_P, best_loss = P, np.inf
    try:
        for it in range(1, cfg.iterations + 1):
            state["iteration"] = it
            fd = finite_diff_grad(loss_fn, P, cfg, executor)
            history.append(fd.base_loss)
            trajectory.append(P)
            if fd.base_loss < best_loss:
                best_P, best_loss = P, fd.base_loss
            if on_iteration is not None:
                on_iteration(it, P, fd)
            log.info("iter %d loss %.6g %s", it, fd.base_loss, P.as_dict())
            if fd.base_loss == 0.0:
                continue  # global minimum of a nonnegative loss; any step is worse
            P, moments = adam_step(P, fd.grad, moments, it, cfg)
    finally:
        if executor is not None:
            executor.shutdown()
    return FitResult(best_P, float(best_loss), history, trajectory, counter["n"],
                     time.perf_counter() - t0)
