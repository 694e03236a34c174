"""Particle/grid simulation loop for codimensional cloth.

Particles come in two kinds, stored in one array:

* one vertex particle per mesh vertex (indices ``0 .. V-1``), advected by the
  grid and used to rebuild the in-plane material directions ``d1, d2``;
* one quadrature particle per triangle (indices ``V .. V+F-1``), sitting at the
  triangle barycenter and carrying the normal direction ``d3``.

The elastic energy of a face is ``rest_area * psi(d D^-1)``. Its gradient with
respect to ``d1, d2`` is pushed to the grid through the vertex particles, and
its gradient with respect to ``d3`` through the face particle's MLS kernel.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .collider import NORMAL_EPS, PROJECTION_TOL, ColliderFrame, ColliderTrack, project_grid_velocities, rasterize_collider
from .constitutive import ElasticParams
from .geometry import DEGENERATE_AREA, MaterialFrames, MeshError, MeshSequence, TriMesh, material_frames
from .grid import BackgroundGrid, DomainError, GridSpec, bspline_weights  # noqa: F401
from .params import PhysParams

log = logging.getLogger(__name__)

COLLAPSE_AREA = 1e-14


class CFLViolation(RuntimeError):
    """A particle would cross more than one grid cell in one substep."""


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    frame_dt: float = 0.04
    substeps: int = 400
    grid_resolution: int = 200
    domain_bounds: tuple | None = None
    gravity: tuple = (0.0, -9.8, 0.0)
    deterministic: bool = True
    pinned: tuple = ()
    friction: float | None = None
    boundary_nodes: int = 3
    strict: bool = False
    domain_padding: float = 0.1
    # None disables the shear cone on compressed faces; separation is always projected
    cloth_friction: float | None = None

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if self.grid_resolution < 8:
            raise ValueError(f"grid_resolution must be >= 8, got {self.grid_resolution}")
        if not self.frame_dt > 0:
            raise ValueError(f"frame_dt must be positive, got {self.frame_dt}")
        if self.domain_bounds is not None:
            lo, hi = (np.asarray(b, dtype=np.float64) for b in self.domain_bounds)
            if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
                raise ValueError(f"domain box must have positive extent: {self.domain_bounds}")
        if self.cloth_friction is not None and self.cloth_friction < 0:
            raise ValueError(f"cloth_friction must be >= 0, got {self.cloth_friction}")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        object.__setattr__(self, "pinned", tuple(int(i) for i in self.pinned))

    @property
    def dt(self):
        return self.frame_dt / self.substeps


def scene_bounds(meshes, config: SimConfig):
    """Domain box: union of bounding boxes padded by ``domain_padding`` of the
    largest extent, plus room for the wall band and the B-spline stencil."""
    if config.domain_bounds is not None:
        lo, hi = config.domain_bounds
        return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    pts = np.concatenate([np.asarray(m).reshape(-1, 3) for m in meshes])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = max(float((hi - lo).max()), 1e-6)
    pad = config.domain_padding * ext
    lo, hi = lo - pad, hi + pad
    ext = float((hi - lo).max())
    margin = config.boundary_nodes + 2
    h = ext / (config.grid_resolution - 2 * margin)
    return lo - margin * h, hi + margin * h


@dataclass
class ParticleState:
    x: np.ndarray
    v: np.ndarray
    C: np.ndarray
    m: np.ndarray
    faces: np.ndarray
    d: np.ndarray
    D_inv: np.ndarray
    vol: np.ndarray
    n_vertices: int
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    pinned_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @classmethod
    def from_mesh(cls, cloth: TriMesh, rest: MaterialFrames, rho: float, pinned=()):
        """Sample particles for ``cloth``.

        Each face of canonical area ``A`` has mass ``rho * A``: half stays on its
        quadrature particle, a sixth goes to each of its vertices.
        """
        nv, nf = cloth.n_vertices, cloth.n_faces
        if len(rest) != nf:
            raise MeshError(f"{len(rest)} rest frames for {nf} faces")
        if rho <= 0:
            raise ValueError("density must be positive")
        cur = material_frames(cloth)
        area = 0.5 * np.linalg.norm(np.cross(cur.D[:, :, 0], cur.D[:, :, 1]), axis=1)
        m = np.zeros(nv + nf)
        np.add.at(m, cloth.faces.ravel(), np.repeat(rho * area / 6.0, 3))
        m[nv:] = 0.5 * rho * area
        if np.any(m[:nv] <= 0):
            raise MeshError(f"vertex {int(np.flatnonzero(m[:nv] <= 0)[0])} belongs to no face")
        x = np.concatenate([cloth.vertices, cloth.vertices[cloth.faces].mean(axis=1)])
        pinned = np.asarray(pinned, dtype=np.int64)
        if pinned.size and (pinned.min() < 0 or pinned.max() >= nv):
            raise ValueError("pinned vertex index out of range")
        return cls(
            x=x, v=np.zeros((nv + nf, 3)), C=np.zeros((nv + nf, 3, 3)), m=m,
            faces=np.ascontiguousarray(cloth.faces), d=cur.D.copy(),
            D_inv=tangent_frame_inverse(rest), vol=rest.rest_area.copy(),
            n_vertices=nv, pinned=pinned, pinned_x=cloth.vertices[pinned].copy(),
        )

    @property
    def n_particles(self):
        return len(self.x)

    @property
    def vertex_positions(self):
        return self.x[: self.n_vertices]

    def total_mass(self):
        return float(self.m.sum())

    def total_momentum(self):
        return (self.m[:, None] * self.v).sum(axis=0)

    def kinetic_energy(self):
        return 0.5 * float((self.m * (self.v ** 2).sum(axis=1)).sum())

    def deformation_gradients(self):
        return self.d @ self.D_inv

    def copy(self):
        return ParticleState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                                for k, v in self.__dict__.items()})


def tangent_frame_inverse(rest: MaterialFrames) -> np.ndarray:
    """``D^-1 B`` with ``B = [t1, t2, n]`` an orthonormal frame of each rest face.

    Measuring F in the rest tangent frame makes ``B^T D`` upper triangular, so
    the first two columns of ``F`` stay in the deformed tangent plane and its
    third column is ``d3``.
    """
    D = rest.D
    t1 = D[:, :, 0] / np.linalg.norm(D[:, :, 0], axis=1, keepdims=True)
    n = D[:, :, 2] / np.linalg.norm(D[:, :, 2], axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    B = np.stack([t1, t2, n], axis=2)
    return np.ascontiguousarray(rest.D_inv @ B)


def make_grid(bounds, config: SimConfig) -> BackgroundGrid:
    lo, hi = bounds
    return BackgroundGrid(GridSpec.from_bounds(lo, hi, config.grid_resolution,
                                               config.boundary_nodes))


def _check_domain(particles, grid, strict):
    spec = grid.spec
    ok = spec.inside(particles.x)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        msg = f"particle {bad} at {particles.x[bad].tolist()} left the simulation domain"
        if strict:
            raise DomainError(msg)
        log.warning("%s; clamping", msg)
        particles.x[:] = spec.clamp(particles.x)


def check_cfl(particles, grid, dt):
    speed = np.sqrt((particles.v ** 2).sum(axis=1).max()) if particles.n_particles else 0.0
    if not np.isfinite(speed) or speed * dt >= grid.h:
        raise CFLViolation(f"max particle speed {speed:.4g} * dt {dt:.3g} >= cell size {grid.h:.4g}")


def particle_to_grid(particles: ParticleState, grid: BackgroundGrid, p: ElasticParams, dt: float,
                     stress: bool = True) -> BackgroundGrid:
    check_cfl(particles, grid, dt)
    nf = len(particles.faces)
    A = np.zeros((nf, 3, 3))
    vgrad = np.zeros((particles.n_vertices, 3))
    if stress and nf:
        K.stress_matrices(particles.d, particles.D_inv, particles.vol, p.E, p.nu, p.gamma,
                          p.kappa, A)
        K.vertex_force_gradients(particles.faces, A, particles.n_vertices, vgrad)
    grid.clear()
    grid.reserve(particles.n_particles)
    spec = grid.spec
    grid.n_active = K.p2g(particles.x, particles.v, particles.C, particles.m,
                          particles.n_vertices, vgrad, A, particles.d, spec.lo, spec.h,
                          spec.dims, dt, grid.mass, grid.momentum, grid.touched, grid.active)
    return grid


def grid_update(grid: BackgroundGrid, gravity, dt: float) -> BackgroundGrid:
    spec = grid.spec
    K.grid_update(grid.active, grid.n_active, spec.dims, spec.boundary,
                  np.asarray(gravity, dtype=np.float64), dt, grid.mass, grid.momentum,
                  grid.velocity)
    return grid


def grid_to_particle(grid: BackgroundGrid, particles: ParticleState, dt: float) -> ParticleState:
    spec = grid.spec
    K.g2p(particles.x, particles.v, particles.C, particles.n_vertices, spec.lo, spec.h,
          spec.dims, dt, grid.velocity)
    if particles.pinned.size:
        particles.x[particles.pinned] = particles.pinned_x
        particles.v[particles.pinned] = 0.0
        particles.C[particles.pinned] = 0.0
    return particles


def update_material_frames(particles: ParticleState, dt: float, cloth=None,
                           strict: bool = False, params: ElasticParams | None = None,
                           cloth_friction: float | None = None) -> ParticleState:
    """Refresh ``d`` from the advected vertices, then project ``d3`` back to
    a non-separating state (``cloth`` is accepted for interface symmetry;
    topology comes from ``particles.faces``)."""
    params = params or ElasticParams()
    cf = -1.0 if cloth_friction is None else float(cloth_friction)
    collapsed = K.update_frames(particles.x, particles.v, particles.C, particles.faces, particles.n_vertices,
                                dt, particles.d, particles.D_inv, cf, params.gamma,
                                params.kappa, COLLAPSE_AREA)
    if collapsed:
        msg = f"{collapsed} face(s) collapsed to zero area"
        if strict:
            raise SimulationError(msg)
        log.warning(msg)
    return particles


def substep(particles: ParticleState, grid: BackgroundGrid, collider: ColliderFrame | None,
            config: SimConfig, params: ElasticParams, dt: float | None = None):
    """One MPM step: P2G, grid update, collider projection, G2P, frame update."""
    dt = config.dt if dt is None else dt
    _check_domain(particles, grid, config.strict)
    particle_to_grid(particles, grid, params, dt)
    grid_update(grid, config.gravity, dt)
    fields = None
    if collider is not None and len(collider):
        fields = rasterize_collider(collider, grid)
        friction = collider.friction if collider.friction is not None else config.friction
        project_grid_velocities(grid, fields, friction)
    grid_to_particle(grid, particles, dt)
    update_material_frames(particles, dt, strict=config.strict, params=params,
                           cloth_friction=config.cloth_friction)
    return particles, fields


class Simulator:
    """Stateful stepper over frames; :func:`simulate_sequence` wraps it."""

    def __init__(self, cloth0: TriMesh, rest: MaterialFrames, params: PhysParams,
                 config: SimConfig, colliders: MeshSequence | None = None):
        self.cloth0 = cloth0
        self.params = params
        self.config = config
        self.track = ColliderTrack(colliders, config.friction) if colliders is not None else None
        meshes = [cloth0.vertices]
        if colliders is not None:
            meshes += list(colliders.frames)
        self.bounds = scene_bounds(meshes, config)
        self.grid = make_grid(self.bounds, config)
        self.particles = ParticleState.from_mesh(cloth0, rest, params.rho, config.pinned)
        self.frame = 0
        self.substeps_done = 0
        self.frame_times = []
        self.max_touched = 0
        self.fused = True
        self._cbuf = None

    def step_frame(self):
        """Advance one frame. Uses the fused compiled loop unless
        ``self.fused`` is False, in which case :func:`substep` is called per
        substep (same arithmetic, slower; useful for instrumentation)."""
        t0 = time.perf_counter()
        if self.fused:
            self._step_fused()
        else:
            self._step_python()
        self.frame += 1
        self.frame_times.append(time.perf_counter() - t0)
        return self.particles.vertex_positions.copy()

    def _step_python(self):
        cfg = self.config
        el = self.params.elastic
        for k in range(cfg.substeps):
            collider = None
            if self.track is not None:
                collider = self.track.at(self.frame, (k + 1) / cfg.substeps)
            _, fields = substep(self.particles, self.grid, collider, cfg, el)
            if fields is not None:
                self.max_touched = max(self.max_touched, fields.touched_nodes)
            self.substeps_done += 1

    def _collider_arrays(self):
        if self._cbuf is None:
            nf = len(self.track.seq.faces) if self.track is not None else 0
            cap = 27 * nf
            self._cbuf = (np.empty((nf, 3)), np.empty((nf, 3)), np.empty(cap), np.empty((cap, 3)),
                          np.empty((cap, 3)), np.empty(cap, np.int64), np.zeros(cap, np.int8))
        if self.track is None:
            z = np.zeros((0, 3))
            return z, z, True, np.zeros((0, 3), np.int64), z, 0.0
        frames = self.track.seq.frames
        static = len(frames) == 1
        X0 = frames[0] if static else frames[self.frame]
        X1 = X0 if static else frames[self.frame + 1]
        friction = self.track.friction if self.track.friction is not None else self.config.friction
        return (np.ascontiguousarray(X0), np.ascontiguousarray(X1), static,
                np.ascontiguousarray(self.track.seq.faces),
                np.ascontiguousarray(self.track.velocities[0 if static else self.frame]),
                float(friction or 0.0))

    def _step_fused(self):
        cfg, el, P, g = self.config, self.params.elastic, self.particles, self.grid
        spec = g.spec
        X0, X1, static, cfaces, cvel, friction = self._collider_arrays()
        bary, nrm, sw, sv, sn, nodes, sticky = self._cbuf
        g.reserve(P.n_particles)
        stats = np.zeros(5, np.int64)
        cf = -1.0 if cfg.cloth_friction is None else float(cfg.cloth_friction)
        status, g.n_active = K.run_substeps(
            P.x, P.v, P.C, P.m, P.faces, P.n_vertices, P.d, P.D_inv, P.vol, P.pinned,
            np.ascontiguousarray(P.pinned_x), el.E, el.nu, el.gamma, el.kappa, cf,
            spec.lo, spec.h, spec.dims, spec.boundary, np.asarray(cfg.gravity, np.float64),
            cfg.dt, cfg.substeps, cfg.strict,
            g.mass, g.momentum, g.velocity, g.touched, g.active, g.n_active,
            X0, X1, static, cfaces, cvel, friction, g.slot,
            bary, nrm, sw, sv, sn, nodes, sticky,
            NORMAL_EPS, PROJECTION_TOL, COLLAPSE_AREA, DEGENERATE_AREA, stats)
        self.substeps_done += int(stats[0])
        self.max_touched = max(self.max_touched, int(stats[1]))
        if stats[2]:
            log.warning("frame %d: %d particle position(s) clamped back into the domain",
                        self.frame, int(stats[2]))
        if stats[3] and status != K.COLLAPSE:
            log.warning("frame %d: %d face collapse event(s)", self.frame, int(stats[3]))
        if status == K.CFL:
            speed = float(np.sqrt((P.v ** 2).sum(axis=1).max()))
            raise CFLViolation(f"frame {self.frame}, substep {int(stats[4])}: max particle speed "
                               f"{speed:.4g} * dt {cfg.dt:.3g} >= cell size {spec.h:.4g}")
        if status == K.DOMAIN:
            raise DomainError(f"particle {int(stats[4])} left the simulation domain "
                              f"in frame {self.frame}")
        if status == K.COLLAPSE:
            raise SimulationError(f"face(s) collapsed to zero area in frame {self.frame}")
        if status == K.COLLIDER_DOMAIN:
            raise DomainError(f"collider face {int(stats[4])} lies outside the simulation domain")

    def run(self, n_frames: int, on_frame=None) -> MeshSequence:
        if self.track is not None and len(self.track) > 1 and len(self.track) < n_frames + 1:
            raise SimulationError(f"collider sequence has {len(self.track)} frames; "
                                  f"{n_frames + 1} needed for {n_frames} simulated frames")
        frames = [self.cloth0.vertices.copy()]
        for i in range(n_frames):
            frames.append(self.step_frame())
            if on_frame is not None:
                on_frame(i + 1, frames[-1], self)
        return MeshSequence(self.cloth0.faces, tuple(frames), self.config.frame_dt)


def simulate_sequence(cloth0: TriMesh, rest: MaterialFrames, colliders: MeshSequence | None,
                      P: PhysParams, config: SimConfig, n_frames: int | None = None) -> MeshSequence:
    """Roll the cloth forward; the result has ``n_frames + 1`` frames, the first
    being ``cloth0``. ``n_frames`` defaults to ``len(colliders) - 1``."""
    if n_frames is None:
        if colliders is None:
            raise ValueError("n_frames is required when there is no collider sequence")
        n_frames = len(colliders) - 1
    if n_frames < 0:
        raise ValueError("n_frames must be >= 0")
    return Simulator(cloth0, rest, P, config, colliders).run(n_frames)
