"""Mesh colliders on the MPM grid.

Each collider face's velocity and normal are splatted to the 27 grid nodes
around its barycenter with B-spline weights. At every node that received
weight, the grid velocity is expressed relative to the collider; an inward
normal component is removed and the velocity is moved back to the world frame.
Work is proportional to the number of collider faces, never to the node count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .geometry import FaceFrames, MeshError, MeshSequence, face_frames_from_arrays
from .grid import BackgroundGrid, DomainError

NORMAL_EPS = 1e-8
# relative normal speeds above -PROJECTION_TOL are treated as separating
PROJECTION_TOL = 1e-13


@dataclass(frozen=True)
class ColliderFrame:
    faces: FaceFrames
    face_velocities: np.ndarray
    friction: float | None = None

    def __post_init__(self):
        v = np.asarray(self.face_velocities, dtype=np.float64).reshape(-1, 3)
        if len(v) != len(self.faces):
            raise ValueError(f"{len(v)} face velocities for {len(self.faces)} faces")
        object.__setattr__(self, "face_velocities", v)

    @classmethod
    def from_vertices(cls, vertices, faces, face_velocities, friction=None):
        return cls(face_frames_from_arrays(vertices, faces), face_velocities, friction)

    def __len__(self):
        return len(self.faces)


@dataclass
class ColliderGridFields:
    """Compact per-node collider fields for the nodes the collider touched."""

    nodes: np.ndarray
    weight: np.ndarray
    velocity: np.ndarray
    normal: np.ndarray
    sticky: np.ndarray
    scatter_writes: int = 0

    @property
    def touched_nodes(self) -> int:
        return len(self.nodes)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)),
                   np.zeros(0, np.int8), 0)

    def dense(self, n_nodes):
        """Expand to full-grid arrays (for inspection and tests)."""
        w = np.zeros(n_nodes)
        v = np.zeros((n_nodes, 3))
        n = np.zeros((n_nodes, 3))
        w[self.nodes] = self.weight
        v[self.nodes] = self.velocity
        n[self.nodes] = self.normal
        return w, v, n


def rasterize_collider(collider: ColliderFrame, grid: BackgroundGrid) -> ColliderGridFields:
    nf = len(collider)
    if nf == 0:
        return ColliderGridFields.empty()
    spec = grid.spec
    bary = np.ascontiguousarray(collider.faces.barycenter)
    inside = spec.inside(bary)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"collider face {bad} (barycenter {bary[bad].tolist()}) "
                          "lies outside the simulation domain")
    cap = 27 * nf
    nodes = np.empty(cap, np.int64)
    sw = np.empty(cap)
    sv = np.empty((cap, 3))
    sn = np.empty((cap, 3))
    n, writes = K.rasterize(bary, collider.face_velocities,
                            np.ascontiguousarray(collider.faces.normal),
                            spec.lo, spec.h, spec.dims, grid.slot, sw, sv, sn, nodes)
    sticky = np.zeros(n, np.int8)
    sw, sv, sn, nodes = sw[:n], sv[:n], sn[:n], nodes[:n]
    K.finalize_collider(n, sw, sv, sn, sticky, NORMAL_EPS)
    return ColliderGridFields(nodes, sw, sv, sn, sticky, writes)


def project_grid_velocities(grid: BackgroundGrid, fields: ColliderGridFields,
                            friction: float | None = None) -> BackgroundGrid:
    if len(fields.nodes):
        K.project(fields.nodes, fields.weight, fields.velocity, fields.normal, fields.sticky,
                  grid.mass, grid.velocity, float(friction or 0.0), PROJECTION_TOL)
    return grid


def face_velocities(seq: MeshSequence) -> list:
    """Per-frame face velocities by forward differences of barycenters."""
    f = seq.faces
    bary = [seq.frames[i][f].mean(axis=1) for i in range(len(seq))]
    if len(seq) < 2:
        return [np.zeros((len(f), 3)) for _ in bary]
    vel = [(bary[i + 1] - bary[i]) / seq.frame_dt for i in range(len(seq) - 1)]
    vel.append(vel[-1])
    return vel


def collider_frames_from_sequence(seq: MeshSequence, friction=None) -> list:
    if not isinstance(seq, MeshSequence):
        raise MeshError("collider input must be a MeshSequence")
    vel = face_velocities(seq)
    return [ColliderFrame.from_vertices(seq.frames[i], seq.faces, vel[i], friction)
            for i in range(len(seq))]


class ColliderTrack:
    """Collider state at arbitrary times within a sequence.

    Vertex positions are interpolated linearly between frames; face velocities
    are constant across a frame interval.
    """

    def __init__(self, seq: MeshSequence, friction=None):
        self.seq = seq
        self.friction = friction
        self.velocities = face_velocities(seq)

    def __len__(self):
        return len(self.seq)

    def at(self, frame: int, s: float) -> ColliderFrame:
        frames = self.seq.frames
        if len(frames) == 1:
            x = frames[0]
            vel = self.velocities[0]
        else:
            x = frames[frame] if s == 0.0 else (1.0 - s) * frames[frame] + s * frames[frame + 1]
            vel = self.velocities[frame]
        return ColliderFrame.from_vertices(x, self.seq.faces, vel, self.friction)
