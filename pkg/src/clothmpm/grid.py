"""Eulerian background grid and quadratic B-spline weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(RuntimeError):
    """A particle or collider face left the simulation domain."""


@dataclass(frozen=True)
class GridSpec:
    lo: np.ndarray
    h: float
    dims: np.ndarray
    boundary: int = 3

    @classmethod
    def from_bounds(cls, lo, hi, resolution, boundary=3):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        extent = hi - lo
        if np.any(extent <= 0):
            raise ValueError(f"domain box must have positive extent, got {lo} .. {hi}")
        if resolution < 8:
            raise ValueError(f"grid resolution must be >= 8, got {resolution}")
        h = float(extent.max()) / resolution
        dims = np.array([int(math.ceil(e / h - 1e-9)) + 1 for e in extent], dtype=np.int64)
        return cls(lo, h, dims, boundary)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def hi(self):
        return self.lo + (self.dims - 1) * self.h

    def flat(self, ijk):
        ijk = np.asarray(ijk, dtype=np.int64)
        return (ijk[..., 0] * self.dims[1] + ijk[..., 1]) * self.dims[2] + ijk[..., 2]

    def unflat(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        ny, nz = self.dims[1], self.dims[2]
        return np.stack([idx // (ny * nz), (idx // nz) % ny, idx % nz], axis=-1)

    def node_position(self, idx):
        return self.lo + self.unflat(idx) * self.h

    def inside(self, x) -> np.ndarray:
        """Positions whose full 3x3x3 stencil lies on the grid."""
        g = (np.asarray(x) - self.lo) / self.h
        return np.all((g >= 0.5) & (g < self.dims - 1.5), axis=-1)

    def clamp(self, x):
        """Clamp positions into the stencil-valid region with a quarter-cell margin."""
        lo = self.lo + 0.75 * self.h
        hi = self.lo + (self.dims - 1.75) * self.h
        return np.clip(x, lo, hi)


class BackgroundGrid:
    """Dense node arrays plus the list of nodes touched this substep.

    Only touched nodes are cleared between substeps, so per-substep cost scales
    with the particle count rather than the node count.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        n = spec.n_nodes
        self.mass = np.zeros(n)
        self.momentum = np.zeros((n, 3))
        self.velocity = np.zeros((n, 3))
        self.touched = np.zeros(n, dtype=np.int8)
        self.active = np.zeros(0, dtype=np.int64)
        self.n_active = 0
        self._slot = None

    @property
    def h(self):
        return self.spec.h

    @property
    def slot(self):
        if self._slot is None:
            self._slot = np.full(self.spec.n_nodes, -1, dtype=np.int64)
        return self._slot

    def reserve(self, n_particles):
        need = min(27 * n_particles, self.spec.n_nodes)
        if self.active.size < need:
            grown = np.zeros(need, dtype=np.int64)
            grown[: self.n_active] = self.active[: self.n_active]
            self.active = grown

    def clear(self):
        from ._kernels import clear_nodes
        clear_nodes(self.active, self.n_active, self.touched, self.mass, self.momentum,
                    self.velocity)
        self.n_active = 0

    def active_nodes(self):
        return self.active[: self.n_active]

    def total_mass(self):
        return float(self.mass[self.active_nodes()].sum())

    def total_momentum(self):
        return self.momentum[self.active_nodes()].sum(axis=0)


def bspline_1d(fx):
    """Quadratic B-spline weights at offset ``fx`` in [0.5, 1.5) from the base node."""
    return np.array([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2])


def bspline_weights(pos, grid):
    """List of 27 ``((i, j, k), weight)`` pairs for a position.

    ``grid`` may be a :class:`BackgroundGrid` or a :class:`GridSpec`.
    """
    spec = grid.spec if isinstance(grid, BackgroundGrid) else grid
    pos = np.asarray(pos, dtype=np.float64)
    if not spec.inside(pos):
        raise DomainError(f"position {pos.tolist()} outside the grid stencil region")
    g = (pos - spec.lo) / spec.h
    base = np.floor(g - 0.5).astype(np.int64)
    w = [bspline_1d(g[a] - base[a]) for a in range(3)]
    out = []
    for i in range(3):
        for j in range(3):
            for k in range(3):
                out.append(((int(base[0] + i), int(base[1] + j), int(base[2] + k)),
                            float(w[0][i] * w[1][j] * w[2][k])))
    return out
