"""Gravity-compensated rest geometry.

An observed cloth is already stretched by gravity. Each canonical edge is split
into its component along gravity and the orthogonal remainder, and the gravity
component is scaled by ``alpha``: ``e_rest = e_perp + alpha * e_g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateFaceError, MaterialFrames, TriMesh, frames_from_edges


@dataclass(frozen=True)
class RestShapeParam:
    alpha: float = 1.0
    gravity_dir: tuple = (0.0, -1.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        g = np.asarray(self.gravity_dir, dtype=np.float64)
        if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > 1e-12:
            raise ValueError(f"gravity_dir must be a unit 3-vector, got {self.gravity_dir}")

    @classmethod
    def from_gravity(cls, alpha, gravity):
        g = np.asarray(gravity, dtype=np.float64)
        n = np.linalg.norm(g)
        if n == 0:
            raise ValueError("gravity vector is zero; pass gravity_dir explicitly")
        return cls(alpha, tuple(g / n))


def decompose_edge(e, g_dir):
    """Split ``e`` (..., 3) into ``(e_g, e_perp)`` with ``e_g`` along ``g_dir``."""
    e = np.asarray(e, dtype=np.float64)
    g = np.asarray(g_dir, dtype=np.float64)
    e_g = (e @ g)[..., None] * g
    return e_g, e - e_g


def apply_rest_alpha(e, alpha, g_dir):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    e = np.asarray(e, dtype=np.float64)
    e_g, _ = decompose_edge(e, g_dir)
    # e - (1 - alpha) e_g == e_perp + alpha e_g, and is exactly e at alpha == 1
    return e - (1.0 - alpha) * e_g


def build_rest_state(canonical: TriMesh, param: RestShapeParam) -> MaterialFrames:
    v, f = canonical.vertices, canonical.faces
    g = np.asarray(param.gravity_dir, dtype=np.float64)
    e1 = apply_rest_alpha(v[f[:, 1]] - v[f[:, 0]], param.alpha, g)
    e2 = apply_rest_alpha(v[f[:, 2]] - v[f[:, 0]], param.alpha, g)
    try:
        return frames_from_edges(e1, e2)
    except DegenerateFaceError as exc:
        raise DegenerateFaceError(
            exc.faces, f"rest shape with alpha={param.alpha} collapses face(s) "
                       f"{exc.faces[:10].tolist()}") from None
