"""Geometric evaluation: Chamfer distance, F-Score, signed distance, penetration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import MeshError, TriMesh, unique_edges


class OpenMeshWarning(UserWarning):
    """Signed distances against a non-closed mesh have unreliable signs."""


@dataclass(frozen=True)
class PointSampleSet:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("point set is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point set contains non-finite values")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def _as_points(s):
    return s.points if isinstance(s, PointSampleSet) else PointSampleSet(s).points


def sample_surface(mesh: TriMesh, n: int, seed: int = 0) -> PointSampleSet:
    """Area-weighted uniform samples on the mesh surface."""
    if n < 1:
        raise ValueError("n must be >= 1")
    v, f = mesh.vertices, mesh.faces
    area = 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    total = area.sum()
    if not total > 0:
        raise MeshError("cannot sample a mesh with zero total area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(f), size=n, p=area / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = v[f[idx, 0]], v[f[idx, 1]], v[f[idx, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointSampleSet(pts)


def nearest_distances(A, B):
    """Euclidean distance from every point of A to its nearest point in B."""
    d, _ = cKDTree(_as_points(B)).query(_as_points(A), k=1)
    return d


def chamfer_distance(A, B) -> float:
    """Symmetric mean of squared nearest-neighbour distances, halved:
    ``0.5 * mean_a d(a, B)^2 + 0.5 * mean_b d(b, A)^2``."""
    dab = nearest_distances(A, B)
    dba = nearest_distances(B, A)
    return 0.5 * float(np.mean(dab ** 2)) + 0.5 * float(np.mean(dba ** 2))


def precision_recall(A, B, tau):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    precision = float(np.mean(nearest_distances(A, B) < tau))
    recall = float(np.mean(nearest_distances(B, A) < tau))
    return precision, recall


def f_score(A, B, tau: float = 0.001) -> float:
    """F-Score in percent; a point counts as matched if its nearest neighbour is
    strictly closer than ``tau``."""
    p, r = precision_recall(A, B, tau)
    if p + r == 0:
        return 0.0
    return 200.0 * p * r / (p + r)


# ---------------------------------------------------------------- signed distance

def is_closed(mesh: TriMesh) -> bool:
    f = mesh.faces
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2)) and len(unique_edges(f)) > 0


def closest_point_distances(points, vertices, faces, chunk=4096):
    """Unsigned distance from each point to the triangle soup (closest-feature
    classification over Voronoi regions of each triangle)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    A = vertices[faces[:, 0]]
    B = vertices[faces[:, 1]]
    C = vertices[faces[:, 2]]
    out = np.empty(len(points))
    step = max(1, chunk * 64 // max(len(faces), 1))
    for s in range(0, len(points), step):
        p = points[s:s + step, None, :]
        out[s:s + step] = np.sqrt(_closest_sq(p, A, B, C).min(axis=1))
    return out


def _closest_sq(p, a, b, c):
    ab, ac = b - a, c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        q = a + ab * v[..., None] + ac * w[..., None]
        # edge regions
        t_ab = np.clip(d1 / (d1 - d3), 0, 1)
        t_ac = np.clip(d2 / (d2 - d6), 0, 1)
        t_bc = np.clip((d4 - d3) / ((d4 - d3) + (d5 - d6)), 0, 1)
    regions = [
        ((d1 <= 0) & (d2 <= 0), a + 0 * p),
        ((d3 >= 0) & (d4 <= d3), b + 0 * p),
        ((d6 >= 0) & (d5 <= d6), c + 0 * p),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * t_ab[..., None]),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * t_ac[..., None]),
        ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + (c - b) * t_bc[..., None]),
    ]
    done = np.zeros(q.shape[:-1], dtype=bool)
    for mask, val in regions:
        m = mask & ~done
        q = np.where(m[..., None], val, q)
        done |= m
    diff = p - q
    return (diff * diff).sum(-1)


def winding_numbers(points, vertices, faces, chunk=4096):
    """Generalized winding number of a closed oriented surface around each point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    step = max(1, chunk * 64 // max(len(faces), 1))
    for s in range(0, len(points), step):
        p = points[s:s + step, None, :]
        a = vertices[faces[:, 0]] - p
        b = vertices[faces[:, 1]] - p
        c = vertices[faces[:, 2]] - p
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = (a * np.cross(b, c)).sum(-1)
        den = la * lb * lc + (a * b).sum(-1) * lc + (b * c).sum(-1) * la + (c * a).sum(-1) * lb
        out[s:s + step] = np.arctan2(num, den).sum(axis=1) / (2.0 * np.pi)
    return out


def signed_distances(points, body: TriMesh):
    """Signed distance (negative inside) from each point to a closed mesh."""
    if not is_closed(body):
        warnings.warn("body mesh is not closed; inside/outside signs are unreliable",
                      OpenMeshWarning, stacklevel=2)
    d = closest_point_distances(points, body.vertices, body.faces)
    inside = np.abs(winding_numbers(points, body.vertices, body.faces)) > 0.5
    return np.where(inside, -d, d)


def signed_distance(point, body: TriMesh) -> float:
    return float(signed_distances(np.asarray(point, dtype=np.float64)[None], body)[0])


def penetration_depth(cloth: TriMesh, body: TriMesh) -> float:
    """Mean over cloth vertices of ``max(0, -signed_distance)``."""
    sd = signed_distances(cloth.vertices, body)
    return float(np.mean(np.maximum(0.0, -sd)))
