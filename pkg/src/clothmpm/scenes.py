"""Procedural test geometry: cloth patches and icospheres."""

import numpy as np

from .geometry import MeshSequence, TriMesh


def cloth_patch(nx=10, ny=10, width=1.0, height=1.0, origin=(0.0, 0.0, 0.0), plane="xz"):
    """Regular triangulated patch of ``nx * ny`` vertices.

    ``plane="xz"`` lies horizontally (normal +y); ``plane="xy"`` hangs
    vertically, with row 0 at the top (largest y).
    """
    u = np.linspace(0.0, width, nx)
    w = np.linspace(0.0, height, ny)
    uu, ww = np.meshgrid(u, w, indexing="xy")
    uu, ww = uu.ravel(), ww.ravel()
    verts = np.zeros((nx * ny, 3))
    if plane == "xz":
        verts[:, 0], verts[:, 2] = uu, ww
    elif plane == "xy":
        verts[:, 0], verts[:, 1] = uu, -ww
    else:
        raise ValueError(f"unknown plane {plane!r}")
    verts += np.asarray(origin, dtype=np.float64)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            if plane == "xz":
                # counter-clockwise seen from +y
                faces += [(a, c, b), (b, c, d)]
            else:
                faces += [(a, b, c), (b, d, c)]
    return TriMesh(verts, np.array(faces))


def top_row(nx):
    """Vertex indices of row 0 of a patch built by :func:`cloth_patch`."""
    return list(range(nx))


def icosphere(radius=1.0, subdivisions=2, center=(0.0, 0.0, 0.0)):
    """Outward-oriented icosphere with ``20 * 4**subdivisions`` faces."""
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, np.array(faces))


def merge(*meshes):
    """Concatenate meshes into one (no welding)."""
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def translating_sequence(mesh, step, n_frames, frame_dt=0.04):
    step = np.asarray(step, dtype=np.float64)
    return MeshSequence(mesh.faces, tuple(mesh.vertices + i * step for i in range(n_frames)),
                        frame_dt)
