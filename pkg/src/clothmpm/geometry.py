"""Triangle meshes, mesh sequences, OBJ/PLY I/O and per-face frames."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
SINGULAR_DET = 1e-14


class MeshError(ValueError):
    """Raised for malformed or invalid mesh data."""


class DegenerateFaceError(MeshError):
    def __init__(self, faces, message=None):
        self.faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
        super().__init__(message or f"degenerate face(s): {self.faces[:10].tolist()}")


@dataclass(frozen=True)
class TriMesh:
    """Vertices (V, 3) float64 and faces (F, 3) int64, validated on construction."""

    vertices: np.ndarray
    faces: np.ndarray
    on_degenerate: str = field(default="raise", repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must have shape (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertices contain non-finite values")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.flatnonzero((f < 0).any(1) | (f >= len(v)).any(1))[0])
                raise MeshError(
                    f"face {bad} references vertex index out of range "
                    f"(indices {f[bad].tolist()}, vertex count {len(v)})"
                )
            rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if rep.any():
                raise DegenerateFaceError(np.flatnonzero(rep), "face(s) with repeated vertex indices: "
                                          f"{np.flatnonzero(rep)[:10].tolist()}")
            area = _face_areas(v, f)
            degenerate = area < DEGENERATE_AREA
            if degenerate.any():
                err = DegenerateFaceError(np.flatnonzero(degenerate))
                if self.on_degenerate == "raise":
                    raise err
                log.warning("%s", err)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> TriMesh:
        return TriMesh(vertices, self.faces, on_degenerate="warn")

    def total_area(self) -> float:
        return float(_face_areas(self.vertices, self.faces).sum())


def _face_areas(v, f):
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


@dataclass(frozen=True)
class MeshSequence:
    """Time-ordered vertex arrays over a shared face topology."""

    faces: np.ndarray
    frames: tuple
    frame_dt: float = 0.04

    def __post_init__(self):
        faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        frames = tuple(np.ascontiguousarray(x, dtype=np.float64) for x in self.frames)
        if self.frame_dt <= 0:
            raise MeshError(f"frame_dt must be positive, got {self.frame_dt}")
        if frames:
            nv = frames[0].shape
            for i, x in enumerate(frames):
                if x.shape != nv or x.ndim != 2 or x.shape[1] != 3:
                    raise MeshError(f"frame {i} has shape {x.shape}, expected {nv}")
            if faces.size and faces.max() >= nv[0]:
                raise MeshError("topology references vertices beyond frame vertex count")
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def mesh(self, i: int) -> TriMesh:
        return TriMesh(self.frames[i], self.faces, on_degenerate="warn")

    @property
    def n_vertices(self) -> int:
        return self.frames[0].shape[0] if self.frames else 0

    def as_array(self) -> np.ndarray:
        return np.stack(self.frames) if self.frames else np.zeros((0, 0, 3))

    @classmethod
    def static(cls, mesh: TriMesh, n_frames: int, frame_dt: float = 0.04) -> MeshSequence:
        return cls(mesh.faces, tuple(mesh.vertices.copy() for _ in range(n_frames)), frame_dt)


# ---------------------------------------------------------------- I/O

def load_mesh(path, on_degenerate: str = "raise") -> TriMesh:
    """Read a triangle mesh from a Wavefront OBJ file.

    Only ``v`` and ``f`` records are interpreted; everything else is ignored.
    Face tokens may use the ``i/t/n`` form; negative (relative) indices are
    resolved. Non-triangular faces are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return _load_ply(path, on_degenerate)
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    if len(idx) != 3:
                        raise MeshError(f"{path}:{lineno}: only triangular faces are supported "
                                        f"(got {len(idx)} vertices)")
                    nv = len(verts)
                    faces.append([i - 1 if i > 0 else nv + i for i in idx])
            except MeshError:
                raise
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: cannot parse {tag!r} record: {exc}") from exc
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3), on_degenerate=on_degenerate)


def _load_ply(path, on_degenerate):
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise MeshError(f"{path}: not a PLY file")
        nv = nf = 0
        fmt = None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[:2] == ["element", "vertex"]:
                nv = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                nf = int(parts[2])
            elif parts[0] == "end_header":
                break
        if fmt != "ascii":
            raise MeshError(f"{path}: only ASCII PLY is supported")
        verts = [list(map(float, fh.readline().split()[:3])) for _ in range(nv)]
        faces = []
        for _ in range(nf):
            parts = list(map(int, fh.readline().split()))
            if parts[0] != 3:
                raise MeshError(f"{path}: only triangular faces are supported")
            faces.append(parts[1:4])
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3),
                   on_degenerate=on_degenerate)


def save_mesh(path, vertices, faces) -> Path:
    """Write OBJ or PLY (chosen by suffix). Coordinates use 17 significant digits,
    so a write/read round trip reproduces float64 values exactly."""
    path = Path(path)
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    lines = []
    if path.suffix.lower() == ".ply":
        lines += ["ply", "format ascii 1.0", f"element vertex {len(vertices)}",
                  "property double x", "property double y", "property double z",
                  f"element face {len(faces)}", "property list uchar int vertex_indices",
                  "end_header"]
        lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
        lines += [f"3 {a} {b} {c}" for a, b, c in faces]
    else:
        lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _frame_number(p: Path):
    nums = re.findall(r"\d+", p.stem)
    return int(nums[-1]) if nums else -1


def load_sequence(path, frame_dt: float = 0.04) -> MeshSequence:
    """Load a mesh sequence.

    ``path`` is either a directory of numbered OBJ/PLY files (sorted by the last
    integer in the file name) or a manifest text file listing one mesh path per
    line (relative paths resolve against the manifest; ``#`` starts a comment;
    an optional ``frame_dt = <seconds>`` line overrides ``frame_dt``).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sequence path not found: {path}")
    if path.is_dir():
        files = sorted((p for p in path.iterdir() if p.suffix.lower() in (".obj", ".ply")),
                       key=_frame_number)
    else:
        files = []
        for raw in path.read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("frame_dt"):
                frame_dt = float(line.split("=", 1)[1])
                continue
            p = Path(line)
            files.append(p if p.is_absolute() else path.parent / p)
    if not files:
        raise MeshError(f"no mesh frames found at {path}")
    meshes = [load_mesh(f, on_degenerate="warn") for f in files]
    faces = meshes[0].faces
    for f, m in zip(files, meshes):
        if m.faces.shape != faces.shape or not np.array_equal(m.faces, faces):
            raise MeshError(f"topology of {f} differs from {files[0]}")
    return MeshSequence(faces, tuple(m.vertices for m in meshes), frame_dt)


def save_sequence(directory, seq: MeshSequence, fmt: str = "obj", stem: str = "frame") -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i, verts in enumerate(seq.frames):
        out.append(save_mesh(directory / f"{stem}_{i:04d}.{fmt}", verts, seq.faces))
    return out


# ---------------------------------------------------------------- frames

@dataclass(frozen=True)
class FaceFrames:
    """Per-face barycenters (F, 3), unit normals (F, 3) and areas (F,).

    ``degenerate`` flags faces whose area is below the degenerate epsilon; their
    normals are zero.
    """

    barycenter: np.ndarray
    normal: np.ndarray
    area: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return len(self.area)


def face_frames_from_arrays(vertices, faces) -> FaceFrames:
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    cr = np.cross(b - a, c - a)
    norm = np.linalg.norm(cr, axis=1)
    degenerate = 0.5 * norm < DEGENERATE_AREA
    safe = np.where(degenerate, 1.0, norm)
    normal = np.where(degenerate[:, None], 0.0, cr / safe[:, None])
    return FaceFrames((a + b + c) / 3.0, normal, 0.5 * norm, degenerate)


def face_frames(mesh: TriMesh) -> FaceFrames:
    return face_frames_from_arrays(mesh.vertices, mesh.faces)


@dataclass(frozen=True)
class MaterialFrames:
    """Rest material directions per face: ``D[f]`` has columns (b-a, c-a, n)."""

    D: np.ndarray
    D_inv: np.ndarray

    def __len__(self):
        return len(self.D)

    @property
    def rest_area(self) -> np.ndarray:
        # |det D| = |D1 x D2| because D3 is the unit normal of (D1, D2)
        return 0.5 * np.abs(np.linalg.det(self.D))


def frames_from_edges(e1, e2, what="face") -> MaterialFrames:
    """Build invertible material frames from two edge arrays of shape (F, 3)."""
    cr = np.cross(e1, e2)
    norm = np.linalg.norm(cr, axis=1)
    bad = 0.5 * norm < DEGENERATE_AREA
    if bad.any():
        raise DegenerateFaceError(np.flatnonzero(bad),
                                  f"singular material frame at {what}(s) "
                                  f"{np.flatnonzero(bad)[:10].tolist()} (collinear edges)")
    n = cr / norm[:, None]
    D = np.stack([e1, e2, n], axis=2)
    det = np.linalg.det(D)
    if np.any(np.abs(det) < SINGULAR_DET):
        bad = np.flatnonzero(np.abs(det) < SINGULAR_DET)
        raise DegenerateFaceError(bad, f"singular material frame at {what}(s) {bad[:10].tolist()}")
    D_inv = np.linalg.inv(D)
    return MaterialFrames(D, D_inv)


def material_frames(mesh: TriMesh) -> MaterialFrames:
    v, f = mesh.vertices, mesh.faces
    return frames_from_edges(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def unique_edges(faces) -> np.ndarray:
    """Sorted (E, 2) array of undirected edges, lower index first."""
    faces = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def edge_vectors(mesh: TriMesh):
    """Return ``(edges, vectors)``: unique edges (E, 2) and x[hi] - x[lo] (E, 3).

    The edge id is the row index.
    """
    edges = unique_edges(mesh.faces)
    return edges, mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
