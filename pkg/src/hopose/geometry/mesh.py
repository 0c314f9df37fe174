"""Triangle meshes with derived normals, areas and topology checks."""

from __future__ import annotations

from collections import Counter

import numpy as np

MIN_FACE_AREA = 1e-12


class MeshError(ValueError):
    pass


class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : (V, 3) array_like
    faces : (F, 3) array_like of int
        Counter-clockwise winding seen from outside for closed meshes.
    """

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        cross = np.cross(b - a, c - a)
        dbl_area = np.linalg.norm(cross, axis=1)
        bad = np.nonzero(0.5 * dbl_area <= MIN_FACE_AREA)[0]
        if len(bad):
            raise MeshError(f"degenerate faces (area <= {MIN_FACE_AREA}): {bad[:10].tolist()}")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.faces = f
        self.face_areas = 0.5 * dbl_area
        self.face_normals = cross / dbl_area[:, None]
        self.face_areas.setflags(write=False)
        self.face_normals.setflags(write=False)
        self._watertight = None

    def __repr__(self):
        return f"TriMesh(V={len(self.vertices)}, F={len(self.faces)}, watertight={self.watertight})"

    @property
    def watertight(self) -> bool:
        """Every undirected edge is shared by exactly two faces with opposite directions."""
        if self._watertight is None:
            self._watertight = _check_watertight(self.faces)
        return self._watertight

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def transformed(self, rotation, translation) -> "TriMesh":
        R = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        return TriMesh(self.vertices @ R.T + t, self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    def components(self) -> list["TriMesh"]:
        """Split into vertex-connected components (vertex order preserved)."""
        labels = _component_labels(len(self.vertices), self.faces)
        face_label = labels[self.faces[:, 0]]
        out = []
        for lab in np.unique(face_label):
            fsel = self.faces[face_label == lab]
            used = np.unique(fsel)
            remap = -np.ones(len(self.vertices), dtype=np.int64)
            remap[used] = np.arange(len(used))
            out.append(TriMesh(self.vertices[used], remap[fsel]))
        return out

    def volume(self) -> float:
        """Enclosed volume by the divergence theorem (closed meshes only)."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _check_watertight(faces: np.ndarray) -> bool:
    if len(faces) == 0:
        return False
    directed = Counter()
    for a, b, c in faces.tolist():
        for e in ((a, b), (b, c), (c, a)):
            directed[e] += 1
    for (a, b), n in directed.items():
        if n != 1 or directed.get((b, a), 0) != 1:
            return False
    return True


def _component_labels(n_vertices: int, faces: np.ndarray) -> np.ndarray:
    parent = np.arange(n_vertices)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b, c in faces.tolist():
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[find(rc)] = ra
    return np.array([find(i) for i in range(n_vertices)])


def concatenate(meshes) -> TriMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))
