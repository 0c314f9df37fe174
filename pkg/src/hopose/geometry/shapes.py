"""Closed primitive meshes used for synthetic scenes and tests."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def box(half_extents=(0.5, 0.5, 0.5), subdivisions: int = 1, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box, each side split into ``subdivisions``² quads."""
    h = np.asarray(half_extents, dtype=np.float64)
    n = int(subdivisions)
    if n < 1:
        raise ValueError("subdivisions must be >= 1")
    grid = np.linspace(-1.0, 1.0, n + 1)
    verts, faces = [], []
    key_to_index = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in key_to_index:
            key_to_index[key] = len(verts)
            verts.append(p)
        return key_to_index[key]

    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
            if sign < 0:
                u_ax, v_ax = v_ax, u_ax
            ids = np.empty((n + 1, n + 1), dtype=np.int64)
            for i, gu in enumerate(grid):
                for j, gv in enumerate(grid):
                    p = np.zeros(3)
                    p[axis] = sign
                    p[u_ax] = gu
                    p[v_ax] = gv
                    ids[i, j] = vid(p)
            for i in range(n):
                for j in range(n):
                    a, b, c, d = ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]
                    faces.append((a, b, c))
                    faces.append((a, c, d))
    v = np.array(verts) * h + np.asarray(center, dtype=np.float64)
    return TriMesh(v, faces)


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, faces)


def capsule(length: float, radius: float, n_around: int = 6, n_cap: int = 1, n_length: int = 1) -> TriMesh:
    """Capsule whose axis runs from the origin to (0, length, 0).

    ``n_length`` splits the cylindrical part into that many ring sections.
    Vertex 0 is the proximal pole at y = -radius and the last vertex is the
    distal pole at y = length + radius.
    """
    if n_around < 3 or n_cap < 1 or n_length < 1:
        raise ValueError("capsule needs n_around >= 3, n_cap >= 1 and n_length >= 1")
    ang = 2.0 * np.pi * np.arange(n_around) / n_around
    rings = []
    for k in range(1, n_cap + 1):
        phi = 0.5 * np.pi * k / n_cap
        rings.append((-radius * np.cos(phi), radius * np.sin(phi)))
    for k in range(1, n_length):
        rings.append((length * k / n_length, radius))
    for k in range(n_cap, 0, -1):
        phi = 0.5 * np.pi * k / n_cap
        rings.append((length + radius * np.cos(phi), radius * np.sin(phi)))

    verts = [np.array([0.0, -radius, 0.0])]
    for y, rr in rings:
        for a in ang:
            verts.append(np.array([rr * np.cos(a), y, rr * np.sin(a)]))
    verts.append(np.array([0.0, length + radius, 0.0]))
    top = len(verts) - 1

    def ring_id(r, i):
        return 1 + r * n_around + (i % n_around)

    faces = []
    for i in range(n_around):
        faces.append((0, ring_id(0, i), ring_id(0, i + 1)))
    for r in range(len(rings) - 1):
        for i in range(n_around):
            a, b = ring_id(r, i), ring_id(r, i + 1)
            c, d = ring_id(r + 1, i + 1), ring_id(r + 1, i)
            faces.append((a, d, c))
            faces.append((a, c, b))
    last = len(rings) - 1
    for i in range(n_around):
        faces.append((top, ring_id(last, i + 1), ring_id(last, i)))
    return TriMesh(np.array(verts), faces)
