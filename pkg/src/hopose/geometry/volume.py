"""Voxel estimate of the volume shared by two closed meshes."""

from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriMesh
from .sdf import SdfIndex

DEFAULT_RESOLUTION = 64


def interpenetration_volume(hand_mesh: TriMesh, object_index: SdfIndex, resolution: int = DEFAULT_RESOLUTION) -> float:
    """Volume inside both meshes, counted on a regular grid of voxel centers.

    The grid spans the intersection of the two bounding boxes with
    ``resolution`` voxels along its longest side. A hand made of several
    closed parts is treated as the union of those parts.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    if not hand_mesh.watertight or not object_index.signed:
        raise MeshError("interpenetration volume needs watertight meshes")
    lo = np.maximum(hand_mesh.bounds[0], object_index.mesh.bounds[0])
    hi = np.minimum(hand_mesh.bounds[1], object_index.mesh.bounds[1])
    extent = hi - lo
    if np.any(extent <= 0):
        return 0.0
    h = extent.max() / resolution
    counts = np.maximum(np.ceil(extent / h - 1e-9).astype(int), 1)
    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * h for k in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    inside = object_index.query_many(centers).distance < 0
    cand = centers[inside]
    hit = np.zeros(len(cand), dtype=bool)
    for part in hand_mesh.components():
        lo_p, hi_p = part.bounds
        pending = ~hit & np.all((cand >= lo_p) & (cand <= hi_p), axis=1)
        if not np.any(pending):
            continue
        hit[pending] = SdfIndex(part).query_many(cand[pending]).distance < 0
    return float(np.count_nonzero(hit) * h ** 3)
