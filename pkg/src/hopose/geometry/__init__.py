from .mesh import MeshError, TriMesh, concatenate
from .objio import load_obj, save_obj
from .sdf import (
    DEFAULT_CONTACT_THRESHOLD,
    ContactQuery,
    SdfBatch,
    SdfIndex,
    build_sdf_index,
    closest_point_on_triangles,
    contains_parity,
    query_sdf,
    signed_distance_torch,
)
from .shapes import box, capsule, icosphere
from .volume import interpenetration_volume

__all__ = [
    "ContactQuery",
    "DEFAULT_CONTACT_THRESHOLD",
    "MeshError",
    "SdfBatch",
    "SdfIndex",
    "TriMesh",
    "box",
    "build_sdf_index",
    "capsule",
    "closest_point_on_triangles",
    "concatenate",
    "contains_parity",
    "icosphere",
    "interpenetration_volume",
    "load_obj",
    "query_sdf",
    "save_obj",
    "signed_distance_torch",
]
