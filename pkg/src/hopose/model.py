"""Linear-blend-skinned articulated model, pose state and vertex selectors.

Pose vector layout for a model with J joints (``theta_dim = 3 * J + 6``)::

    theta[0 : 3J]        per-joint axis-angle rotations (joint 0 is the root)
    theta[3J : 3J + 3]   global axis-angle rotation about the model origin
    theta[3J + 3 :]      global translation
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .geometry import TriMesh, box, capsule, concatenate
from .rotations import axis_angle_to_matrix, euler_to_matrix_np, euler_xyz_to_matrix, wrap_angle


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SkinnedModel:
    rest_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    parents: np.ndarray  # (J,), parents[0] == -1
    joint_offsets: np.ndarray  # (J, 3) rest translation relative to the parent joint
    weights: np.ndarray  # (V, J) dense skinning weights
    shape_dirs: np.ndarray | None = None  # (V, 3, B)
    selectors: dict = field(default_factory=dict)

    def __post_init__(self):
        V = len(self.rest_vertices)
        J = len(self.parents)
        if self.parents[0] != -1:
            raise ModelError("joint 0 must be the root (parent -1)")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise ModelError(f"joint {j}: parent {self.parents[j]} must precede it")
        if self.weights.shape != (V, J):
            raise ModelError(f"weights shape {self.weights.shape} != {(V, J)}")
        if np.any(self.weights < 0):
            raise ModelError("negative skinning weights")
        if np.any(np.abs(self.weights.sum(axis=1) - 1.0) > 1e-9):
            raise ModelError("skinning weight rows must sum to 1")
        if self.shape_dirs is not None and self.shape_dirs.shape[:2] != (V, 3):
            raise ModelError("shape_dirs must be (V, 3, B)")
        for name, idx in self.selectors.items():
            VertexSelector(idx, n_vertices=V)

    @property
    def n_vertices(self) -> int:
        return len(self.rest_vertices)

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_betas(self) -> int:
        return 0 if self.shape_dirs is None else self.shape_dirs.shape[2]

    @property
    def theta_dim(self) -> int:
        return 3 * self.n_joints + 6

    @property
    def joint_positions(self) -> np.ndarray:
        pos = np.zeros((self.n_joints, 3))
        for j in range(self.n_joints):
            p = self.parents[j]
            pos[j] = self.joint_offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos

    def selector(self, name: str) -> "VertexSelector":
        return VertexSelector(self.selectors[name], n_vertices=self.n_vertices)

    def mesh(self, vertices=None) -> TriMesh:
        return TriMesh(self.rest_vertices if vertices is None else vertices, self.faces)

    # torch constants are cached per instance; the model itself never changes
    def _tensors(self):
        cache = self.__dict__.get("_torch_cache")
        if cache is None:
            cache = dict(
                rest=torch.tensor(self.rest_vertices),
                weights=torch.tensor(self.weights),
                joints=torch.tensor(self.joint_positions),
                offsets=torch.tensor(self.joint_offsets),
                shape_dirs=None if self.shape_dirs is None else torch.tensor(self.shape_dirs),
            )
            object.__setattr__(self, "_torch_cache", cache)
        return cache


@dataclass(frozen=True)
class VertexSelector:
    indices: np.ndarray
    n_vertices: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(np.unique(idx)) != len(idx):
            raise ModelError("selector indices must be unique")
        if len(idx) and idx.min() < 0:
            raise ModelError("negative selector index")
        if self.n_vertices is not None and len(idx) and idx.max() >= self.n_vertices:
            raise ModelError(f"selector index {idx.max()} out of range for {self.n_vertices} vertices")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)


def select(vertices, selector: VertexSelector):
    """Rows of ``vertices`` in selector order (works for numpy and torch)."""
    n = vertices.shape[0]
    idx = selector.indices
    if len(idx) and idx.max() >= n:
        raise ModelError(f"selector index {idx.max()} out of range for {n} vertices")
    if isinstance(vertices, torch.Tensor):
        return vertices[torch.from_numpy(idx)]
    return np.asarray(vertices)[idx]


@dataclass(frozen=True)
class PoseState:
    theta: np.ndarray
    beta: np.ndarray
    obj_r: np.ndarray
    obj_t: np.ndarray

    def __post_init__(self):
        for name in ("theta", "beta", "obj_r", "obj_t"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"PoseState.{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.obj_r.shape != (3,) or self.obj_t.shape != (3,):
            raise ModelError("object rotation and translation must have 3 entries")
        object.__setattr__(self, "obj_r", wrap_angle(self.obj_r))

    @classmethod
    def zeros(cls, model: SkinnedModel) -> "PoseState":
        return cls(np.zeros(model.theta_dim), np.zeros(model.n_betas), np.zeros(3), np.zeros(3))

    def replace(self, **kw) -> "PoseState":
        d = dict(theta=self.theta, beta=self.beta, obj_r=self.obj_r, obj_t=self.obj_t)
        d.update(kw)
        return PoseState(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("theta", "beta", "obj_r", "obj_t")}

    @classmethod
    def from_dict(cls, d) -> "PoseState":
        return cls(d["theta"], d.get("beta", []), d["obj_r"], d["obj_t"])

    def equals(self, other: "PoseState") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("theta", "beta", "obj_r", "obj_t"))


def skin_torch(model: SkinnedModel, theta: torch.Tensor, beta: torch.Tensor | None = None) -> torch.Tensor:
    J = model.n_joints
    if theta.shape[-1] != model.theta_dim:
        raise ModelError(f"theta has {theta.shape[-1]} entries, expected {model.theta_dim}")
    c = model._tensors()
    v = c["rest"]
    if model.n_betas:
        if beta is None or beta.shape[-1] != model.n_betas:
            raise ModelError(f"beta must have {model.n_betas} entries")
        v = v + c["shape_dirs"] @ beta
    elif beta is not None and beta.numel() != 0:
        raise ModelError("model has no shape space but beta was given")

    local = axis_angle_to_matrix(theta[: 3 * J].reshape(J, 3))
    g_rot, g_trans = [], []
    for j in range(J):
        p = int(model.parents[j])
        if p < 0:
            g_rot.append(local[j])
            g_trans.append(c["offsets"][j])
        else:
            g_rot.append(g_rot[p] @ local[j])
            g_trans.append(g_rot[p] @ c["offsets"][j] + g_trans[p])
    G = torch.stack(g_rot)  # (J, 3, 3)
    t = torch.stack(g_trans) - (G @ c["joints"][:, :, None])[..., 0]
    T = torch.cat([G, t[:, :, None]], dim=2).reshape(J, 12)
    blended = (c["weights"] @ T).reshape(-1, 3, 4)
    posed = (blended[:, :, :3] @ v[:, :, None])[..., 0] + blended[:, :, 3]

    rg = axis_angle_to_matrix(theta[3 * J: 3 * J + 3])
    return posed @ rg.T + theta[3 * J + 3:]


def skin(model: SkinnedModel, theta, beta=None):
    """Posed vertices ``m(theta, beta)``.

    Returns a torch tensor when ``theta`` is a tensor, otherwise a numpy array.
    """
    if isinstance(theta, torch.Tensor):
        b = beta if beta is None or isinstance(beta, torch.Tensor) else torch.as_tensor(np.asarray(beta, dtype=np.float64))
        return skin_torch(model, theta, b)
    th = torch.as_tensor(np.asarray(theta, dtype=np.float64))
    b = None if beta is None else torch.as_tensor(np.asarray(beta, dtype=np.float64))
    with torch.no_grad():
        return skin_torch(model, th, b).numpy()


def apply_object_pose(mesh: TriMesh, obj_r, obj_t) -> TriMesh:
    return mesh.transformed(euler_to_matrix_np(obj_r), np.asarray(obj_t, dtype=np.float64))


def object_vertices_torch(local_vertices: torch.Tensor, obj_r: torch.Tensor, obj_t: torch.Tensor) -> torch.Tensor:
    return local_vertices @ euler_xyz_to_matrix(obj_r).T + obj_t


# ---------------------------------------------------------------------------
# model file (JSON)

def model_to_json(model: SkinnedModel) -> dict:
    weights = []
    for row in model.weights:
        nz = np.nonzero(row)[0]
        weights.append([[int(j), float(row[j])] for j in nz])
    d = {
        "vertices": model.rest_vertices.tolist(),
        "faces": model.faces.tolist(),
        "joints": [
            {"parent": int(p), "rest_translation": o.tolist()}
            for p, o in zip(model.parents, model.joint_offsets)
        ],
        "weights": weights,
        "selectors": {k: np.asarray(v).tolist() for k, v in model.selectors.items()},
    }
    if model.shape_dirs is not None:
        d["shape_dirs"] = model.shape_dirs.tolist()
    return d


def model_from_json(d: dict) -> SkinnedModel:
    try:
        verts = np.array(d["vertices"], dtype=np.float64).reshape(-1, 3)
        faces = np.array(d["faces"], dtype=np.int64).reshape(-1, 3)
        parents = np.array([j["parent"] for j in d["joints"]], dtype=np.int64)
        offsets = np.array([j["rest_translation"] for j in d["joints"]], dtype=np.float64).reshape(-1, 3)
        W = np.zeros((len(verts), len(parents)))
        if len(d["weights"]) != len(verts):
            raise ModelError("one weight list per vertex required")
        for i, row in enumerate(d["weights"]):
            for j, w in row:
                W[i, int(j)] += float(w)
        sd = d.get("shape_dirs")
        shape_dirs = None if sd is None else np.array(sd, dtype=np.float64).reshape(len(verts), 3, -1)
        selectors = {k: np.array(v, dtype=np.int64) for k, v in d.get("selectors", {}).items()}
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model file: {exc!r}") from exc
    return SkinnedModel(verts, faces, parents, offsets, W, shape_dirs, selectors)


def load_model(path) -> SkinnedModel:
    return model_from_json(json.loads(Path(path).read_text()))


def save_model(model: SkinnedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)))


# ---------------------------------------------------------------------------
# synthetic toy hand

PALM_HALF = np.array([4.0, 4.0, 1.0])
FINGER_RADIUS = 0.75
FINGER_SECTIONS = 2  # ring sections along each capsule
_FINGER_LENGTHS = np.array([2.3, 2.7, 2.9, 2.7, 2.2])
_SEGMENT_SCALE = np.array([1.0, 0.8, 0.65, 0.55, 0.5])


def make_toy_hand(segments_per_finger: int = 3, n_fingers: int = 5, n_betas: int = 10) -> SkinnedModel:
    """Box palm with capsule finger segments, rigidly skinned (weights 0/1).

    Units are centimetres. The palm is centred on the root joint at the
    origin and its +z face is the grasping side. With two or more fingers the
    first one is a thumb on the -y edge pointing along -y (it curls towards
    +z for negative bends about x); the others sit in a row on the +y edge and
    point along +y (positive bends curl them towards +z). Every part is a
    separate closed mesh.
    """
    if segments_per_finger < 1 or n_fingers < 1:
        raise ModelError("counts must be >= 1")
    palm = box(PALM_HALF, subdivisions=3)
    parts = [palm]
    part_joint = [0]
    parents = [-1]
    offsets = [np.zeros(3)]
    tips = []
    base_y = PALM_HALF[1] - 0.3
    if n_fingers == 1:
        roots = [(np.array([0.0, base_y, 0.0]), 1.0)]
    else:
        roots = [(np.array([0.0, -base_y, 0.0]), -1.0)]
        roots += [(np.array([x, base_y, 0.0]), 1.0) for x in np.linspace(-3.0, 3.0, n_fingers - 1)]
    # a half turn about z points a segment along -y and keeps its winding
    flip = np.diag([-1.0, -1.0, 1.0])
    n_verts = len(palm.vertices)
    for f, (pivot, direction) in enumerate(roots):
        base_len = _FINGER_LENGTHS[f % len(_FINGER_LENGTHS)]
        parent = 0
        parent_pos = np.zeros(3)
        for s in range(segments_per_finger):
            length = base_len * _SEGMENT_SCALE[min(s, len(_SEGMENT_SCALE) - 1)]
            seg = capsule(length, FINGER_RADIUS, n_around=6, n_cap=1, n_length=FINGER_SECTIONS)
            sv = seg.vertices if direction > 0 else seg.vertices @ flip.T
            parts.append(TriMesh(sv + pivot, seg.faces))
            j = len(parents)
            parents.append(parent)
            offsets.append(pivot - parent_pos)
            part_joint.append(j)
            n_verts += len(seg.vertices)
            parent, parent_pos = j, pivot
            pivot = pivot + np.array([0.0, direction * length, 0.0])
        tips.append(n_verts - 1)  # distal pole of the last segment
    mesh = concatenate(parts)
    V, J = len(mesh.vertices), len(parents)
    W = np.zeros((V, J))
    part_of_vertex = np.concatenate([np.full(len(p.vertices), k) for k, p in enumerate(parts)])
    W[np.arange(V), np.array(part_joint)[part_of_vertex]] = 1.0

    shape_dirs = _toy_shape_dirs(mesh.vertices, part_of_vertex, np.array(part_joint), np.array(offsets), parents, n_betas)
    top_face = np.nonzero((part_of_vertex == 0) & np.isclose(mesh.vertices[:, 2], PALM_HALF[2]))[0]
    selectors = {
        "fingertips": np.array(tips),
        "contact_candidates": np.concatenate([top_face, tips]),
    }
    return SkinnedModel(mesh.vertices, mesh.faces, np.array(parents), np.array(offsets), W, shape_dirs, selectors)


def _toy_shape_dirs(verts, part_of_vertex, part_joint, offsets, parents, n_betas):
    """Deterministic stand-in shape space: finger thickness and palm proportions."""
    if n_betas == 0:
        return None
    V = len(verts)
    joints = np.zeros((len(parents), 3))
    for j, p in enumerate(parents):
        joints[j] = offsets[j] + (joints[p] if p >= 0 else 0.0)
    radial = np.zeros((V, 3))
    finger_of_vertex = -np.ones(V, dtype=np.int64)
    n_seg_parts = len(part_joint) - 1
    for k in range(1, n_seg_parts + 1):
        m = part_of_vertex == k
        axis_pt = joints[part_joint[k]]
        r = verts[m] - axis_pt
        r[:, 1] = 0.0
        radial[m] = r / FINGER_RADIUS
        # walk up to the first segment of this finger
        j = part_joint[k]
        while parents[j] != 0:
            j = parents[j]
        finger_of_vertex[m] = j
    first_segments = sorted(set(finger_of_vertex[finger_of_vertex >= 0].tolist()))
    palm = part_of_vertex == 0
    dirs = []
    for b in range(n_betas):
        d = np.zeros((V, 3))
        if b < 5:
            if b < len(first_segments):
                m = finger_of_vertex == first_segments[b]
                d[m] = 0.1 * radial[m]
        elif b == 5:
            d[palm, 0] = 0.05 * verts[palm, 0]
        elif b == 6:
            d[palm, 2] = 0.1 * verts[palm, 2]
        elif b == 7:
            d[palm, 1] = 0.05 * verts[palm, 1]
        elif b == 8:
            d = 0.05 * radial
        else:
            d[palm, 2] = 0.05 * np.sign(verts[palm, 2]) * (1.0 - (verts[palm, 0] / PALM_HALF[0]) ** 2)
        dirs.append(d)
    return np.stack(dirs, axis=2)
