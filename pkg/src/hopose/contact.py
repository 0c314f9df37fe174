"""Per-vertex contact values and pose refinement towards a target contact map.

Contact value of a hand vertex at signed distance ``s`` millimetres from the
object: ``min(1/s, 1)``, so anything within 1 mm (or inside) counts as full
contact. Refinement descends a smooth surrogate ``sigmoid((1 - s) / tau)``
because ``1/s`` has a kink at 1 mm and a pole at 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .geometry import SdfIndex, signed_distance_torch
from .grad import pack, split_tensor, unpack
from .model import PoseState, SkinnedModel, skin_torch
from .optimize import FrameTrace, OptimConfig, minimize
from .rotations import euler_xyz_to_matrix

SURROGATE_TAU_MM = 0.25
NORMAL_WEIGHT = 0.1


@dataclass
class ContactMap:
    values: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if np.any(self.values < 0.0) or np.any(self.values > 1.0) or not np.all(np.isfinite(self.values)):
            raise ValueError("contact values must lie in [0, 1]")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.values):
                raise ValueError("one normal per contact value is required")

    def __len__(self):
        return len(self.values)

    def in_contact(self, level: float = 0.5) -> np.ndarray:
        return np.flatnonzero(self.values >= level)

    def to_json(self) -> dict:
        d = {"values": self.values.tolist()}
        if self.normals is not None:
            d["normals"] = self.normals.tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ContactMap":
        return cls(d["values"], d.get("normals"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "ContactMap":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def co_from_mm(s_mm) -> np.ndarray:
    """``min(1/s, 1)`` with ``s <= 1`` (including negative) mapped to 1."""
    s = np.asarray(s_mm, dtype=np.float64)
    out = np.ones_like(s)
    far = s > 1.0
    out[far] = 1.0 / s[far]
    return out


def _to_local(points, obj_r, obj_t):
    if obj_r is None:
        return points, None
    R = euler_xyz_to_matrix(obj_r)
    return (points - obj_t) @ R, R


def contact_values(hand_vertices, index: SdfIndex, unit_scale: float, obj_r=None, obj_t=None) -> ContactMap:
    """Contact map of hand vertices against an object.

    ``unit_scale`` is model units per millimetre. Without an object pose the
    vertices are taken to be in the index's frame. Normals are the object's
    outward normals at the closest points, in the frame of ``hand_vertices``.
    """
    if not unit_scale > 0:
        raise ValueError("unit_scale must be positive")
    pts = np.asarray(hand_vertices, dtype=np.float64).reshape(-1, 3)
    if obj_r is not None:
        R = euler_xyz_to_matrix(torch.as_tensor(np.asarray(obj_r, dtype=np.float64))).numpy()
        local = (pts - np.asarray(obj_t, dtype=np.float64)) @ R
    else:
        R, local = np.eye(3), pts
    res = index.query_many(local)
    return ContactMap(co_from_mm(res.distance / unit_scale), res.normal @ R.T)


def surrogate_co(s_mm: torch.Tensor, tau: float = SURROGATE_TAU_MM) -> torch.Tensor:
    return torch.sigmoid((1.0 - s_mm) / tau)


@dataclass(frozen=True)
class ContactProblem:
    model: SkinnedModel
    index: SdfIndex
    unit_scale: float
    penetration_weight: float = 1e-3
    normal_weight: float = NORMAL_WEIGHT
    tau: float = SURROGATE_TAU_MM


def contact_objective(problem: ContactProblem, target: ContactMap, layout):
    """Loss over the packed pose vector: surrogate contact mismatch, penetration and normals."""
    if len(target) != problem.model.n_vertices:
        raise ValueError(f"target has {len(target)} values, the model has {problem.model.n_vertices} vertices")
    # compare in surrogate space at the distance each target value implies (s = 1/CO);
    # full-contact targets only say s <= 1 mm, so being deeper is not a mismatch
    vals = target.values
    with np.errstate(divide="ignore"):
        s_t = np.where(vals > 0, 1.0 / np.maximum(vals, 1e-300), np.inf)
    sur_t = surrogate_co(torch.as_tensor(s_t), problem.tau)
    full = torch.as_tensor(vals >= 1.0)
    use_normals = target.normals is not None and problem.normal_weight > 0
    if use_normals:
        sel = torch.from_numpy(target.in_contact())
        n_t = torch.as_tensor(target.normals)[sel]

    def objective(x):
        p = split_tensor(layout, x)
        hand = skin_torch(problem.model, p["theta"], p["beta"])
        local, R = _to_local(hand, p["obj_r"], p["obj_t"])
        s = signed_distance_torch(problem.index, local)
        r = surrogate_co(s / problem.unit_scale, problem.tau) - sur_t
        r = torch.where(full, torch.clamp(r, max=0.0), r)
        co_term = (r * r).mean()
        pen = torch.relu(-s).sum()
        terms = {"contact": co_term, "penetration": pen}
        total = co_term + problem.penetration_weight * pen
        if use_normals and len(sel):
            res = problem.index.query_many(local.detach().numpy()[sel.numpy()])
            n = torch.as_tensor(res.normal) @ R.T
            # closest features flip inside the object; fade the term out there
            outside = torch.sigmoid(s[sel] / problem.unit_scale / problem.tau)
            nt = (outside * (1.0 - (n * n_t).sum(-1))).mean()
            terms["normals"] = nt
            total = total + problem.normal_weight * nt
        return total, terms

    return objective


def refine_to_contact(problem: ContactProblem, init: PoseState, target: ContactMap,
                      config: OptimConfig) -> tuple[PoseState, FrameTrace]:
    """Move the pose so its contact map approaches ``target``; returns the best iterate."""
    params = pack(init, frozen=config.frozen)
    objective = contact_objective(problem, target, params.layout)
    if config.iterations == 0:
        return init, FrameTrace()
    best, trace = minimize(objective, params, config)
    state = unpack(best)
    return (init if state.equals(init) else state), trace


def contact_recall(achieved: ContactMap, target: ContactMap, target_level: float = 1.0, level: float = 0.5) -> float:
    """Fraction of target in-contact vertices (``CO >= target_level``) whose achieved CO is ``>= level``."""
    idx = np.flatnonzero(target.values >= target_level)
    if len(idx) == 0:
        return 1.0
    return float(np.mean(achieved.values[idx] >= level))
