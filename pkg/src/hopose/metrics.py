"""Evaluation metrics: Chamfer errors in 3D and in the image, and collision volume."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SdfIndex, interpenetration_volume
from .model import PoseState, skin
from .render import Camera, project
from .rotations import euler_to_matrix_np

COLLISION_RESOLUTION = 32


def chamfer(a, b) -> float:
    """Mean nearest distance from a to b plus mean nearest distance from b to a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(d_ab.mean() + d_ba.mean())


def error_2d(pred, gt, camera: Camera) -> float:
    """Chamfer distance between projected point sets, in pixels."""
    uv_p, _, _ = project(camera, pred)
    uv_g, _, _ = project(camera, gt)
    return chamfer(uv_p, uv_g)


def object_points(local_vertices, state: PoseState) -> np.ndarray:
    return np.asarray(local_vertices) @ euler_to_matrix_np(state.obj_r).T + state.obj_t


@dataclass
class MetricsReport:
    err2d: list = field(default_factory=list)  # pixels
    err3d: list = field(default_factory=list)  # length unit
    collision: list = field(default_factory=list)  # length unit cubed
    ms_per_frame: list = field(default_factory=list)
    length_unit: str = "cm"
    px_to_unit: float | None = None  # optional pixel -> length conversion for err2d

    @property
    def n_frames(self) -> int:
        return len(self.err3d)

    def means(self) -> dict:
        def m(x):
            return float(np.mean(x)) if len(x) else 0.0

        out = {"err2d": m(self.err2d), "err3d": m(self.err3d), "collision": m(self.collision), "ms_per_frame": m(self.ms_per_frame)}
        if self.px_to_unit is not None:
            out["err2d_" + self.length_unit] = out["err2d"] * self.px_to_unit
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "err2d", "err3d", "collision", "ms_per_frame"])
            for k in range(self.n_frames):
                w.writerow([k, repr(self.err2d[k]), repr(self.err3d[k]), repr(self.collision[k]), repr(self.ms_per_frame[k])])


def evaluate_sequence(scene, pred_states, gt_states, ms_per_frame=None, collision: bool = True,
                      resolution: int = COLLISION_RESOLUTION, px_to_unit: float | None = None) -> MetricsReport:
    """Per-frame object errors against ground truth and hand-object collision volume."""
    if len(pred_states) != len(gt_states):
        raise ValueError("prediction and ground truth have different lengths")
    rep = MetricsReport(px_to_unit=px_to_unit)
    local = scene.object_mesh.vertices
    index: SdfIndex = scene.object_index
    for k, (p, g) in enumerate(zip(pred_states, gt_states)):
        vp, vg = object_points(local, p), object_points(local, g)
        rep.err3d.append(chamfer(vp, vg))
        rep.err2d.append(error_2d(vp, vg, scene.camera))
        if collision:
            hand = scene.model.mesh(skin(scene.model, p.theta, p.beta))
            # object-local frame so the prebuilt index can be reused
            R = euler_to_matrix_np(p.obj_r)
            rep.collision.append(interpenetration_volume(hand.transformed(R.T, -R.T @ p.obj_t), index, resolution))
        else:
            rep.collision.append(0.0)
        rep.ms_per_frame.append(0.0 if ms_per_frame is None else float(ms_per_frame[k]))
    return rep


def second_difference_energy(scene, states) -> float:
    """Sum over frames of the mean squared second difference of object vertices."""
    pts = [object_points(scene.object_mesh.vertices, s) for s in states]
    total = 0.0
    for k in range(2, len(pts)):
        d = pts[k] - 2.0 * pts[k - 1] + pts[k - 2]
        total += float((d * d).sum(-1).mean())
    return total
