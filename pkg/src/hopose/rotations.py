"""Rotation parameterizations (torch for differentiable paths, numpy otherwise).

Object rotations use XYZ Euler angles, R = Rz(c) @ Ry(b) @ Rx(a), so the X
rotation is applied first. Joint rotations use axis-angle vectors.
"""

from __future__ import annotations

import math

import numpy as np
import torch

_SMALL_ANGLE2 = 1e-6


def wrap_angle(a):
    """Map angles to (-pi, pi]; values already in range are returned untouched."""
    a = np.asarray(a, dtype=np.float64)
    out = np.array(a)
    bad = (a <= -math.pi) | (a > math.pi)
    out[bad] = math.pi - np.mod(math.pi - a[bad], 2.0 * math.pi)
    return out


def axis_angle_to_matrix(w: torch.Tensor) -> torch.Tensor:
    """Rodrigues formula for (..., 3) rotation vectors, smooth through w = 0."""
    t2 = (w * w).sum(-1)
    small = t2 < _SMALL_ANGLE2
    t2s = torch.where(small, torch.ones_like(t2), t2)
    t = torch.sqrt(t2s)
    a = torch.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, torch.sin(t) / t)
    b = torch.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - torch.cos(t)) / t2s)
    zero = torch.zeros_like(w[..., 0])
    K = torch.stack(
        [
            torch.stack([zero, -w[..., 2], w[..., 1]], -1),
            torch.stack([w[..., 2], zero, -w[..., 0]], -1),
            torch.stack([-w[..., 1], w[..., 0], zero], -1),
        ],
        -2,
    )
    eye = torch.eye(3, dtype=w.dtype).expand(K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def euler_xyz_to_matrix(r: torch.Tensor) -> torch.Tensor:
    ca, cb, cc = torch.cos(r[..., 0]), torch.cos(r[..., 1]), torch.cos(r[..., 2])
    sa, sb, sc = torch.sin(r[..., 0]), torch.sin(r[..., 1]), torch.sin(r[..., 2])
    return torch.stack(
        [
            torch.stack([cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa], -1),
            torch.stack([sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa], -1),
            torch.stack([-sb, cb * sa, cb * ca], -1),
        ],
        -2,
    )


def euler_to_matrix_np(r) -> np.ndarray:
    return euler_xyz_to_matrix(torch.as_tensor(np.asarray(r, dtype=np.float64))).numpy()


def axis_angle_to_matrix_np(w) -> np.ndarray:
    return axis_angle_to_matrix(torch.as_tensor(np.asarray(w, dtype=np.float64))).numpy()


def matrix_to_euler_np(R) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix_np` (pitch in [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=np.float64)
    pitch = np.arcsin(np.clip(-R[..., 2, 0], -1.0, 1.0))
    roll = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    yaw = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return wrap_angle(np.stack([roll, pitch, yaw], -1))


def matrix_to_euler(R: torch.Tensor) -> torch.Tensor:
    """Differentiable version of :func:`matrix_to_euler_np` (singular at gimbal lock)."""
    pitch = torch.asin(torch.clamp(-R[..., 2, 0], -1.0, 1.0))
    roll = torch.atan2(R[..., 2, 1], R[..., 2, 2])
    yaw = torch.atan2(R[..., 1, 0], R[..., 0, 0])
    return torch.stack([roll, pitch, yaw], -1)


def near_gimbal_lock(r, tol: float = 1e-6) -> bool:
    return bool(abs(abs(float(np.asarray(r)[1])) - math.pi / 2) < tol)


def matrix_to_axis_angle_np(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    ang = math.acos(cos)
    if ang < 1e-12:
        return np.zeros(3)
    if math.pi - ang < 1e-6:
        # axis from the symmetric part
        M = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / math.sqrt(M[k, k])
        return axis * ang
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return v / (2.0 * math.sin(ang)) * ang


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix (radians)."""
    R = np.asarray(R, dtype=np.float64)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 form stays accurate for tiny angles, unlike arccos of the trace
    return float(math.atan2(0.5 * np.linalg.norm(v), 0.5 * (np.trace(R) - 1.0)))
