"""Extended Kalman filter tracking of the object pose with quasistatic contact dynamics.

The state is ``(theta, obj_r, obj_t)``. The hand pose is the control input and
is copied into the state at prediction; the object follows the contact points
rigidly (quasistatic step), and observations correct both.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .geometry import signed_distance_torch
from .grad import ParamLayout, ParamVector, finite_difference_jacobian, jacobian
from .model import PoseState, SkinnedModel, VertexSelector, select, skin, skin_torch
from .optimize import SequenceEstimate
from .render import Camera, project
from .rotations import euler_to_matrix_np, matrix_to_euler_np, wrap_angle

OBSERVATION_KINDS = ("fingertips_3d", "fingertips_2d", "object_center", "hand_plus_object")


class SingularInnovation(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"innovation covariance is singular (condition number {cond:.3e})")
        self.cond = cond


@dataclass
class Registration:
    R: np.ndarray
    t: np.ndarray
    degenerate: bool
    rank: int


def rigid_register(src, dst, tol: float = 1e-9) -> Registration:
    """Least-squares rigid map ``dst ~ R @ src + t`` by SVD of the cross-covariance.

    Fewer than three points, or collinear points, give ``degenerate=True`` with
    the identity transform.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same shape")
    if len(src) < 3:
        return Registration(np.eye(3), np.zeros(3), True, 0)
    cs, cd = src.mean(0), dst.mean(0)
    a, b = src - cs, dst - cd
    # collinear sources cannot fix the rotation about their common line
    sv = np.linalg.svd(a, compute_uv=False)
    rank = int(np.sum(sv > tol * max(sv[0], 1e-300)))
    if rank < 2:
        return Registration(np.eye(3), np.zeros(3), True, rank)
    U, _, Vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return Registration(R, cd - R @ cs, False, rank)


def quasistatic_step(model: SkinnedModel, state: PoseState, u, contact) -> PoseState:
    """Set the hand to control ``u`` and carry the object with the contact points.

    ``contact`` holds hand vertex indices. The object moves by the rigid map
    taking the contacts before the hand moves to after; with fewer than three
    or collinear contacts the object stays put.
    """
    u = np.asarray(u, dtype=np.float64)
    contact = np.asarray(contact, dtype=np.int64).reshape(-1)
    new = state.replace(theta=u)
    if len(contact) < 3:
        return new
    before = skin(model, state.theta, state.beta)[contact]
    after = skin(model, u, state.beta)[contact]
    reg = rigid_register(before, after)
    if reg.degenerate:
        return new
    R = reg.R @ euler_to_matrix_np(state.obj_r)
    return new.replace(obj_r=matrix_to_euler_np(R), obj_t=reg.R @ state.obj_t + reg.t)


@dataclass
class ObservationModel:
    kind: str
    selector: VertexSelector
    camera: Camera | None = None

    def __post_init__(self):
        if self.kind not in OBSERVATION_KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == "fingertips_2d" and self.camera is None:
            raise ValueError("fingertips_2d needs a camera")

    def dim(self) -> int:
        k = len(self.selector)
        return {"fingertips_3d": 3 * k, "fingertips_2d": 2 * k, "object_center": 3, "hand_plus_object": 3 * k + 3}[self.kind]

    def torch(self, model: SkinnedModel, beta: torch.Tensor, theta, obj_t) -> torch.Tensor:
        if self.kind == "object_center":
            return obj_t
        tips = select(skin_torch(model, theta, beta), self.selector)
        if self.kind == "fingertips_2d":
            uv, _, _ = project(self.camera, tips)
            return uv.reshape(-1)
        if self.kind == "fingertips_3d":
            return tips.reshape(-1)
        return torch.cat([tips.reshape(-1), obj_t])


def state_layout(model: SkinnedModel) -> ParamLayout:
    return ParamLayout((("theta", model.theta_dim), ("obj_r", 3), ("obj_t", 3)))


def to_vector(model: SkinnedModel, state: PoseState) -> ParamVector:
    return ParamVector(np.concatenate([state.theta, state.obj_r, state.obj_t]), state_layout(model))


def from_vector(x: ParamVector, beta) -> PoseState:
    return PoseState(x.span("theta"), beta, x.span("obj_r"), x.span("obj_t"))


@dataclass
class FilterState:
    mean: ParamVector
    P: np.ndarray
    Q: np.ndarray
    R_obs: np.ndarray
    innovation: np.ndarray | None = None  # y of the last update
    S: np.ndarray | None = None

    def __post_init__(self):
        n = self.mean.layout.length
        self.P = np.asarray(self.P, dtype=np.float64)
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.R_obs = np.asarray(self.R_obs, dtype=np.float64)
        if self.P.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError(f"P and Q must be {n}x{n}")
        if self.R_obs.ndim != 2 or self.R_obs.shape[0] != self.R_obs.shape[1]:
            raise ValueError("R_obs must be square")

    @classmethod
    def initial(cls, mean: ParamVector, obs_dim: int, p0: float = 1e-2, q: float = 1e-4, r: float = 1e-2) -> "FilterState":
        n = mean.layout.length
        return cls(mean, p0 * np.eye(n), q * np.eye(n), r * np.eye(obs_dim))


def _matrix(J, x) -> np.ndarray | None:
    if J is None:
        return None
    return np.asarray(J(x) if callable(J) else J, dtype=np.float64)


def _symmetric_psd(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w[0] < 0.0:
        w, V = np.linalg.eigh(P)
        P = (V * np.maximum(w, 0.0)) @ V.T
        P = 0.5 * (P + P.T)
    return P


def ekf_step(filt: FilterState, u, z, f: Callable, h: Callable, F=None, H=None, fd_step: float = 1e-6,
             angle_slices=()) -> FilterState:
    """One predict/update cycle.

    ``f(x, u)`` and ``h(x)`` act on flat numpy vectors. ``F`` and ``H`` are
    matrices, callables of ``x``, or None for central-difference Jacobians.
    ``angle_slices`` index state entries that are angles; they are wrapped
    after the update.
    """
    x = filt.mean.values
    Fm = _matrix(F, x)
    if Fm is None:
        Fm = finite_difference_jacobian(lambda v: f(v, u), x, fd_step)
    x_pred = np.asarray(f(x, u), dtype=np.float64)
    Hm = _matrix(H, x_pred)
    if Hm is None:
        Hm = finite_difference_jacobian(h, x_pred, fd_step)
    P_pred = Fm @ filt.P @ Fm.T + filt.Q
    y = np.asarray(z, dtype=np.float64) - np.asarray(h(x_pred), dtype=np.float64)
    S = Hm @ P_pred @ Hm.T + filt.R_obs
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularInnovation(float(cond))
    K = np.linalg.solve(S, Hm @ P_pred).T  # P' H^T S^-1, S symmetric
    x_new = x_pred + K @ y
    for sl in angle_slices:
        x_new[sl] = wrap_angle(x_new[sl])
    P_new = (np.eye(len(x)) - K @ Hm) @ P_pred
    return FilterState(filt.mean.with_values(x_new), _symmetric_psd(P_new), filt.Q, filt.R_obs, y, S)


@dataclass(frozen=True)
class TrackConfig:
    contact: str = "fingertips"  # "fingertips" or "sdf" (vertices within contact_threshold)
    contact_threshold: float = 0.1
    q: float = 1e-4
    r: float = 1e-2
    p0: float = 1e-2
    jacobian: str = "autograd"  # for H; F always uses central differences
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.contact not in ("fingertips", "sdf"):
            raise ValueError(f"unknown contact mode {self.contact!r}")
        if self.jacobian not in ("autograd", "fd"):
            raise ValueError(f"unknown Jacobian method {self.jacobian!r}")


@dataclass
class TrackResult:
    estimate: SequenceEstimate
    innovations: list = field(default_factory=list)  # per frame innovation vector y


def contact_indices(model: SkinnedModel, state: PoseState, config: TrackConfig, object_index=None) -> np.ndarray:
    if config.contact == "fingertips":
        return model.selector("fingertips").indices
    if object_index is None:
        raise ValueError("sdf contacts need the object's SDF index")
    hand = torch.as_tensor(skin(model, state.theta, state.beta))
    R = torch.as_tensor(euler_to_matrix_np(state.obj_r))
    local = (hand - torch.as_tensor(state.obj_t)) @ R
    with torch.no_grad():
        s = signed_distance_torch(object_index, local).numpy()
    return np.flatnonzero(s < config.contact_threshold)


def track_sequence(model: SkinnedModel, controls, observations, init: PoseState, obs_model: ObservationModel,
                   config: TrackConfig = TrackConfig(), object_index=None) -> TrackResult:
    """Filter a sequence; frame 0 is an update of ``init`` with the first control.

    ``controls[k]`` is the hand pose at frame k and ``observations[k]`` the
    flat observation vector of ``obs_model``.
    """
    if len(controls) != len(observations):
        raise ValueError("one control per observation is required")
    if len(controls) == 0:
        raise ValueError("need at least one frame")
    beta = init.beta
    beta_t = torch.as_tensor(beta)
    lay = state_layout(model)
    rs, ts = lay.slice("obj_r"), lay.slice("obj_t")

    def h_torch(x):
        return obs_model.torch(model, beta_t, x[lay.slice("theta")], x[ts])

    def h(x):
        with torch.no_grad():
            return h_torch(torch.as_tensor(x)).numpy()

    H = None
    if config.jacobian == "autograd":
        H = lambda x: jacobian(h_torch, x)  # noqa: E731

    filt = FilterState.initial(to_vector(model, init), obs_model.dim(), config.p0, config.q, config.r)
    state = init
    states, reports, times, innovations = [], [], [], []
    for k, (u, z) in enumerate(zip(controls, observations)):
        t0 = time.perf_counter()
        contact = contact_indices(model, state, config, object_index)

        def f(x, u=u, contact=contact):
            return to_vector(model, quasistatic_step(model, from_vector(ParamVector(x, lay), beta), u, contact)).values

        filt = ekf_step(filt, np.asarray(u, dtype=np.float64), z, f, h, H=H, fd_step=config.fd_step, angle_slices=(rs,))
        state = from_vector(filt.mean, beta)
        times.append(1000.0 * (time.perf_counter() - t0))
        states.append(state)
        reports.append({"innovation_norm": float(np.linalg.norm(filt.innovation)), "n_contacts": int(len(contact)),
                        "trace_P": float(np.trace(filt.P))})
        innovations.append(filt.innovation)
    return TrackResult(SequenceEstimate(states, reports, "filtered", [], times), innovations)


def write_innovations_csv(result: TrackResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "innovation_norm", "n_contacts", "trace_P"])
        for k, rep in enumerate(result.estimate.reports):
            w.writerow([k, repr(rep["innovation_norm"]), rep["n_contacts"], repr(rep["trace_P"])])
