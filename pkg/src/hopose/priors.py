"""Rendering and physics loss terms for hand-object pose estimation.

All losses read the posed state under evaluation from ``ctx.current`` and
return a scalar tensor, so they can be composed and differentiated. Terms
that need an absent temporal slot (first frames of a sequence) return 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .geometry import DEFAULT_CONTACT_THRESHOLD, SdfIndex, TriMesh, build_sdf_index, signed_distance_torch
from .grad import ParamLayout, split_tensor
from .model import SkinnedModel, skin_torch
from .render import Camera, MaskImage, rasterize_layers, rasterize_soft
from .rotations import euler_xyz_to_matrix

TERMS = ("image", "mask", "sliding", "penetration", "continuity", "smoothness")
HAND_COLOR = (0.85, 0.65, 0.55)


@dataclass(frozen=True)
class LossWeights:
    image: float = 0.1
    mask: float = 0.3
    sliding: float = 0.005
    penetration: float = 0.001
    continuity: float = 1.0
    smoothness: float = 0.1

    def __post_init__(self):
        for k in TERMS:
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight '{k}' must be finite and >= 0, got {v}")

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in TERMS}

    def render_only(self) -> "LossWeights":
        return replace(self, sliding=0.0, penetration=0.0, continuity=0.0, smoothness=0.0)

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class Scene:
    """Everything shared by the frames of one sequence."""

    camera: Camera
    model: SkinnedModel
    object_mesh: TriMesh  # object-local frame
    object_colors: np.ndarray | None = None  # (F, 3) flat albedo
    contact_threshold: float = DEFAULT_CONTACT_THRESHOLD
    sigma: float | None = None  # soft rasterizer softness (pixels)
    gamma: float = 1e-2
    cutoff: float = 35.0
    z_near: float = 1.0  # depth scale of the colour softmax
    depth_tau: float = 0.5  # depth softness of hand/object occlusion
    contour_mode: bool = False
    reduction: str = "mean"  # "mean" or "sum" for pixel and vertex sums
    object_index: SdfIndex | None = None

    def __post_init__(self):
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.object_index is None:
            self.object_index = build_sdf_index(self.object_mesh)
        if self.object_colors is None:
            self.object_colors = np.full((len(self.object_mesh.faces), 3), 0.5)
        self.object_colors = np.asarray(self.object_colors, dtype=np.float64)
        self._local = torch.tensor(self.object_mesh.vertices)

    def reduce(self, x: torch.Tensor) -> torch.Tensor:
        return x.mean() if self.reduction == "mean" else x.sum()

    def render(self, hand_verts: torch.Tensor, obj_verts: torch.Tensor):
        """Per-class soft channels of the joint scene and the object-only RGB."""
        layers = [("hand", hand_verts, self.model.faces), ("object", obj_verts, self.object_mesh.faces)]
        img = rasterize_layers(self.camera, layers, sigma=self.sigma, depth_tau=self.depth_tau, cutoff=self.cutoff,
                               contour_mode=self.contour_mode)
        obj = rasterize_soft(self.camera, obj_verts, self.object_mesh.faces, sigma=self.sigma,
                             face_colors=self.object_colors, gamma=self.gamma, z_near=self.z_near, cutoff=self.cutoff,
                             contour_mode=self.contour_mode)
        img.rgb = obj.rgb
        return img


@dataclass
class PosedFrame:
    """Posed geometry of one frame (torch tensors, possibly carrying a graph)."""

    theta: torch.Tensor
    hand_verts: torch.Tensor
    obj_R: torch.Tensor
    obj_t: torch.Tensor
    obj_verts: torch.Tensor
    _cache: dict = field(default_factory=dict, repr=False)

    def detached(self) -> "PosedFrame":
        return PosedFrame(*(x.detach() for x in (self.theta, self.hand_verts, self.obj_R, self.obj_t, self.obj_verts)))


def pose_frame(scene: Scene, theta, beta, obj_r, obj_t) -> PosedFrame:
    """Pose the hand and object; accepts tensors (differentiable) or arrays."""
    th, be, r, t = (x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))
                    for x in (theta, beta, obj_r, obj_t))
    hand = skin_torch(scene.model, th, be if scene.model.n_betas else None)
    R = euler_xyz_to_matrix(r)
    return PosedFrame(th, hand, R, t, scene._local @ R.T + t)


def pose_from_vector(scene: Scene, layout: ParamLayout, x: torch.Tensor) -> PosedFrame:
    s = split_tensor(layout, x)
    return pose_frame(scene, s["theta"], s["beta"], s["obj_r"], s["obj_t"])


def pose_from_state(scene: Scene, state) -> PosedFrame:
    return pose_frame(scene, state.theta, state.beta, state.obj_r, state.obj_t)


@dataclass
class FrameContext:
    """Observation and temporal context for one frame.

    ``prev`` and ``prev2`` are the (fixed) frames t-1 and t-2; ``contact`` is
    the hand-vertex contact set frozen from frame t-1.
    """

    scene: Scene
    mask: MaskImage | None = None
    rgb: np.ndarray | None = None  # (H, W, 3) in [0, 1]
    prev: PosedFrame | None = None
    prev2: PosedFrame | None = None
    contact: np.ndarray | None = None
    current: PosedFrame | None = None

    def with_current(self, frame: PosedFrame) -> "FrameContext":
        return replace(self, current=frame)


def contact_set(scene: Scene, frame: PosedFrame) -> np.ndarray:
    """Hand vertices whose signed distance to the object is below the threshold."""
    local = ((frame.hand_verts - frame.obj_t) @ frame.obj_R).detach().numpy()
    s = scene.object_index.query_many(local).distance
    return np.nonzero(s < scene.contact_threshold)[0]


def _rendered(ctx: FrameContext):
    cur = ctx.current
    if "render" not in cur._cache:
        cur._cache["render"] = ctx.scene.render(cur.hand_verts, cur.obj_verts)
    return cur._cache["render"]


def _check_size(ctx: FrameContext, shape, what: str):
    cam = ctx.scene.camera
    if tuple(shape[:2]) != (cam.height, cam.width):
        raise ValueError(f"{what} is {shape[0]}x{shape[1]}, camera renders {cam.height}x{cam.width}")


def image_residual(rendered_rgb, hand_mask, obj_mask, rgb_in, reduction="mean"):
    """``|(1 - M_hand) I_r - M_obj I_in|^2`` summed over channels, reduced over pixels."""
    I_r = torch.as_tensor(rendered_rgb, dtype=torch.float64)
    mh = torch.as_tensor(np.asarray(hand_mask, dtype=np.float64))
    mo = torch.as_tensor(np.asarray(obj_mask, dtype=np.float64))
    I_in = torch.as_tensor(np.asarray(rgb_in, dtype=np.float64))
    if I_r.dim() == 2:
        I_r, I_in = I_r[..., None], I_in[..., None]
    if I_r.shape != I_in.shape or mh.shape != I_r.shape[:2] or mo.shape != I_r.shape[:2]:
        raise ValueError("image, mask and rendering sizes differ")
    r = (1.0 - mh)[..., None] * I_r - mo[..., None] * I_in
    per_pixel = (r * r).sum(-1)
    return per_pixel.mean() if reduction == "mean" else per_pixel.sum()


def mask_residual(hand_channel, obj_channel, mask: MaskImage, reduction="mean"):
    """Per-class squared difference between soft channels and the detected labels."""
    hc = torch.as_tensor(hand_channel, dtype=torch.float64)
    oc = torch.as_tensor(obj_channel, dtype=torch.float64)
    if hc.shape != mask.shape or oc.shape != mask.shape:
        raise ValueError(f"mask is {mask.shape}, rendering is {tuple(hc.shape)}")
    dh = hc - torch.from_numpy(mask.hand)
    do = oc - torch.from_numpy(mask.obj)
    per_pixel = dh * dh + do * do
    return per_pixel.mean() if reduction == "mean" else per_pixel.sum()


def loss_image(ctx: FrameContext) -> torch.Tensor:
    if ctx.rgb is None:
        raise ValueError("image loss needs an input RGB image")
    if ctx.mask is None:
        raise ValueError("image loss needs the detected mask")
    _check_size(ctx, np.shape(ctx.rgb), "input image")
    _check_size(ctx, ctx.mask.shape, "mask")
    img = _rendered(ctx)
    return image_residual(img.rgb, ctx.mask.hand, ctx.mask.obj, ctx.rgb, ctx.scene.reduction)


def loss_mask(ctx: FrameContext) -> torch.Tensor:
    if ctx.mask is None:
        raise ValueError("mask loss needs a detected mask")
    _check_size(ctx, ctx.mask.shape, "mask")
    img = _rendered(ctx)
    return mask_residual(img.channels["hand"], img.channels["object"], ctx.mask, ctx.scene.reduction)


def object_frame_points(points, R, t):
    """``R^T (p - t)`` for row-vector points."""
    return (points - t) @ R


def loss_sliding(ctx: FrameContext) -> torch.Tensor:
    cur, prev = ctx.current, ctx.prev
    if prev is None or ctx.contact is None or len(ctx.contact) == 0:
        return torch.zeros((), dtype=torch.float64)
    idx = torch.from_numpy(np.asarray(ctx.contact, dtype=np.int64))
    now = object_frame_points(cur.hand_verts[idx], cur.obj_R, cur.obj_t)
    before = object_frame_points(prev.hand_verts[idx], prev.obj_R, prev.obj_t)
    d = now - before
    return ctx.scene.reduce((d * d).sum(-1))


def loss_penetration(ctx: FrameContext) -> torch.Tensor:
    """Sum over hand vertices of the penetration depth ``max(0, -sdf)``."""
    cur = ctx.current
    local = object_frame_points(cur.hand_verts, cur.obj_R, cur.obj_t)
    s = signed_distance_torch(ctx.scene.object_index, local)
    return torch.relu(-s).sum()


def loss_continuity(ctx: FrameContext) -> torch.Tensor:
    cur, prev = ctx.current, ctx.prev
    if prev is None:
        return torch.zeros((), dtype=torch.float64)
    d = cur.obj_verts - prev.obj_verts
    dth = cur.theta - prev.theta
    return ctx.scene.reduce((d * d).sum(-1)) + (dth * dth).sum()


def loss_smoothness(ctx: FrameContext) -> torch.Tensor:
    cur, p1, p2 = ctx.current, ctx.prev, ctx.prev2
    if p1 is None or p2 is None:
        return torch.zeros((), dtype=torch.float64)
    d = cur.obj_verts - 2.0 * p1.obj_verts + p2.obj_verts
    return ctx.scene.reduce((d * d).sum(-1))


LOSSES = {
    "image": loss_image,
    "mask": loss_mask,
    "sliding": loss_sliding,
    "penetration": loss_penetration,
    "continuity": loss_continuity,
    "smoothness": loss_smoothness,
}


def loss_total(ctx: FrameContext, weights: LossWeights, skip_zero_weights: bool = False):
    """Weighted sum of the six terms and the unweighted per-term values.

    With ``skip_zero_weights`` terms of weight 0 are not evaluated (and are
    absent from the report); this avoids rendering in physics-only runs.
    """
    w = weights.as_dict()
    total = torch.zeros((), dtype=torch.float64)
    terms = {}
    for name in TERMS:
        if skip_zero_weights and w[name] == 0.0:
            continue
        value = LOSSES[name](ctx)
        terms[name] = value
        if w[name] != 0.0:
            total = total + w[name] * value
    return total, terms


def combined_losses(terms: dict, weights: LossWeights) -> dict:
    """Render and physics groupings of an evaluated term dict."""
    w = weights.as_dict()
    render = sum(w[k] * float(terms.get(k, 0.0)) for k in ("image", "mask"))
    physics = sum(w[k] * float(terms.get(k, 0.0)) for k in ("sliding", "penetration", "continuity", "smoothness"))
    return {"render": render, "physics": physics}
