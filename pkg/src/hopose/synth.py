"""Synthetic grasp sequences with exact ground truth.

The toy hand holds a box against its palm; hand and object then move
rigidly together, so the contact set is constant and sliding is zero by
construction. Masks and images are rendered hard. All randomness comes from
one ``numpy.random.Generator`` seeded from the ``GraspSpec``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .geometry import TriMesh, box, build_sdf_index
from .model import PoseState, SkinnedModel, make_toy_hand, select, skin
from .priors import HAND_COLOR, LossWeights, Scene
from .render import HAND, OBJECT, Camera, MaskImage, project, rasterize_hard, render_hard_rgb
from .rotations import axis_angle_to_matrix_np, euler_to_matrix_np, matrix_to_axis_angle_np, matrix_to_euler_np

# per finger: bend of the three segments about the local x axis (radians);
# the first finger is the thumb, which curls towards the palm for negative bends
DEFAULT_CURL = ((-1.45, -0.5, -0.3), (1.5, 0.8, 0.6), (1.55, 0.9, 0.5), (1.5, 0.75, 0.55), (1.4, 0.6, 0.45))


# Weights used on the synthetic benchmark. The continuity and smoothness
# terms act on squared displacements; with the default weight of 1 on
# squared centimetres they outweigh the mask term by two orders of magnitude
# and the estimate lags the moving grasp, so both are scaled by 1e-4 (the
# centimetre-to-metre factor squared). The other weights are the defaults.
BENCHMARK_WEIGHTS = LossWeights(continuity=1e-4, smoothness=1e-5)


def benchmark_config(weights: LossWeights = BENCHMARK_WEIGHTS, iterations: int = 100):
    """Optimizer settings for the synthetic grasp: hand held at its control, object refined."""
    from .optimize import OptimConfig

    return OptimConfig(method="adam", learning_rate=0.02, iterations=iterations, weights=weights,
                       frozen=("theta", "beta"), span_lr=(("obj_t", 5.0),))


@dataclass(frozen=True)
class GraspSpec:
    n_frames: int = 30
    width: int = 80
    height: int = 80
    focal: float = 120.0
    depth: float = 42.0  # distance of the palm centre from the camera
    view_euler: tuple = (2.3, 0.35, 0.25)  # hand-to-camera rotation at frame 0
    velocity: tuple = (0.08, -0.05, 0.1)  # cm per frame
    angular_velocity: tuple = (0.0, 0.02, 0.01)  # axis-angle per frame, camera frame
    gap: float = 0.05  # hand-object clearance at the contacts
    object_half_width: float = 3.6
    object_subdivisions: int = 4
    init_translation_frac: float = 0.05  # init noise std as a fraction of object diameter
    init_rotation_deg: float = 10.0
    hand_noise: float = 0.0  # std of noise added to the hand pose controls
    obs_noise_3d: float = 0.05  # cm
    obs_noise_2d: float = 0.5  # pixels
    obs_noise_center: float = 0.1  # cm
    penetration: float = 0.0  # inject: push init objects this far into the palm
    oscillation: float = 0.0  # inject: alternate init offsets of this amplitude
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class SynthFrame:
    gt: PoseState
    init: PoseState
    mask: MaskImage
    rgb: np.ndarray
    observations: dict  # kind -> flat observation vector


@dataclass
class SynthSequence:
    spec: GraspSpec
    scene: Scene
    frames: list = field(default_factory=list)
    grasp_theta: np.ndarray | None = None  # hand articulation in the hand frame
    object_in_hand: tuple | None = None  # (R, t) of the object in the hand frame

    @property
    def gt(self):
        return [f.gt for f in self.frames]

    @property
    def inits(self):
        return [f.init for f in self.frames]

    @property
    def object_diameter(self) -> float:
        lo, hi = self.scene.object_mesh.bounds
        return float(np.linalg.norm(hi - lo))


def grasp_pose(model: SkinnedModel, curl=DEFAULT_CURL) -> np.ndarray:
    """Hand-frame articulation (global part zero) with each finger curled."""
    th = np.zeros(model.theta_dim)
    n_fingers = (model.n_joints - 1) // 3 if model.n_joints > 1 else 0
    for f in range(n_fingers):
        c = curl[f % len(curl)]
        for s in range(3):
            th[3 * (1 + 3 * f + s)] = c[s]
    return th


FIT_SAMPLES = 8


def _surface_samples(vertices, faces, n):
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    bary = np.stack([i[keep], j[keep], n - i[keep] - j[keep]], axis=1) / n
    tri = vertices[faces]  # (F, 3, 3)
    return np.einsum("bk,fkd->fbd", bary, tri).reshape(-1, 3)


def fit_grasped_box(model: SkinnedModel, theta: np.ndarray, gap: float, half_width: float, subdivisions: int):
    """Box resting on the palm's grasping face, touching the curled fingers.

    Returns the object-local mesh (centred at the origin) and its centre in
    the hand frame.
    """
    from .model import PALM_HALF

    v = skin(model, theta, np.zeros(model.n_betas))
    palm_n = len(box(PALM_HALF, 3).vertices)
    # sample finger faces densely: a box edge can cut a capsule between its vertices
    f = model.faces[np.all(model.faces >= palm_n, axis=1)]
    fingers = _surface_samples(v, f, FIT_SAMPLES)
    z0 = PALM_HALF[2] + gap
    near = (fingers[:, 2] > z0) & (fingers[:, 2] < z0 + 2.0)
    front = near & (fingers[:, 1] > 0)
    back = near & (fingers[:, 1] < 0)
    y_face = fingers[front, 1].min() - gap if np.any(front) else PALM_HALF[1] - 0.4
    y_back = fingers[back, 1].max() + gap if np.any(back) else -PALM_HALF[1] + 0.4
    over = (fingers[:, 1] < y_face) & (fingers[:, 1] > y_back) & (fingers[:, 2] > z0 + 0.5)
    z_top = fingers[over, 2].min() - gap if np.any(over) else z0 + 2.0
    half = np.array([half_width, (y_face - y_back) / 2.0, (z_top - z0) / 2.0])
    center = np.array([0.0, y_back + half[1], z0 + half[2]])
    return box(half, subdivisions), center


def _face_colors(n_faces: int, rng_seed: int = 7) -> np.ndarray:
    # fixed palette so the object's texture does not depend on the run seed
    r = np.random.default_rng(rng_seed)
    return 0.25 + 0.7 * r.random((n_faces, 3))


def build_scene(spec: GraspSpec, model: SkinnedModel | None = None, **scene_kw):
    model = make_toy_hand() if model is None else model
    theta = grasp_pose(model)
    obj, center = fit_grasped_box(model, theta, spec.gap, spec.object_half_width, spec.object_subdivisions)
    camera = Camera(spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0, spec.width, spec.height)
    kw = dict(sigma=0.15, cutoff=8.0, gamma=1e-2, z_near=spec.depth, depth_tau=0.05, contour_mode=True)
    kw.update(scene_kw)
    scene = Scene(camera, model, obj, _face_colors(len(obj.faces)), object_index=build_sdf_index(obj), **kw)
    return scene, theta, center


def hand_and_object(model: SkinnedModel, theta_local, center, R_g, T_g):
    """Camera-frame hand pose vector and object (euler, translation)."""
    J = model.n_joints
    th = np.array(theta_local, dtype=np.float64)
    th[3 * J: 3 * J + 3] = matrix_to_axis_angle_np(R_g)
    th[3 * J + 3:] = T_g
    r = matrix_to_euler_np(R_g)
    t = R_g @ center + T_g
    return th, r, t


def trajectory(spec: GraspSpec):
    """Per-frame global rotation and translation of the rigid hand-object pair."""
    R0 = euler_to_matrix_np(spec.view_euler)
    T0 = np.array([0.0, 0.0, spec.depth])
    w = np.asarray(spec.angular_velocity, dtype=np.float64)
    v = np.asarray(spec.velocity, dtype=np.float64)
    out = []
    for k in range(spec.n_frames):
        out.append((axis_angle_to_matrix_np(k * w) @ R0, T0 + k * v))
    return out


def observe(scene: Scene, state: PoseState) -> dict:
    """Noise-free observation vectors of every kind for one state."""
    hand = skin(scene.model, state.theta, state.beta)
    tips = select(hand, scene.model.selector("fingertips"))
    uv, _, _ = project(scene.camera, tips)
    tips3 = tips.reshape(-1)
    return {
        "fingertips_3d": tips3,
        "fingertips_2d": uv.reshape(-1),
        "object_center": state.obj_t.copy(),
        "hand_plus_object": np.concatenate([tips3, state.obj_t]),
    }


def render_observation(scene: Scene, state: PoseState):
    """Hard label mask and flat-shaded RGB for one state."""
    hand = skin(scene.model, state.theta, state.beta)
    obj_v = scene.object_mesh.vertices @ euler_to_matrix_np(state.obj_r).T + state.obj_t
    labels = rasterize_hard(scene.camera, [(hand, scene.model.faces, HAND), (obj_v, scene.object_mesh.faces, OBJECT)])
    hand_colors = np.tile(HAND_COLOR, (len(scene.model.faces), 1))
    rgb = render_hard_rgb(scene.camera, [(hand, scene.model.faces, hand_colors), (obj_v, scene.object_mesh.faces, scene.object_colors)])
    return MaskImage(labels), rgb


def _perturb(rng, state: PoseState, spec: GraspSpec, diameter: float, model: SkinnedModel) -> PoseState:
    st = spec.init_translation_frac * diameter
    sr = np.deg2rad(spec.init_rotation_deg)
    dt = rng.normal(0.0, 1.0, 3) * st
    dr = rng.normal(0.0, 1.0, 3) * sr
    dth = rng.normal(0.0, 1.0, model.theta_dim) * spec.hand_noise
    return state.replace(theta=state.theta + dth, obj_r=state.obj_r + dr, obj_t=state.obj_t + dt)


def synth_sequence(spec: GraspSpec, model: SkinnedModel | None = None, **scene_kw) -> SynthSequence:
    rng = np.random.default_rng(spec.seed)
    scene, theta_local, center = build_scene(spec, model, **scene_kw)
    model = scene.model
    seq = SynthSequence(spec, scene, grasp_theta=theta_local, object_in_hand=(np.eye(3), center))
    diameter = seq.object_diameter
    beta = np.zeros(model.n_betas)
    for k, (R_g, T_g) in enumerate(trajectory(spec)):
        th, r, t = hand_and_object(model, theta_local, center, R_g, T_g)
        gt = PoseState(th, beta, r, t)
        mask, rgb = render_observation(scene, gt)
        clean = observe(scene, gt)
        obs = {
            "fingertips_3d": clean["fingertips_3d"] + rng.normal(0.0, 1.0, clean["fingertips_3d"].shape) * spec.obs_noise_3d,
            "fingertips_2d": clean["fingertips_2d"] + rng.normal(0.0, 1.0, clean["fingertips_2d"].shape) * spec.obs_noise_2d,
            "object_center": clean["object_center"] + rng.normal(0.0, 1.0, 3) * spec.obs_noise_center,
        }
        obs["hand_plus_object"] = np.concatenate([obs["fingertips_3d"], obs["object_center"]])
        init = _perturb(rng, gt, spec, diameter, model)
        if spec.penetration:
            # push the object towards the palm along the palm normal
            normal = R_g @ np.array([0.0, 0.0, 1.0])
            init = init.replace(obj_t=init.obj_t - spec.penetration * normal)
        if spec.oscillation:
            init = init.replace(obj_t=init.obj_t + (1.0 if k % 2 else -1.0) * spec.oscillation * R_g[:, 0])
        seq.frames.append(SynthFrame(gt, init, mask, rgb, obs))
    return seq


def with_spec(spec: GraspSpec, **kw) -> GraspSpec:
    return replace(spec, **kw)
