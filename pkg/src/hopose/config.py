"""Scene configuration files.

A scene config is JSON; relative paths resolve against the config's
directory. Unknown keys are rejected so typos surface with their field path.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .ekf import OBSERVATION_KINDS, TrackConfig
from .geometry import build_sdf_index, load_obj
from .io import read_label_png, read_png, read_poses
from .model import load_model, make_toy_hand
from .optimize import FrameObservation, OptimConfig
from .priors import LossWeights, Scene
from .render import Camera


class ConfigError(ValueError):
    """Malformed config or missing input file; the message names the field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CameraConfig(_Strict):
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(ge=1)
    height: int = Field(ge=1)

    def build(self) -> Camera:
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


class WeightsConfig(_Strict):
    image: float = Field(0.1, ge=0)
    mask: float = Field(0.3, ge=0)
    sliding: float = Field(0.005, ge=0)
    penetration: float = Field(0.001, ge=0)
    continuity: float = Field(1.0, ge=0)
    smoothness: float = Field(0.1, ge=0)

    def build(self) -> LossWeights:
        return LossWeights(**self.model_dump())


class OptimSection(_Strict):
    method: Literal["sgd", "adam"] = "adam"
    learning_rate: float = Field(0.01, gt=0)
    iterations: int = Field(100, ge=1)
    frozen: list[Literal["theta", "beta", "obj_r", "obj_t"]] = ["beta"]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = Field(0.0, ge=0)
    span_lr: dict[Literal["theta", "beta", "obj_r", "obj_t"], float] = {}

    def build(self, weights: LossWeights) -> OptimConfig:
        return OptimConfig(self.method, self.learning_rate, self.iterations, weights, tuple(self.frozen), self.beta1,
                           self.beta2, self.eps, self.tol, tuple(sorted(self.span_lr.items())))


class FilterSection(_Strict):
    q: float = Field(1e-4, gt=0)
    r: float = Field(1e-2, gt=0)
    p0: float = Field(1e-2, gt=0)
    contact: Literal["fingertips", "sdf"] = "fingertips"
    observation: str = "hand_plus_object"
    jacobian: Literal["autograd", "fd"] = "autograd"

    @field_validator("observation")
    @classmethod
    def _kind(cls, v):
        if v not in OBSERVATION_KINDS:
            raise ValueError(f"must be one of {', '.join(OBSERVATION_KINDS)}")
        return v


class RenderSection(_Strict):
    sigma: Optional[float] = Field(None, gt=0)
    gamma: float = Field(1e-2, gt=0)
    cutoff: float = Field(35.0, gt=0)
    z_near: float = Field(1.0, gt=0)
    depth_tau: float = Field(0.5, gt=0)
    contour_mode: bool = False
    reduction: Literal["mean", "sum"] = "mean"


class FrameFiles(_Strict):
    mask: str
    rgb: Optional[str] = None


class MetricsSection(_Strict):
    length_unit: str = "cm"
    px_to_unit: Optional[float] = Field(None, gt=0)
    collision_resolution: int = Field(32, ge=4)


class SceneConfig(_Strict):
    seed: int = 0
    camera: CameraConfig
    model: Optional[str] = None  # skinned-model JSON; the built-in toy hand when absent
    object_mesh: str
    object_colors: Optional[str] = None  # JSON (F, 3) per-face albedo
    frames: list[FrameFiles] = Field(min_length=1)
    init_poses: str
    gt_poses: Optional[str] = None
    controls: Optional[str] = None  # JSON array of per-frame hand poses
    observations: Optional[str] = None  # JSON {kind: [per-frame vectors]}
    weights: WeightsConfig = WeightsConfig()
    optim: OptimSection = OptimSection()
    filter: FilterSection = FilterSection()
    render: RenderSection = RenderSection()
    metrics: MetricsSection = MetricsSection()
    contact_threshold: float = Field(0.1, gt=0)
    unit_scale: float = Field(0.1, gt=0)  # model units per millimetre


def _format(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{path}: {e['msg']}")
    return "; ".join(parts)


class LoadedScene:
    """A validated config with its files resolved and loaded."""

    def __init__(self, cfg: SceneConfig, root: Path):
        self.cfg = cfg
        self.root = root
        self._check_files()

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def _check_files(self):
        c = self.cfg
        refs = [("object_mesh", c.object_mesh), ("init_poses", c.init_poses)]
        refs += [(n, getattr(c, n)) for n in ("model", "object_colors", "gt_poses", "controls", "observations") if getattr(c, n)]
        for k, fr in enumerate(c.frames):
            refs.append((f"frames.{k}.mask", fr.mask))
            if fr.rgb:
                refs.append((f"frames.{k}.rgb", fr.rgb))
        for field, rel in refs:
            if not self.path(rel).is_file():
                raise ConfigError(f"{field}: file not found: {self.path(rel)}")

    def scene(self) -> Scene:
        c = self.cfg
        model = load_model(self.path(c.model)) if c.model else make_toy_hand()
        mesh = load_obj(self.path(c.object_mesh))
        colors = None
        if c.object_colors:
            colors = np.asarray(json.loads(self.path(c.object_colors).read_text()), dtype=np.float64)
        r = c.render
        return Scene(c.camera.build(), model, mesh, colors, contact_threshold=c.contact_threshold, sigma=r.sigma,
                     gamma=r.gamma, cutoff=r.cutoff, z_near=r.z_near, depth_tau=r.depth_tau,
                     contour_mode=r.contour_mode, reduction=r.reduction, object_index=build_sdf_index(mesh))

    def frames(self) -> list:
        out = []
        for fr in self.cfg.frames:
            mask = read_label_png(self.path(fr.mask))
            rgb = read_png(self.path(fr.rgb)) if fr.rgb else None
            out.append(FrameObservation(mask, rgb))
        return out

    def inits(self) -> list:
        return read_poses(self.path(self.cfg.init_poses))

    def gt(self) -> list:
        if not self.cfg.gt_poses:
            raise ConfigError("gt_poses: required for this command")
        return read_poses(self.path(self.cfg.gt_poses))

    def controls(self) -> list:
        if not self.cfg.controls:
            return [s.theta for s in self.inits()]
        return [np.asarray(u, dtype=np.float64) for u in json.loads(self.path(self.cfg.controls).read_text())]

    def observations(self, kind: str) -> list:
        if not self.cfg.observations:
            raise ConfigError("observations: required for tracking")
        d = json.loads(self.path(self.cfg.observations).read_text())
        if kind not in d:
            raise ConfigError(f"observations: no stream of kind '{kind}'")
        return [np.asarray(z, dtype=np.float64) for z in d[kind]]

    def optim_config(self) -> OptimConfig:
        return self.cfg.optim.build(self.cfg.weights.build())

    def track_config(self) -> TrackConfig:
        f = self.cfg.filter
        return TrackConfig(contact=f.contact, contact_threshold=self.cfg.contact_threshold, q=f.q, r=f.r, p0=f.p0,
                           jacobian=f.jacobian)


def load_config(path) -> LoadedScene:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"<root>: invalid JSON ({e})") from e
    try:
        cfg = SceneConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format(e)) from e
    return LoadedScene(cfg, path.parent)
