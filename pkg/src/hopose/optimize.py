"""Per-frame gradient refinement and sequential refinement over a sequence."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .grad import ParamVector, evaluate_with_gradient, pack, unpack
from .model import PoseState
from .priors import TERMS, FrameContext, LossWeights, Scene, contact_set, loss_total, pose_from_state, pose_from_vector


@dataclass(frozen=True)
class OptimConfig:
    method: str = "adam"
    learning_rate: float = 0.01
    iterations: int = 100
    weights: LossWeights = field(default_factory=LossWeights)
    frozen: tuple = ("beta",)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 0.0  # stop once the relative loss change falls below this (0 disables)
    span_lr: tuple = ()  # ((span, multiplier), ...) learning-rate scaling per span

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def with_weights(self, weights: LossWeights) -> "OptimConfig":
        return replace(self, weights=weights)


@dataclass
class FrameTrace:
    """One row per evaluated iterate; iteration 0 is the initial pose."""

    totals: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    best: list = field(default_factory=list)  # best-so-far total after each iterate
    best_iteration: int = 0


@dataclass
class SequenceEstimate:
    states: list
    reports: list  # per frame {term: value, "total": value}
    provenance: str  # "init", "refined" or "filtered"
    traces: list = field(default_factory=list)
    ms_per_frame: list = field(default_factory=list)

    def __len__(self):
        return len(self.states)


class _Stepper:
    def __init__(self, cfg: OptimConfig, n: int, lr_scale: np.ndarray):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.k = 0
        self.lr = cfg.learning_rate * lr_scale

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        c = self.cfg
        if c.method == "sgd":
            return x - self.lr * g
        self.k += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g
        mh = self.m / (1.0 - c.beta1 ** self.k)
        vh = self.v / (1.0 - c.beta2 ** self.k)
        return x - self.lr * mh / (np.sqrt(vh) + c.eps)


def minimize(objective, x0: ParamVector, cfg: OptimConfig):
    """Descend ``objective`` from ``x0``; returns the best iterate and its trace.

    ``objective(x_tensor)`` returns ``(total, terms)`` like the loss functions.
    """
    trace = FrameTrace()
    lay = x0.layout
    free = lay.free_mask()
    scale = np.ones(lay.length)
    for name, mult in cfg.span_lr:
        scale[lay.slice(name)] = mult
    stepper = _Stepper(cfg, lay.length, scale)
    x = x0.values.copy()
    best_x, best_val = x.copy(), np.inf
    for it in range(cfg.iterations + 1):
        res = evaluate_with_gradient(objective, x0.with_values(x))
        trace.totals.append(res.value)
        trace.terms.append(res.terms)
        if res.value < best_val:
            best_val, best_x = res.value, x.copy()
            trace.best_iteration = it
        trace.best.append(best_val)
        if it == cfg.iterations:
            break
        if cfg.tol > 0 and it > 0:
            prev = trace.totals[-2]
            if abs(prev - res.value) <= cfg.tol * max(abs(prev), 1e-300):
                break
        new = stepper.step(x, res.gradient)
        x = np.where(free, new, x)
    return x0.with_values(best_x), trace


def frame_objective(ctx: FrameContext, layout, weights: LossWeights):
    def objective(x):
        frame = pose_from_vector(ctx.scene, layout, x)
        return loss_total(ctx.with_current(frame), weights, skip_zero_weights=True)

    return objective


def refine_frame(ctx: FrameContext, init: PoseState, config: OptimConfig):
    """Refine one frame's pose; returns the best iterate and the trace."""
    params = pack(init, frozen=config.frozen)
    objective = frame_objective(ctx, params.layout, config.weights)
    if config.iterations == 0:
        res = evaluate_with_gradient(objective, params)
        return init, FrameTrace([res.value], [res.terms], [res.value], 0)
    best, trace = minimize(objective, params, config)
    state = unpack(best)
    if state.equals(init):
        state = init
    return state, trace


@dataclass
class FrameObservation:
    mask: object = None  # MaskImage
    rgb: np.ndarray | None = None


def refine_sequence(scene: Scene, frames, inits, config: OptimConfig) -> SequenceEstimate:
    """Refine frames in temporal order; frame t sees the refined t-1 and t-2."""
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    if len(frames) != len(inits):
        raise ValueError("one initial pose per frame is required")
    states, reports, traces, times = [], [], [], []
    posed = []
    for k, (obs, init) in enumerate(zip(frames, inits)):
        t0 = time.perf_counter()
        prev = posed[-1] if k >= 1 else None
        prev2 = posed[-2] if k >= 2 else None
        contact = contact_set(scene, prev) if prev is not None else None
        ctx = FrameContext(scene, obs.mask, obs.rgb, prev, prev2, contact)
        state, trace = refine_frame(ctx, init, config)
        times.append(1000.0 * (time.perf_counter() - t0))
        states.append(state)
        report = dict(trace.terms[trace.best_iteration])
        report["total"] = trace.totals[trace.best_iteration]
        reports.append(report)
        traces.append(trace)
        posed.append(pose_from_state(scene, state).detached())
    return SequenceEstimate(states, reports, "refined", traces, times)


def init_estimate(inits) -> SequenceEstimate:
    return SequenceEstimate(list(inits), [{} for _ in inits], "init", [], [0.0 for _ in inits])


def ablation(scene: Scene, frames, inits, config: OptimConfig) -> dict:
    """Init-only, rendering priors only, and rendering plus physics priors."""
    return {
        "init": init_estimate(inits),
        "render": refine_sequence(scene, frames, inits, config.with_weights(config.weights.render_only())),
        "render_physics": refine_sequence(scene, frames, inits, config),
    }


def write_trace_csv(estimate: SequenceEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "iteration", "term", "value"])
        for f, tr in enumerate(estimate.traces):
            for it, (total, terms) in enumerate(zip(tr.totals, tr.terms)):
                for name in TERMS:
                    if name in terms:
                        w.writerow([f, it, name, repr(float(terms[name]))])
                w.writerow([f, it, "total", repr(float(total))])
