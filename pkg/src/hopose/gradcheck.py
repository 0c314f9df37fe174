"""Finite-difference check of every loss term and observation model on random configurations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .ekf import OBSERVATION_KINDS, ObservationModel, state_layout, to_vector
from .grad import evaluate_with_gradient, finite_difference_gradient, finite_difference_jacobian, gradcheck_rows, jacobian, pack
from .priors import LOSSES, TERMS, FrameContext, contact_set, pose_from_state, pose_from_vector
from .synth import GraspSpec, synth_sequence

FD_STEP = 1e-5


@dataclass
class GradCheckSummary:
    rows: list
    max_rel_err: dict  # term -> worst relative error over all configurations
    n_configs: int

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values())

    def passed(self, tol: float = 1e-3) -> bool:
        return self.worst < tol


def _perturbed(rng, state, scale):
    return state.replace(
        theta=state.theta + rng.normal(0.0, 0.02 * scale, state.theta.shape),
        beta=state.beta + rng.normal(0.0, 0.1 * scale, state.beta.shape),
        obj_r=state.obj_r + rng.normal(0.0, 0.05 * scale, 3),
        obj_t=state.obj_t + rng.normal(0.0, 0.2 * scale, 3),
    )


def run_gradcheck(n_configs: int = 20, seed: int = 0, n_indices: int = 6, spec: GraspSpec | None = None,
                  h: float = FD_STEP) -> GradCheckSummary:
    """Compare autograd against central differences (step ``h``) for each term.

    Each configuration perturbs a frame of the synthetic grasp and its two
    predecessors; losses are checked on ``n_indices`` random coordinates of
    the packed vector, observation models on their full Jacobian.
    """
    spec = GraspSpec(n_frames=3, seed=seed) if spec is None else spec
    seq = synth_sequence(spec)
    scene = seq.scene
    rng = np.random.default_rng(seed)
    rows = []
    worst = {t: 0.0 for t in TERMS + OBSERVATION_KINDS}
    tips = scene.model.selector("fingertips")
    for c in range(n_configs):
        f2, f1, f0 = seq.frames[0], seq.frames[1], seq.frames[2]
        prev2 = pose_from_state(scene, _perturbed(rng, f2.gt, 0.5)).detached()
        prev = pose_from_state(scene, _perturbed(rng, f1.gt, 0.5)).detached()
        state = _perturbed(rng, f0.gt, 1.0)
        if c % 2 == 0:
            # push the object into the palm so penetration is active
            state = state.replace(obj_t=state.obj_t - 0.3 * (state.obj_t - f0.gt.theta[-3:]) / np.linalg.norm(state.obj_t - f0.gt.theta[-3:]))
        ctx = FrameContext(scene, f0.mask, f0.rgb, prev, prev2, contact_set(scene, prev))
        params = pack(state)
        idx = np.sort(rng.choice(params.layout.length, size=min(n_indices, params.layout.length), replace=False))
        for term in TERMS:
            loss = LOSSES[term]

            def objective(x, loss=loss):
                return loss(ctx.with_current(pose_from_vector(scene, params.layout, x)))

            analytic = evaluate_with_gradient(objective, params).gradient

            def value(v, objective=objective):
                with torch.no_grad():
                    return float(objective(torch.as_tensor(v)))

            numeric = finite_difference_gradient(value, params.values, h, idx)
            r = gradcheck_rows(term, analytic, numeric, idx)
            rows.extend(r)
            worst[term] = max(worst[term], max(x.rel_err for x in r))
        x0 = to_vector(scene.model, state)
        lay = state_layout(scene.model)
        beta_t = torch.as_tensor(state.beta)
        for kind in OBSERVATION_KINDS:
            om = ObservationModel(kind, tips, scene.camera)

            def h_torch(x, om=om):
                return om.torch(scene.model, beta_t, x[lay.slice("theta")], x[lay.slice("obj_t")])

            Ja = jacobian(h_torch, x0)
            Jn = finite_difference_jacobian(lambda v, f=h_torch: f(torch.as_tensor(v)).numpy(), x0.values, h)
            r = gradcheck_rows(kind, Ja, Jn)
            rows.extend(r)
            worst[kind] = max(worst[kind], max(x.rel_err for x in r))
    return GradCheckSummary(rows, worst, n_configs)
