"""Command-line entry points: synth, optimize, track, contact-refine, eval, gradcheck.

Exit codes: 0 success, 2 config or input error, 3 invariant violation.
Outputs are deterministic given config and seed; wall-clock columns are
zero unless ``--record-timing`` is passed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, load_config
from .contact import ContactMap, ContactProblem, contact_recall, contact_values, refine_to_contact
from .ekf import ObservationModel, SingularInnovation, track_sequence, write_innovations_csv
from .geometry import MeshError, save_obj
from .grad import NonFiniteLoss
from .gradcheck import run_gradcheck
from .grad import write_gradcheck_csv
from .io import read_poses, write_label_png, write_png, write_poses
from .metrics import evaluate_sequence
from .model import ModelError, save_model, skin
from .optimize import refine_sequence, write_trace_csv
from .synth import GraspSpec, benchmark_config, synth_sequence

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


class InvariantViolation(RuntimeError):
    pass


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _times(ms, record: bool) -> list:
    return [float(t) for t in ms] if record else [0.0] * len(ms)


def cmd_synth(args) -> int:
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "rgb").mkdir(exist_ok=True)
    kw = json.loads(Path(args.spec).read_text()) if args.spec else {}
    known = {f.name for f in fields(GraspSpec)}
    unknown = sorted(set(kw) - known)
    if unknown:
        raise ConfigError(f"spec: unknown fields {unknown}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.frames is not None:
        kw["n_frames"] = args.frames
    spec = GraspSpec(**kw)
    seq = synth_sequence(spec)
    sc = seq.scene
    save_model(sc.model, out / "model.json")
    save_obj(sc.object_mesh, out / "object.obj")
    _write_json(out / "object_colors.json", sc.object_colors.tolist())
    frames = []
    for k, fr in enumerate(seq.frames):
        write_label_png(out / "masks" / f"{k:03d}.png", fr.mask)
        write_png(out / "rgb" / f"{k:03d}.png", fr.rgb)
        frames.append({"mask": f"masks/{k:03d}.png", "rgb": f"rgb/{k:03d}.png"})
    write_poses(out / "gt.json", seq.gt)
    write_poses(out / "init.json", seq.inits)
    _write_json(out / "controls.json", [f.init.theta.tolist() for f in seq.frames])
    kinds = seq.frames[0].observations.keys()
    _write_json(out / "observations.json", {k: [f.observations[k].tolist() for f in seq.frames] for k in kinds})
    _write_json(out / "spec.json", spec.to_dict())
    opt = benchmark_config()
    cfg = {
        "seed": spec.seed,
        "camera": sc.camera.to_dict(),
        "model": "model.json",
        "object_mesh": "object.obj",
        "object_colors": "object_colors.json",
        "frames": frames,
        "init_poses": "init.json",
        "gt_poses": "gt.json",
        "controls": "controls.json",
        "observations": "observations.json",
        "weights": opt.weights.as_dict(),
        "optim": {"method": opt.method, "learning_rate": opt.learning_rate, "iterations": opt.iterations,
                  "frozen": list(opt.frozen), "span_lr": dict(opt.span_lr)},
        "render": {"sigma": sc.sigma, "gamma": sc.gamma, "cutoff": sc.cutoff, "z_near": sc.z_near,
                   "depth_tau": sc.depth_tau, "contour_mode": sc.contour_mode, "reduction": sc.reduction},
        "contact_threshold": sc.contact_threshold,
        "unit_scale": 0.1,
    }
    _write_json(out / "scene.json", cfg)
    return EXIT_OK


def cmd_optimize(args) -> int:
    ls = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene, frames, inits = ls.scene(), ls.frames(), ls.inits()
    if len(inits) != len(frames):
        raise ConfigError(f"init_poses: {len(inits)} poses for {len(frames)} frames")
    est = refine_sequence(scene, frames, inits, ls.optim_config())
    for trace in est.traces:
        if any(b > a for a, b in zip(trace.best, trace.best[1:])):
            raise InvariantViolation("best-so-far loss increased")
    write_poses(out / "poses.json", est.states, {"seed": ls.cfg.seed, "provenance": est.provenance})
    write_trace_csv(est, out / "trace.csv")
    _write_json(out / "report.json", {"seed": ls.cfg.seed, "frames": est.reports,
                                      "ms_per_frame": _times(est.ms_per_frame, args.record_timing)})
    return EXIT_OK


def cmd_track(args) -> int:
    ls = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = ls.scene()
    kind = args.observation or ls.cfg.filter.observation
    om = ObservationModel(kind, scene.model.selector("fingertips"), scene.camera)
    controls, obs, inits = ls.controls(), ls.observations(kind), ls.inits()
    if len(controls) != len(obs):
        raise ConfigError(f"controls: {len(controls)} entries for {len(obs)} observations")
    res = track_sequence(scene.model, controls, obs, inits[0], om, ls.track_config(), scene.object_index)
    for k, st in enumerate(res.estimate.states):
        if not (np.all(np.isfinite(st.obj_t)) and np.all(np.isfinite(st.obj_r))):
            raise InvariantViolation(f"non-finite state at frame {k}")
    write_poses(out / "poses.json", res.estimate.states, {"seed": ls.cfg.seed, "provenance": "filtered",
                                                           "observation": kind})
    write_innovations_csv(res, out / "innovations.csv")
    _write_json(out / "report.json", {"seed": ls.cfg.seed, "observation": kind,
                                      "ms_per_frame": _times(res.estimate.ms_per_frame, args.record_timing)})
    return EXIT_OK


def cmd_contact_refine(args) -> int:
    ls = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = ls.scene()
    inits = ls.inits()
    if not 0 <= args.frame < len(inits):
        raise ConfigError(f"frame: {args.frame} out of range for {len(inits)} poses")
    init = inits[args.frame]
    model, unit = scene.model, ls.cfg.unit_scale

    def cmap(s):
        return contact_values(skin(model, s.theta, s.beta), scene.object_index, unit, s.obj_r, s.obj_t)

    if args.target:
        target = ContactMap.load(args.target)
    else:
        target = cmap(ls.gt()[args.frame])
    problem = ContactProblem(model, scene.object_index, unit, penetration_weight=ls.cfg.weights.penetration)
    state, trace = refine_to_contact(problem, init, target, ls.optim_config())
    if trace.totals and trace.best[-1] > trace.totals[0]:
        raise InvariantViolation("refinement increased the contact objective")
    achieved = cmap(state)
    achieved.save(out / "contact.json")
    write_poses(out / "pose.json", [state], {"seed": ls.cfg.seed, "frame": args.frame})
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "term", "value"])
        for it, (total, terms) in enumerate(zip(trace.totals, trace.terms)):
            for name in sorted(terms):
                w.writerow([it, name, repr(float(terms[name]))])
            w.writerow([it, "total", repr(float(total))])
    _write_json(out / "summary.json", {"seed": ls.cfg.seed, "frame": args.frame,
                                       "recall_before": contact_recall(cmap(init), target),
                                       "recall_after": contact_recall(achieved, target)})
    return EXIT_OK


def cmd_eval(args) -> int:
    ls = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = ls.scene()
    pred = read_poses(args.estimate)
    gt = read_poses(args.gt) if args.gt else ls.gt()
    if len(pred) != len(gt):
        raise ConfigError(f"estimate: {len(pred)} poses for {len(gt)} ground-truth frames")
    m = ls.cfg.metrics
    rep = evaluate_sequence(scene, pred, gt, collision=True, resolution=m.collision_resolution, px_to_unit=m.px_to_unit)
    if min(rep.err2d + rep.err3d + rep.collision) < 0:
        raise InvariantViolation("negative error")
    rep.write_csv(out / "metrics.csv")
    means = rep.means()
    _write_json(out / "metrics.json", {"seed": ls.cfg.seed, "length_unit": m.length_unit,
                                       "px_to_unit": m.px_to_unit, "means": means})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = run_gradcheck(n_configs=args.configs, seed=args.seed)
    write_gradcheck_csv(summary.rows, out / "gradcheck.csv")
    _write_json(out / "summary.json", {"seed": args.seed, "configs": args.configs, "max_rel_err": summary.max_rel_err,
                                       "worst": summary.worst, "passed": summary.passed()})
    print(f"max relative error {summary.worst:.3e} over {args.configs} configurations")
    if not summary.passed():
        raise InvariantViolation(f"gradient check failed: max relative error {summary.worst:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hopose", description="Hand-object pose refinement and tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic grasp sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="JSON of grasp-spec fields to override")
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int)
    s.set_defaults(func=cmd_synth)

    for name, func, hlp in (("optimize", cmd_optimize, "refine poses by gradient descent"),
                            ("track", cmd_track, "track the object with the EKF")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("--config", required=True)
        c.add_argument("--out", required=True)
        c.add_argument("--record-timing", action="store_true")
        if name == "track":
            c.add_argument("--observation", help="observation kind, overrides the config")
        c.set_defaults(func=func)

    c = sub.add_parser("contact-refine", help="refine one frame towards a target contact map")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--frame", type=int, default=0)
    c.add_argument("--target", help="ContactMap JSON; defaults to the ground-truth frame's map")
    c.set_defaults(func=cmd_contact_refine)

    c = sub.add_parser("eval", help="compare an estimate with ground truth")
    c.add_argument("--config", required=True)
    c.add_argument("--estimate", required=True)
    c.add_argument("--gt", help="ground-truth pose file; defaults to the config's gt_poses")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of all losses and observation models")
    c.add_argument("--out", required=True)
    c.add_argument("--configs", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError, MeshError, FileNotFoundError, json.JSONDecodeError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, NonFiniteLoss, SingularInnovation) as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
