import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hopose import cli
from hopose.cli import main
from hopose.config import ConfigError, load_config
from hopose.gradcheck import GradCheckSummary
from hopose.metrics import chamfer, error_2d
from hopose.render import Camera


def run(*argv):
    return main([str(a) for a in argv])


def edit_config(src, dst, **changes):
    cfg = json.loads(src.read_text())
    for key, value in changes.items():
        node = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        if value is None:
            node.pop(leaf)
        else:
            node[leaf] = value
    dst.write_text(json.dumps(cfg))
    return dst


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    """A three-frame synthetic sequence with a short optimizer budget."""
    root = tmp_path_factory.mktemp("seq")
    assert run("synth", "--out", root, "--frames", 3, "--seed", 4) == 0
    edit_config(root / "scene.json", root / "fast.json", **{"optim.iterations": 8})
    return root


def test_synth_writes_expected_files(data):
    for name in ("model.json", "object.obj", "gt.json", "init.json", "controls.json", "observations.json", "scene.json",
                 "masks/000.png", "rgb/002.png"):
        assert (data / name).is_file()
    ls = load_config(data / "scene.json")
    assert len(ls.frames()) == len(ls.inits()) == len(ls.gt()) == 3
    assert ls.cfg.seed == 4


def test_synth_is_deterministic(data, tmp_path):
    assert run("synth", "--out", tmp_path, "--frames", 3, "--seed", 4) == 0
    for p in sorted(data.rglob("*")):
        rel = p.relative_to(data)
        if p.is_file() and rel.name != "fast.json":
            assert (tmp_path / rel).read_bytes() == p.read_bytes(), rel


def test_zero_noise_synth_init_equals_ground_truth(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"init_translation_frac": 0.0, "init_rotation_deg": 0.0, "hand_noise": 0.0}))
    assert run("synth", "--out", tmp_path / "s", "--frames", 2, "--spec", spec) == 0
    assert (tmp_path / "s" / "init.json").read_text() == (tmp_path / "s" / "gt.json").read_text()


def test_synth_rejects_unknown_spec_field(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_frame": 3}))
    assert run("synth", "--out", tmp_path / "s", "--spec", spec) == 2
    assert "n_frame" in capsys.readouterr().err


@pytest.mark.parametrize("change,field", [
    ({"camera": None}, "camera"),
    ({"weights.mask": -1.0}, "weights.mask"),
    ({"optim.method": "lbfgs"}, "optim.method"),
    ({"filter.observation": "joints"}, "filter.observation"),
    ({"colour": 1}, "colour"),
    ({"object_mesh": "missing.obj"}, "object_mesh"),
])
def test_config_errors_name_the_field(data, tmp_path, capsys, change, field):
    cfg = edit_config(data / "scene.json", data / f"bad_{tmp_path.name}.json", **change)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        load_config(cfg)
    assert run("optimize", "--config", cfg, "--out", tmp_path) == 2
    assert field in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path):
    assert run("eval", "--config", tmp_path / "nope.json", "--estimate", tmp_path / "x.json", "--out", tmp_path) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run("optimize", "--config", tmp_path / "bad.json", "--out", tmp_path) == 2


def test_eval_of_ground_truth_is_zero(data, tmp_path):
    assert run("eval", "--config", data / "scene.json", "--estimate", data / "gt.json", "--out", tmp_path) == 0
    means = json.loads((tmp_path / "metrics.json").read_text())["means"]
    assert means["err2d"] == 0.0 and means["err3d"] == 0.0
    assert means["collision"] < 0.01
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "frame,err2d,err3d,collision,ms_per_frame"


def test_optimize_then_eval_reduces_error(data, tmp_path):
    out = tmp_path / "opt"
    assert run("optimize", "--config", data / "fast.json", "--out", out) == 0
    poses = json.loads((out / "poses.json").read_text())
    assert poses["provenance"] == "refined" and poses["seed"] == 4
    assert json.loads((out / "report.json").read_text())["ms_per_frame"] == [0.0, 0.0, 0.0]
    assert run("eval", "--config", data / "scene.json", "--estimate", out / "poses.json", "--out", tmp_path / "e1") == 0
    assert run("eval", "--config", data / "scene.json", "--estimate", data / "init.json", "--out", tmp_path / "e0") == 0
    after = json.loads((tmp_path / "e1" / "metrics.json").read_text())["means"]["err3d"]
    before = json.loads((tmp_path / "e0" / "metrics.json").read_text())["means"]["err3d"]
    assert after < before


def test_track_writes_outputs(data, tmp_path):
    assert run("track", "--config", data / "scene.json", "--out", tmp_path, "--observation", "fingertips_3d") == 0
    assert len(json.loads((tmp_path / "poses.json").read_text())["poses"]) == 3
    assert len((tmp_path / "innovations.csv").read_text().splitlines()) == 4


def test_contact_refine_writes_outputs(data, tmp_path):
    assert run("contact-refine", "--config", data / "fast.json", "--out", tmp_path, "--frame", 1) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert 0.0 <= summary["recall_before"] <= 1.0 and 0.0 <= summary["recall_after"] <= 1.0
    assert run("contact-refine", "--config", data / "fast.json", "--out", tmp_path, "--frame", 9) == 2


def test_gradcheck_exit_codes(tmp_path, monkeypatch):
    assert run("gradcheck", "--out", tmp_path, "--configs", 1) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["passed"] is True
    monkeypatch.setattr(cli, "run_gradcheck", lambda n_configs, seed: GradCheckSummary([], {"mask": 0.5}, 1))
    assert run("gradcheck", "--out", tmp_path, "--configs", 1) == 3


def test_chamfer_examples(rng):
    assert chamfer([[0.0]], [[1.0]]) == 2.0
    a = rng.normal(size=(30, 3))
    assert chamfer(a, a) == 0.0
    b = rng.normal(size=(20, 3))
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    assert chamfer(a, b) == pytest.approx(d.min(1).mean() + d.min(0).mean(), rel=1e-12)
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), a)


@given(st.integers(0, 10_000))
def test_chamfer_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(rng.integers(1, 15), 3)), rng.normal(size=(rng.integers(1, 15), 3))
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-12)
    assert chamfer(a, b) >= 0


def test_error_2d_examples():
    cam = Camera(100.0, 100.0, 50.0, 50.0, 100, 100)
    pts = np.array([[0.0, 0.0, 2.0], [0.1, 0.0, 2.0]])
    assert error_2d(pts, pts, cam) == 0.0
    # a 0.02 shift at depth 2 is one pixel
    assert error_2d(pts[:1], pts[:1] + (0.02, 0.0, 0.0), cam) == pytest.approx(2.0)
