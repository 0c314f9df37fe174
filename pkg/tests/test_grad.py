import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hopose.ekf import ObservationModel
from hopose.grad import (
    NonFiniteLoss,
    ParamLayout,
    evaluate_with_gradient,
    finite_difference_gradient,
    finite_difference_jacobian,
    jacobian,
    pack,
    split_tensor,
    unpack,
    write_gradcheck_csv,
    gradcheck_rows,
)
from hopose.model import PoseState


def random_state(model, seed):
    rng = np.random.default_rng(seed)
    return PoseState(rng.normal(0, 0.3, model.theta_dim), rng.normal(size=model.n_betas), rng.uniform(-3, 3, 3),
                     rng.normal(size=3))


def test_pack_round_trip(toy):
    s = random_state(toy, 0)
    assert unpack(pack(s)).equals(s)
    p = pack(s, frozen=("beta",))
    assert "beta" in p.layout.frozen
    assert unpack(p).equals(s)


def test_layout_length_for_toy_hand(toy):
    assert ParamLayout.for_model(toy).length == 3 * 16 + 6 + 10 + 3 + 3 == 70


def test_constant_and_quadratic(toy):
    p = pack(random_state(toy, 1))
    assert np.all(evaluate_with_gradient(lambda x: torch.tensor(3.0, dtype=torch.float64), p).gradient == 0)

    def quad(x):
        t = split_tensor(p.layout, x)["obj_t"]
        return (t * t).sum()

    g = evaluate_with_gradient(quad, p).gradient
    want = np.zeros(p.layout.length)
    want[p.layout.slice("obj_t")] = 2 * p.span("obj_t")
    np.testing.assert_array_equal(g, want)


def test_frozen_span_gets_zero_gradient(toy):
    p = pack(random_state(toy, 2), frozen=("obj_t", "theta"))
    g = evaluate_with_gradient(lambda x: (x * x).sum(), p).gradient
    assert np.all(g[p.layout.slice("obj_t")] == 0)
    assert np.all(g[p.layout.slice("theta")] == 0)
    assert np.all(g[p.layout.slice("beta")] != 0)


def test_non_finite_loss_names_term(toy):
    p = pack(random_state(toy, 3))

    def bad(x):
        return x.sum(), {"mask": torch.tensor(float("nan"))}

    with pytest.raises(NonFiniteLoss) as e:
        evaluate_with_gradient(bad, p)
    assert e.value.term == "mask"


def test_gimbal_lock_diagnostic(toy):
    s = random_state(toy, 4).replace(obj_r=np.array([0.1, np.pi / 2, 0.2]))
    res = evaluate_with_gradient(lambda x: x.sum(), pack(s))
    assert res.diagnostics


@given(st.integers(0, 1000), st.floats(0.1, 10))
def test_gradient_linearity(seed, w):
    rng = np.random.default_rng(seed)
    p = pack(PoseState(rng.normal(size=6), rng.normal(size=2), rng.normal(size=3), rng.normal(size=3)))

    def f1(x):
        return (torch.sin(x) ** 2).sum()

    def f2(x):
        return (x ** 3).sum()

    g1 = evaluate_with_gradient(f1, p).gradient
    g2 = evaluate_with_gradient(f2, p).gradient
    gs = evaluate_with_gradient(lambda x: f1(x) + f2(x), p).gradient
    gw = evaluate_with_gradient(lambda x: w * f1(x), p).gradient
    np.testing.assert_allclose(gs, g1 + g2, rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(gw, w * g1, rtol=1e-14, atol=1e-14)


def test_gradients_are_deterministic(toy):
    p = pack(random_state(toy, 5))

    def f(x):
        from hopose.model import skin_torch

        return skin_torch(toy, split_tensor(p.layout, x)["theta"], split_tensor(p.layout, x)["beta"]).pow(2).sum()

    a = evaluate_with_gradient(f, p).gradient
    b = evaluate_with_gradient(f, p).gradient
    assert np.array_equal(a, b)


def test_jacobian_identity_and_linear(rng):
    x = rng.normal(size=5)
    np.testing.assert_array_equal(jacobian(lambda v: v, x), np.eye(5))
    A = rng.normal(size=(3, 5))
    At = torch.tensor(A)
    np.testing.assert_allclose(jacobian(lambda v: At @ v, x), A, atol=1e-15)
    np.testing.assert_allclose(jacobian(lambda v: At @ v, x, method="fd"), A, atol=1e-9)


def test_fingertip_jacobian_matches_fd(toy):
    s = random_state(toy, 6)
    om = ObservationModel("fingertips_3d", toy.selector("fingertips"))
    beta = torch.tensor(s.beta)

    def h(th):
        return om.torch(toy, beta, th, torch.zeros(3))

    Ja = jacobian(h, s.theta)
    Jn = finite_difference_jacobian(lambda v: h(torch.tensor(v)).numpy(), s.theta, 1e-5)
    np.testing.assert_allclose(Ja, Jn, rtol=1e-3, atol=1e-7)


def test_fd_gradient_quadratic():
    g = finite_difference_gradient(lambda v: float(v @ v), np.array([1.0, -2.0]), 1e-5)
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-9)


def test_gradcheck_csv(tmp_path):
    rows = gradcheck_rows("mask", np.array([1.0, 2.0]), np.array([1.0, 2.0 + 1e-9]))
    write_gradcheck_csv(rows, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "term,index,analytic,numeric,rel_err"
    assert len(lines) == 3
