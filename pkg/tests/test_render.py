import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from hopose.io import dump_float32, load_float32, read_label_png, read_png, read_pnm, write_label_png, write_png, write_pnm
from hopose.render import (
    Camera,
    MaskImage,
    project,
    rasterize_gradient,
    rasterize_hard,
    rasterize_layers,
    rasterize_soft,
)

CAM = Camera(100.0, 100.0, 50.0, 50.0, 100, 100)


def signed_dist_2d(p, tri):
    """Positive inside: min distance to the three edges, sign from barycentric inclusion."""
    def seg(p, a, b):
        ab = b - a
        t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(p - (a + t * ab))

    d = min(seg(p, tri[i], tri[(i + 1) % 3]) for i in range(3))
    a, b, c = tri
    area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    w = [((b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])) / area,
         ((c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])) / area]
    inside = w[0] >= 0 and w[1] >= 0 and 1 - w[0] - w[1] >= 0
    return d if inside else -d


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def small_cam(n=12):
    return Camera(float(n), float(n), n / 2, n / 2, n, n)


def test_project_examples():
    uv, z, flag = project(CAM, np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 1.0]]))
    np.testing.assert_allclose(uv, [[50.0, 50.0], [60.0, 50.0]])
    np.testing.assert_allclose(z, [1.0, 1.0])
    assert not flag.any()
    _, z, flag = project(CAM, np.array([[0.0, 0.0, -1.0]]))
    assert flag[0] and z[0] == pytest.approx(1e-4)


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.floats(0.5, 20))
def test_doubling_depth_halves_offset(xy, z):
    p = np.array([[xy[0], xy[1], z]])
    uv1, _, _ = project(CAM, p)
    uv2, _, _ = project(CAM, p * [1.0, 1.0, 2.0])
    np.testing.assert_allclose(uv2 - [50, 50], 0.5 * (uv1 - [50, 50]), atol=1e-12)


def test_no_faces_is_empty():
    img = rasterize_soft(CAM, np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    assert np.all(img.occupancy == 0)


def test_interior_saturates():
    v = np.array([[-1.0, -1.0, 2.0], [1.0, -1.0, 2.0], [0.0, 1.0, 2.0]])
    img = rasterize_soft(CAM, v, [[0, 1, 2]], sigma=1e-3)
    assert img.occupancy[50, 50] == pytest.approx(1.0)
    assert img.occupancy[95, 5] == pytest.approx(0.0)


def test_two_triangles_union_matches_formula():
    cam = small_cam(16)
    v = np.array([[-0.6, -0.5, 1.0], [-0.1, -0.5, 1.0], [-0.35, 0.3, 1.0],
                  [0.1, -0.2, 1.0], [0.6, -0.2, 1.0], [0.3, 0.5, 1.0]])
    faces = [[0, 1, 2], [3, 4, 5]]
    sigma = 0.7
    img = rasterize_soft(cam, v, faces, sigma=sigma)
    uv, _, _ = project(cam, v)
    want = np.zeros((16, 16))
    for r in range(16):
        for c in range(16):
            p = np.array([c + 0.5, r + 0.5])
            d = [sigmoid(signed_dist_2d(p, uv[f]) / sigma) for f in faces]
            want[r, c] = 1.0 - (1.0 - d[0]) * (1.0 - d[1])
    np.testing.assert_allclose(img.occupancy, want, atol=1e-12)


def _random_scene(seed, n_faces=2):
    rng = np.random.default_rng(seed)
    v = np.concatenate([rng.uniform(-0.5, 0.5, (3 * n_faces, 2)), rng.uniform(1.5, 2.5, (3 * n_faces, 1))], axis=1)
    return v, np.arange(3 * n_faces).reshape(n_faces, 3)


@given(st.integers(0, 10_000), st.floats(0.2, 1.0))
def test_occupancy_monotone_in_sigma_outside(seed, s1):
    cam = small_cam()
    v, f = _random_scene(seed)
    lo = rasterize_soft(cam, v, f, sigma=s1).occupancy
    hi = rasterize_soft(cam, v, f, sigma=s1 * 1.5).occupancy
    hard = rasterize_hard(cam, [(v, f, 1)]) > 0
    # pixels outside every triangle and still inside the candidate band
    outside = ~hard & (lo > 1e-12)
    assert np.all(hi[outside] >= lo[outside])


@given(st.integers(0, 10_000))
def test_face_order_invariance(seed):
    cam = small_cam()
    v, f = _random_scene(seed, 3)
    a = rasterize_soft(cam, v, f, sigma=0.5).occupancy
    b = rasterize_soft(cam, v, f[::-1], sigma=0.5).occupancy
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_small_sigma_converges_to_hard():
    cam = small_cam(20)
    v, f = _random_scene(3, 2)
    soft = rasterize_soft(cam, v, f, sigma=1e-4).occupancy
    hard = (rasterize_hard(cam, [(v, f, 1)]) > 0).astype(float)
    uv, _, _ = project(cam, v)
    far = np.ones((20, 20), dtype=bool)
    for r in range(20):
        for c in range(20):
            p = np.array([c + 0.5, r + 0.5])
            far[r, c] = all(abs(signed_dist_2d(p, uv[t])) >= 2.0 for t in f)
    assert far.sum() > 50
    np.testing.assert_allclose(soft[far], hard[far], atol=1e-12)


def test_gradient_zero_upstream():
    v, f = _random_scene(0)
    g = rasterize_gradient(small_cam(), v, f, np.zeros((12, 12)), sigma=0.5)
    assert np.all(g == 0)


def _fd_grad(cam, v, f, up, sigma, h=1e-5):
    g = np.zeros_like(v)
    for i in range(v.shape[0]):
        for k in range(3):
            vp, vm = v.copy(), v.copy()
            vp[i, k] += h
            vm[i, k] -= h
            fp = (rasterize_soft(cam, vp, f, sigma=sigma).occupancy * up).sum()
            fm = (rasterize_soft(cam, vm, f, sigma=sigma).occupancy * up).sum()
            g[i, k] = (fp - fm) / (2 * h)
    return g


def test_gradient_single_pixel_fd():
    cam = small_cam()
    v, f = _random_scene(1, 1)
    up = np.zeros((12, 12))
    up[6, 6] = 1.0
    ga = rasterize_gradient(cam, v, f, up, sigma=0.8)
    gn = _fd_grad(cam, v, f, up, 0.8)
    scale = np.abs(gn).max()
    assert scale > 0
    np.testing.assert_allclose(ga, gn, rtol=1e-4, atol=1e-4 * scale)


def test_gradient_fd_random_scenes():
    cam = small_cam(10)
    worst = 0.0
    for seed in range(20):
        v, f = _random_scene(seed, 2)
        up = np.random.default_rng(seed).normal(size=(10, 10))
        ga = rasterize_gradient(cam, v, f, up, sigma=0.6)
        gn = _fd_grad(cam, v, f, up, 0.6)
        err = np.abs(ga - gn) / np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-6 * max(1.0, np.abs(gn).max()))
        worst = max(worst, err.max())
    assert worst < 1e-3


def test_colour_prefers_nearer_face():
    cam = small_cam(8)
    near = np.array([[-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [0.0, 1.0, 1.0]])
    far = near * [1, 1, 2]
    v = np.concatenate([near, far])
    img = rasterize_soft(cam, v, [[0, 1, 2], [3, 4, 5]], sigma=0.05, face_colors=[[1, 0, 0], [0, 0, 1]],
                         gamma=1e-2, z_near=1.0)
    np.testing.assert_allclose(img.rgb[4, 4], [1.0, 0.0, 0.0], atol=1e-6)
    assert np.all((img.rgb >= 0) & (img.rgb <= 1))


def test_layers_channels_respect_depth():
    cam = small_cam(12)
    big = np.array([[-2.0, -2.0, 3.0], [2.0, -2.0, 3.0], [0.0, 2.0, 3.0]])
    small = np.array([[-0.3, -0.3, 1.0], [0.3, -0.3, 1.0], [0.0, 0.3, 1.0]])
    img = rasterize_layers(cam, [("hand", torch.tensor(small), [[0, 1, 2]]), ("object", torch.tensor(big), [[0, 1, 2]])],
                           sigma=0.05, depth_tau=0.05)
    h, o = img.channels["hand"].numpy(), img.channels["object"].numpy()
    assert h[6, 6] > 0.99 and o[6, 6] < 0.01
    assert o[1, 6] > 0.99 and h[1, 6] < 0.01
    assert np.all((img.occupancy.numpy() >= 0) & (img.occupancy.numpy() <= 1))


def test_mask_image_labels():
    with pytest.raises(ValueError):
        MaskImage(np.array([[0, 3]]))
    m = MaskImage(np.array([[0, 1], [2, 2]]))
    assert m.hand.sum() == 1 and m.obj.sum() == 2 and m.foreground.sum() == 3


def test_image_formats_round_trip(tmp_path, rng):
    grey = rng.random((5, 7))
    rgb = rng.random((5, 7, 3))
    write_png(tmp_path / "g8.png", grey)
    np.testing.assert_allclose(read_png(tmp_path / "g8.png"), grey, atol=0.5 / 255)
    write_png(tmp_path / "g16.png", grey, bits=16)
    np.testing.assert_allclose(read_png(tmp_path / "g16.png"), grey, atol=0.5 / 65535)
    write_png(tmp_path / "c.png", rgb)
    np.testing.assert_allclose(read_png(tmp_path / "c.png"), rgb, atol=0.5 / 255)
    write_pnm(tmp_path / "g.pgm", grey)
    np.testing.assert_allclose(read_pnm(tmp_path / "g.pgm"), grey, atol=0.5 / 255)
    write_pnm(tmp_path / "c.ppm", rgb)
    np.testing.assert_allclose(read_pnm(tmp_path / "c.ppm"), rgb, atol=0.5 / 255)
    dump_float32(tmp_path / "o.f32", grey)
    np.testing.assert_array_equal(load_float32(tmp_path / "o.f32", grey.shape), grey.astype(np.float32))
    m = MaskImage(rng.integers(0, 3, (4, 6)))
    write_label_png(tmp_path / "m.png", m)
    np.testing.assert_array_equal(read_label_png(tmp_path / "m.png").labels, m.labels)


def test_contour_mode_gradients_match_fd_across_seams():
    """Contour-mode colour and silhouette are smooth as pixels cross interior seams and the band edge."""
    from scipy.spatial.transform import Rotation

    from hopose.geometry import box

    cam = small_cam(16)
    mesh = box((0.3, 0.25, 0.2), 2)
    colors = np.random.default_rng(0).random((len(mesh.faces), 3))
    worst = 0.0
    for seed in range(6):
        rng = np.random.default_rng(seed)
        R = Rotation.random(random_state=seed).as_matrix()
        v0 = mesh.vertices @ R.T + (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 2.0)
        up = torch.as_tensor(rng.normal(size=(16, 16, 3)))

        def f(v):
            img = rasterize_soft(cam, v, mesh.faces, sigma=0.4, face_colors=colors, z_near=2.0, cutoff=8.0,
                                 contour_mode=True)
            return (img.rgb * up).sum() + (img.occupancy * up[..., 0]).sum()

        V = torch.tensor(v0, requires_grad=True)
        f(V).backward()
        for i, k in zip(rng.integers(0, len(v0), 6), rng.integers(0, 3, 6)):
            vp, vm = v0.copy(), v0.copy()
            vp[i, k] += 1e-6
            vm[i, k] -= 1e-6
            num = (float(f(torch.tensor(vp))) - float(f(torch.tensor(vm)))) / 2e-6
            ana = float(V.grad[i, k])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-3))
    assert worst < 1e-3
