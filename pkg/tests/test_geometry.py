import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hopose.geometry import (
    MeshError,
    TriMesh,
    box,
    build_sdf_index,
    capsule,
    contains_parity,
    icosphere,
    interpenetration_volume,
    load_obj,
    query_sdf,
    save_obj,
)


def closest_point_scalar(p, a, b, c):
    """Textbook region-by-region closest point on a triangle, one triangle at a time."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + d1 / (d1 - d3) * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + d2 / (d2 - d6) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


def brute_distance(mesh, p):
    return min(np.linalg.norm(p - closest_point_scalar(p, *mesh.vertices[f])) for f in mesh.faces)


def test_unit_cube_center_distance():
    idx = build_sdf_index(box((0.5, 0.5, 0.5)))
    assert query_sdf(idx, np.zeros(3)).distance == pytest.approx(-0.5, abs=1e-15)


def test_single_triangle_is_unsigned_only():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert not tri.watertight
    idx = build_sdf_index(tri)
    assert not idx.signed
    assert query_sdf(idx, np.array([0.2, 0.2, -0.5])).distance == pytest.approx(0.5)
    with pytest.raises(MeshError):
        build_sdf_index(tri, signed=True)


def test_mesh_validation():
    with pytest.raises(MeshError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    with pytest.raises(MeshError):
        TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    for m in (box(), icosphere(2), capsule(2.0, 0.5, n_length=3)):
        assert m.watertight
    flipped = TriMesh(box().vertices, np.concatenate([box().faces[:1, ::-1], box().faces[1:]]))
    assert not flipped.watertight


def test_icosphere_matches_scalar_brute_force(rng):
    mesh = icosphere(2)
    idx = build_sdf_index(mesh)
    pts = rng.uniform(-1.6, 1.6, (200, 3))
    got = idx.query_many(pts)
    want = np.array([brute_distance(mesh, p) for p in pts])
    np.testing.assert_allclose(np.abs(got.distance), want, atol=1e-12, rtol=0)


@pytest.mark.parametrize("mesh", [icosphere(2), box((1.0, 0.6, 0.3), 3), capsule(1.5, 0.4, 8, 2, 2)],
                         ids=["sphere", "box", "capsule"])
def test_tree_and_batch_equal_brute_force_bitwise(mesh, rng):
    idx = build_sdf_index(mesh)
    pts = rng.uniform(-2.0, 2.0, (200, 3))
    bf = idx.brute_force(pts)
    for res in (idx.query_many(pts), idx.query_tree(pts)):
        np.testing.assert_array_equal(res.face, bf.face)
        np.testing.assert_array_equal(res.distance, bf.distance)


def test_ties_resolve_to_lowest_face():
    idx = build_sdf_index(box())
    # the nearest feature is a corner vertex shared by several faces
    p = np.array([1.5, 1.5, 1.5])
    res = idx.brute_force(p[None])
    d2 = np.array([np.sum((p - closest_point_scalar(p, *idx.mesh.vertices[f])) ** 2) for f in idx.mesh.faces])
    assert res.face[0] == int(np.flatnonzero(d2 == d2.min())[0])
    assert idx.query_tree(p[None]).face[0] == res.face[0]


def test_sphere_analytic_distances():
    idx = build_sdf_index(icosphere(4))
    out = query_sdf(idx, np.array([3.0, 0.0, 0.0]))
    assert out.distance == pytest.approx(2.0, abs=5e-3)
    assert not out.in_contact
    inside = query_sdf(idx, np.array([0.0, 0.7, 0.0]))
    assert inside.distance == pytest.approx(-0.3, abs=5e-3)
    v = idx.mesh.vertices[5]
    on = query_sdf(idx, v)
    assert on.distance == 0.0
    assert on.in_contact


def test_normals_are_unit(rng):
    idx = build_sdf_index(box((1.0, 0.5, 0.7), 2))
    res = idx.query_many(rng.uniform(-2, 2, (300, 3)))
    np.testing.assert_allclose(np.linalg.norm(res.normal, axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("mesh", [icosphere(2), box((1.0, 0.6, 0.3), 3), capsule(1.5, 0.4, 8, 2, 2)],
                         ids=["sphere", "box", "capsule"])
def test_sign_matches_parity(mesh, rng):
    idx = build_sdf_index(mesh)
    lo, hi = mesh.bounds
    pts = rng.uniform(lo - 0.3, hi + 0.3, (1000, 3))
    inside = contains_parity(mesh, pts)
    np.testing.assert_array_equal(idx.query_many(pts).distance < 0, inside)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_sdf_is_one_lipschitz(xs):
    idx = _SPHERE_IDX
    p, q = np.array(xs[:3]), np.array(xs[3:])
    s = idx.query_many(np.stack([p, q])).distance
    assert abs(s[0] - s[1]) <= np.linalg.norm(p - q) + 1e-12


_SPHERE_IDX = build_sdf_index(icosphere(2))


def test_volume_disjoint_is_zero():
    a = box(center=(5.0, 0.0, 0.0))
    assert interpenetration_volume(a, build_sdf_index(box()), 16) == 0.0


@pytest.mark.parametrize("res", [16, 32])
def test_volume_cube_inside_cube(res):
    vol = interpenetration_volume(box((0.5, 0.5, 0.5)), build_sdf_index(box((1.0, 1.0, 1.0))), res)
    assert abs(vol - 1.0) <= 2.0 / res


@pytest.mark.parametrize("res", [16, 32])
def test_volume_overlapping_slab(res):
    vol = interpenetration_volume(box(center=(0.5, 0.0, 0.0)), build_sdf_index(box()), res)
    assert abs(vol - 0.5) <= 2.0 / res


def test_volume_converges():
    hand = icosphere(2, 0.8, center=(0.5, 0.2, 0.0))
    idx = build_sdf_index(icosphere(2))
    prev = None
    for res in (8, 16, 32, 64):
        vol = interpenetration_volume(hand, idx, res)
        if prev is not None:
            lo, hi = hand.bounds
            h_prev = (np.minimum(hi, 1.0) - np.maximum(lo, -1.0)).max() / (res // 2)
            assert abs(vol - prev) < h_prev  # bound from the coarser grid's voxel size
        prev = vol


def test_volume_rejects_open_mesh():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        interpenetration_volume(tri, build_sdf_index(box()), 16)
    with pytest.raises(ValueError):
        interpenetration_volume(box(), build_sdf_index(box()), 4)


def test_obj_round_trip_and_fan(tmp_path):
    m = box((1.0, 2.0, 3.0), 2)
    save_obj(m, tmp_path / "m.obj")
    back = load_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.faces, m.faces)
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nusemtl x\nf 1/1 2/2 3/3 4/4\n")
    q = load_obj(tmp_path / "q.obj")
    assert q.faces.tolist() == [[0, 1, 2], [0, 2, 3]]
