"""Pinhole projection and a soft silhouette/colour rasterizer.

Each face influences pixel ``p`` through ``d = sigmoid(delta / sigma)``
where ``delta`` is the signed 2D distance from the pixel centre to the
projected triangle (positive inside). Occupancy is the probabilistic union
``1 - prod(1 - d)``, evaluated in log space as ``1 - exp(-sum softplus)``.
Colours and per-group channels blend faces with depth-weighted softmax
weights ``d * exp((z_near / z) / gamma)`` and are premultiplied by
occupancy, so the background stays black.

Pixel centres sit at (col + 0.5, row + 0.5). Face/pixel pairs are found from
projected bounding boxes grown by ``cutoff * sigma``. So that the image
stays continuous as pairs enter or leave that band, each pair's hazard
``softplus(delta / sigma)`` fades to zero over the last ``TAPER`` logits of
the band with a C1 smoothstep; ``d = 1 - exp(-hazard)`` equals the sigmoid
everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

NEAR_EPS = 1e-4
DEFAULT_GAMMA = 1e-2
DEFAULT_CUTOFF = 35.0
TAPER = 1.0  # width of the fade at the edge of the candidate band, in logits
BACKGROUND, HAND, OBJECT = 0, 1, 2


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    @property
    def default_sigma(self) -> float:
        return 1e-4 * self.diagonal

    def to_dict(self):
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)


def project(camera: Camera, points):
    """Pixel coordinates and depth of camera-frame points.

    Depths at or below ``NEAR_EPS`` are clamped; the returned mask flags
    those points. Works on numpy arrays and torch tensors.
    """
    if isinstance(points, torch.Tensor):
        z = points[:, 2]
        flagged = (z <= NEAR_EPS).detach().numpy()
        z = torch.clamp(z, min=NEAR_EPS)
        u = camera.fx * points[:, 0] / z + camera.cx
        v = camera.fy * points[:, 1] / z + camera.cy
        return torch.stack([u, v], dim=1), z, flagged
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    flagged = pts[:, 2] <= NEAR_EPS
    z = np.maximum(pts[:, 2], NEAR_EPS)
    uv = np.stack([camera.fx * pts[:, 0] / z + camera.cx, camera.fy * pts[:, 1] / z + camera.cy], axis=1)
    return uv, z, flagged


@dataclass
class SoftImage:
    occupancy: object  # (H, W)
    rgb: object = None  # (H, W, 3)
    channels: dict = field(default_factory=dict)  # group name -> (H, W)

    def numpy(self) -> "SoftImage":
        def conv(x):
            return x.detach().numpy() if isinstance(x, torch.Tensor) else x

        return SoftImage(conv(self.occupancy), conv(self.rgb), {k: conv(v) for k, v in self.channels.items()})


@dataclass(frozen=True)
class MaskImage:
    labels: np.ndarray  # (H, W) uint8 in {0, 1, 2}

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("mask must be 2D")
        if not np.all(np.isin(lab, (BACKGROUND, HAND, OBJECT))):
            raise ValueError("mask labels must be 0 (background), 1 (hand) or 2 (object)")
        object.__setattr__(self, "labels", lab.astype(np.uint8))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def hand(self) -> np.ndarray:
        return (self.labels == HAND).astype(np.float64)

    @property
    def obj(self) -> np.ndarray:
        return (self.labels == OBJECT).astype(np.float64)

    @property
    def foreground(self) -> np.ndarray:
        return (self.labels != BACKGROUND).astype(np.float64)


def _pairs(uv: np.ndarray, faces: np.ndarray, width: int, height: int, margin: float):
    """(pixel, face) candidate pairs from margin-grown projected boxes, pixel-major."""
    tri = uv[faces]  # (F, 3, 2)
    lo = tri.min(axis=1) - margin
    hi = tri.max(axis=1) + margin
    # pixel centre c + 0.5 inside [lo, hi]
    c0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, width).astype(np.int64)
    c1 = np.clip(np.floor(hi[:, 0] - 0.5) + 1, 0, width).astype(np.int64)
    r0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, height).astype(np.int64)
    r1 = np.clip(np.floor(hi[:, 1] - 0.5) + 1, 0, height).astype(np.int64)
    nc = np.maximum(c1 - c0, 0)
    nr = np.maximum(r1 - r0, 0)
    cnt = nc * nr
    total = int(cnt.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    face = np.repeat(np.arange(len(faces)), cnt)
    local = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    ncf = nc[face]
    row = r0[face] + local // ncf
    col = c0[face] + local % ncf
    pix = row * width + col
    order = np.lexsort((face, pix))
    return pix[order], face[order]


def front_facing(vertices, faces) -> np.ndarray:
    """Faces whose winding normal points towards the camera centre."""
    v = np.asarray(vertices, dtype=np.float64)
    tri = v[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return (n * tri[:, 0]).sum(-1) < 0.0


def edge_neighbors(faces: np.ndarray) -> np.ndarray:
    """(F, 3) index of the face across edges ab, bc, ca; -1 on open edges."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    n = int(faces.max()) + 1
    src = faces.reshape(-1)
    dst = faces[:, [1, 2, 0]].reshape(-1)
    key = src * n + dst
    rev = dst * n + src
    order = np.argsort(key, kind="stable")
    pos = np.minimum(np.searchsorted(key[order], rev), len(key) - 1)
    hit = key[order][pos] == rev
    return np.where(hit, order[pos] // 3, -1).reshape(-1, 3)


def contour_edges(vertices, faces):
    """Front-facing mask and (F, 3) flags marking silhouette edges of front faces."""
    front = front_facing(vertices, faces)
    nb = edge_neighbors(faces)
    contour = front[:, None] & ((nb < 0) | ~front[np.maximum(nb, 0)])
    return front, contour


def contour_vertices(faces, contour, n_vertices: int) -> np.ndarray:
    """Vertices lying on any silhouette edge."""
    on = np.zeros(n_vertices, dtype=bool)
    faces = np.asarray(faces, dtype=np.int64)
    for k in range(3):
        on[faces[contour[:, k], k]] = True
        on[faces[contour[:, k], (k + 1) % 3]] = True
    return on


def _closest_on_segment(p, s, e):
    d = e - s
    dd = (d * d).sum(-1)
    t = ((p - s) * d).sum(-1) / torch.clamp(dd, min=1e-300)
    t = torch.clamp(t, 0.0, 1.0)
    return s + t[:, None] * d


def _signed_distance(p, a, b, c, contour=None, contour_verts=None, cap=None):
    """Signed distance from 2D points to triangles, positive inside.

    With ``contour`` (N, 3) edge flags, ``contour_verts`` (N, 3) vertex flags
    and the band width ``cap``, seams between adjacent faces are not
    boundaries: a point inside measures its distance ``v`` to the silhouette
    features (edges and vertices) of its face, capped at ``cap``. A point
    outside, at distance ``r`` from its closest point ``q`` on the triangle,
    gets ``v(q) * (1 - r / cap) - r``, which is continuous across seams and
    reduces to ``-r`` beyond a silhouette edge.
    """
    def seg_d2(p, s, e):
        return ((p - _closest_on_segment(p, s, e)) ** 2).sum(-1)

    e = (seg_d2(p, a, b), seg_d2(p, b, c), seg_d2(p, c, a))
    d2 = torch.minimum(torch.minimum(e[0], e[1]), e[2])

    def cross(s, e):
        return (e[:, 0] - s[:, 0]) * (p[:, 1] - s[:, 1]) - (e[:, 1] - s[:, 1]) * (p[:, 0] - s[:, 0])

    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    s = torch.sign(area).detach()
    w0, w1, w2 = cross(a, b) * s, cross(b, c) * s, cross(c, a) * s
    inside = (w0 > 0) & (w1 > 0) & (w2 > 0) & (s != 0)
    if contour is None:
        dist = torch.sqrt(d2)
        return torch.where(inside, dist, -dist)
    flags = torch.from_numpy(contour)
    vflags = torch.from_numpy(contour_verts)
    # closest point on the triangle: p itself inside, else on the nearest edge
    qs = torch.stack([_closest_on_segment(p, a, b), _closest_on_segment(p, b, c), _closest_on_segment(p, c, a)], 1)
    k = torch.stack(e, 1).argmin(1)
    q = torch.where(inside[:, None], p, qs[torch.arange(len(p)), k])
    big = torch.full_like(d2, 1e12)
    feats = [torch.where(flags[:, i], seg_d2(q, s0, s1), big) for i, (s0, s1) in enumerate(((a, b), (b, c), (c, a)))]
    feats += [torch.where(vflags[:, i], ((q - v) ** 2).sum(-1), big) for i, v in enumerate((a, b, c))]
    c2 = torch.stack(feats, 1).min(1).values
    v = torch.clamp(torch.sqrt(torch.clamp(c2, min=1e-300)), max=cap)
    r = torch.sqrt(torch.clamp(torch.where(inside, torch.zeros_like(d2), d2), min=1e-300))
    return torch.where(inside, v, v * torch.clamp(1.0 - r / cap, min=0.0) - r)


class _Coverage:
    """Influence logits ``delta / sigma`` of one mesh for its (pixel, face) pairs."""

    def __init__(self, camera: Camera, V, faces, sigma, cutoff, contour_mode):
        H, W = camera.height, camera.width
        self.n_pix = H * W
        uv, self.z, _ = project(camera, V)
        pix, fid = _pairs(uv.detach().numpy(), faces, W, H, cutoff * sigma)
        flags = vflags = None
        if contour_mode:
            front, contour = contour_edges(V.detach().numpy(), faces)
            on = contour_vertices(faces, contour, len(V))
            keep = front[fid]
            pix, fid = pix[keep], fid[keep]
            flags, vflags = contour[fid], on[faces[fid]]
        self.faces = faces
        self.pix, self.fid = pix, fid
        self.pix_t, self.fid_t = torch.from_numpy(pix), torch.from_numpy(fid)
        if len(pix) == 0:
            self.x = self.hazard = self.log_d = torch.zeros(0, dtype=torch.float64)
            return
        rows, cols = pix // W, pix % W
        centers = torch.from_numpy(np.stack([cols + 0.5, rows + 0.5], axis=1).astype(np.float64))
        f = torch.from_numpy(faces[fid])
        self._centers, self._uv, self._f = centers, uv, f
        x = _signed_distance(centers, uv[f[:, 0]], uv[f[:, 1]], uv[f[:, 2]], flags, vflags, cutoff * sigma) / sigma
        # pairs at or past the band edge contribute exactly nothing
        keep = torch.nonzero(x.detach() > -cutoff).reshape(-1)
        x = x[keep]
        k = keep.numpy()
        self.pix, self.fid = pix[k], fid[k]
        self.pix_t, self.fid_t = torch.from_numpy(self.pix), torch.from_numpy(self.fid)
        self._centers, self._f = centers[keep], f[keep]
        self.x = x
        s = torch.clamp((x + cutoff) / TAPER, 0.0, 1.0)
        self.hazard = torch.nn.functional.softplus(x) * (s * s * (3.0 - 2.0 * s))
        self.log_d = torch.log(-torch.expm1(-self.hazard))  # log of the pair's coverage d

    def occupancy(self):
        acc = torch.zeros(self.n_pix, dtype=torch.float64).index_add(0, self.pix_t, self.hazard)
        return 1.0 - torch.exp(-acc)

    def pair_depth(self):
        return self.z[torch.tensor(self.faces)].mean(dim=1)[self.fid_t]

    def pair_depth_at_pixel(self):
        """Perspective-correct depth of each face's plane at its pixel centre.

        Barycentric weights are clamped to the triangle for pixels outside it.
        """
        p, f, uv = self._centers, self._f, self._uv
        a, b, c = uv[f[:, 0]], uv[f[:, 1]], uv[f[:, 2]]

        def cross(s, e, q):
            return (e[:, 0] - s[:, 0]) * (q[:, 1] - s[:, 1]) - (e[:, 1] - s[:, 1]) * (q[:, 0] - s[:, 0])

        area = cross(a, b, c)
        area = torch.where(area.abs() > 1e-12, area, torch.full_like(area, 1e-12))
        w = torch.stack([cross(b, c, p), cross(c, a, p), cross(a, b, p)], dim=1) / area[:, None]
        w = torch.clamp(w, min=0.0)
        w = w / torch.clamp(w.sum(1, keepdim=True), min=1e-12)
        iz = 1.0 / self.z[f]
        return 1.0 / (w * iz).sum(1)

    def softmax(self, logit):
        """Per-pixel normalised weights of the pair logits (peak treated as constant)."""
        peak = torch.full((self.n_pix,), -torch.inf, dtype=torch.float64).scatter_reduce(
            0, self.pix_t, logit.detach(), reduce="amax", include_self=True
        )
        w = torch.exp(logit - peak[self.pix_t])
        wsum = torch.zeros(self.n_pix, dtype=torch.float64).index_add(0, self.pix_t, w)
        return w, torch.where(wsum > 0, wsum, torch.ones_like(wsum))

    def blend(self, w, norm, values):
        acc = torch.zeros((self.n_pix,) + values.shape[1:], dtype=torch.float64).index_add(0, self.pix_t, w.reshape((-1,) + (1,) * (values.dim() - 1)) * values)
        return acc / norm.reshape((-1,) + (1,) * (values.dim() - 1))


def rasterize_soft(
    camera: Camera,
    vertices,
    faces,
    sigma: float | None = None,
    face_colors=None,
    gamma: float = DEFAULT_GAMMA,
    z_near: float | None = None,
    face_groups=None,
    group_names=(),
    cutoff: float = DEFAULT_CUTOFF,
    contour_mode: bool = False,
) -> SoftImage:
    """Soft rasterization of a triangle soup.

    Parameters
    ----------
    vertices : (N, 3) camera-frame points, numpy or torch (torch keeps the graph)
    faces : (F, 3) int
    sigma : softness in pixels, defaults to ``camera.default_sigma``
    face_colors : optional (F, 3) albedo in [0, 1]
    gamma : depth softmax temperature
    z_near : depth scale for the softmax, defaults to the smallest vertex depth
        (treated as a constant for differentiation)
    face_groups, group_names : optional per-face group ids and the names of the
        groups; each named group gets a visibility-weighted channel
    contour_mode : for closed meshes. Back faces are dropped and distances are
        taken to silhouette edges and vertices only, so the soft silhouette
        crosses 0.5 on the true contour, has no seams inside, and stays
        continuous as a pixel crosses from one face to its neighbour.
    """
    sigma = camera.default_sigma if sigma is None else float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    as_numpy = not isinstance(vertices, torch.Tensor)
    V = torch.as_tensor(np.asarray(vertices, dtype=np.float64)) if as_numpy else vertices
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    H, W = camera.height, camera.width

    cov = _Coverage(camera, V, faces, sigma, cutoff, contour_mode)
    if len(cov.pix) == 0:
        zero = torch.zeros((H, W), dtype=torch.float64)
        img = SoftImage(zero, None if face_colors is None else torch.zeros((H, W, 3), dtype=torch.float64),
                        {g: zero for g in group_names})
        return img.numpy() if as_numpy else img
    occupancy = cov.occupancy()

    rgb = None
    channels = {}
    if face_colors is not None or len(group_names) > 0:
        zn = float(cov.z.detach().min()) if z_near is None else float(z_near)
        w, norm = cov.softmax(cov.log_d + (zn / cov.pair_depth()) / gamma)
        if face_colors is not None:
            col = torch.as_tensor(np.asarray(face_colors, dtype=np.float64))[cov.fid_t]
            rgb = (occupancy[:, None] * cov.blend(w, norm, col)).reshape(H, W, 3)
        if group_names:
            grp = np.asarray(face_groups, dtype=np.int64)[cov.fid]
            for g, name in enumerate(group_names):
                share = cov.blend(w, norm, torch.from_numpy((grp == g).astype(np.float64)))
                channels[name] = (occupancy * share).reshape(H, W)

    img = SoftImage(occupancy.reshape(H, W), rgb, channels)
    return img.numpy() if as_numpy else img


def _same_pixel(pix_a: np.ndarray, pix_b: np.ndarray):
    """All index pairs (i, k) with ``pix_a[i] == pix_b[k]``."""
    order = np.argsort(pix_b, kind="stable")
    pb = pix_b[order]
    start = np.searchsorted(pb, pix_a, side="left")
    count = np.searchsorted(pb, pix_a, side="right") - start
    ia = np.repeat(np.arange(len(pix_a)), count)
    within = np.arange(len(ia)) - np.repeat(np.cumsum(count) - count, count)
    return ia, order[np.repeat(start, count) + within]


def rasterize_layers(camera: Camera, layers, sigma: float | None = None, depth_tau: float = 0.5,
                     cutoff: float = DEFAULT_CUTOFF, contour_mode: bool = False) -> SoftImage:
    """Soft render of several meshes with face-level occlusion between them.

    ``layers`` is a sequence of ``(name, vertices, faces)``. A face ``j`` of
    one layer covers a pixel with ``d_j = sigmoid(delta_j / sigma)`` and is
    seen through the other layers with transmittance
    ``T_j = exp(-sum_k softplus(delta_k / sigma) * sigmoid((z_j - z_k) / depth_tau))``
    over the other layers' faces ``k`` at that pixel, where depths are the
    faces' interpolated depths there. The layer's channel is
    ``1 - prod_j (1 - d_j T_j)``. Faces of one layer never occlude each
    other, so a layer can be partly in front of and partly behind another at
    the same pixel. The returned occupancy is the union over all layers.
    """
    sigma = camera.default_sigma if sigma is None else float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    H, W = camera.height, camera.width
    n_pix = H * W
    covs, depth, hazard = {}, {}, {}
    for name, vertices, faces in layers:
        V = vertices if isinstance(vertices, torch.Tensor) else torch.as_tensor(np.asarray(vertices, dtype=np.float64))
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        cov = _Coverage(camera, V, faces, sigma, cutoff, contour_mode)
        covs[name] = cov
        if len(cov.pix):
            depth[name] = cov.pair_depth_at_pixel()
            hazard[name] = cov.hazard
    names = [n for n, _, _ in layers]
    channels = {}
    empty = torch.ones(n_pix, dtype=torch.float64)
    for c in names:
        cov = covs[c]
        if len(cov.pix) == 0:
            channels[c] = torch.zeros((H, W), dtype=torch.float64)
            continue
        front = torch.zeros(len(cov.pix), dtype=torch.float64)
        for o in names:
            if o == c or len(covs[o].pix) == 0:
                continue
            ia, ik = _same_pixel(cov.pix, covs[o].pix)
            ia_t, ik_t = torch.from_numpy(ia), torch.from_numpy(ik)
            h = hazard[o][ik_t] * torch.sigmoid((depth[c][ia_t] - depth[o][ik_t]) / depth_tau)
            front = front.index_add(0, ia_t, h)
        # log(1 - d T) = logaddexp(log(1 - d), log d + log(1 - T))
        occluded = front > 1e-300
        safe = torch.where(occluded, front, torch.ones_like(front))
        log_1mt = torch.where(occluded, torch.log(-torch.expm1(-safe)), torch.full_like(front, -torch.inf))
        term = torch.logaddexp(-hazard[c], cov.log_d + log_1mt)
        log_empty = torch.zeros(n_pix, dtype=torch.float64).index_add(0, cov.pix_t, term)
        channels[c] = (1.0 - torch.exp(log_empty)).reshape(H, W)
        empty = empty * (1.0 - cov.occupancy())
    return SoftImage((1.0 - empty).reshape(H, W), None, channels)


def rasterize_gradient(camera: Camera, vertices, faces, upstream, sigma: float | None = None, **kw) -> np.ndarray:
    """Adjoint of ``sum(upstream * occupancy)`` with respect to the vertices."""
    V = torch.tensor(np.asarray(vertices, dtype=np.float64), requires_grad=True)
    up = torch.as_tensor(np.asarray(upstream, dtype=np.float64))
    img = rasterize_soft(camera, V, faces, sigma=sigma, **kw)
    (img.occupancy * up).sum().backward()
    return V.grad.numpy()


def zbuffer(camera: Camera, layers):
    """Nearest covering (layer, face) per pixel; -1 where nothing covers.

    ``layers`` is a sequence of ``(vertices, faces)``. Depth is interpolated
    as 1/z in screen space.
    """
    H, W = camera.height, camera.width
    zbuf = np.full((H, W), np.inf)
    layer_id = np.full((H, W), -1, dtype=np.int64)
    face_id = np.full((H, W), -1, dtype=np.int64)
    cols_c = np.arange(W) + 0.5
    rows_c = np.arange(H) + 0.5
    for li, (vertices, faces) in enumerate(layers):
        uv, z, _ = project(camera, vertices)
        for k, tri in enumerate(np.asarray(faces, dtype=np.int64)):
            p = uv[tri]
            iz = 1.0 / z[tri]
            c0 = max(int(np.ceil(p[:, 0].min() - 0.5)), 0)
            c1 = min(int(np.floor(p[:, 0].max() - 0.5)) + 1, W)
            r0 = max(int(np.ceil(p[:, 1].min() - 0.5)), 0)
            r1 = min(int(np.floor(p[:, 1].max() - 0.5)) + 1, H)
            if c0 >= c1 or r0 >= r1:
                continue
            area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
            if abs(area) < 1e-12:
                continue
            X, Y = np.meshgrid(cols_c[c0:c1], rows_c[r0:r1])
            w0 = ((p[1, 0] - X) * (p[2, 1] - Y) - (p[1, 1] - Y) * (p[2, 0] - X)) / area
            w1 = ((p[2, 0] - X) * (p[0, 1] - Y) - (p[2, 1] - Y) * (p[0, 0] - X)) / area
            w2 = 1.0 - w0 - w1
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
            with np.errstate(divide="ignore"):
                depth = 1.0 / (w0 * iz[0] + w1 * iz[1] + w2 * iz[2])
            win = inside & (depth < zbuf[r0:r1, c0:c1])
            zbuf[r0:r1, c0:c1][win] = depth[win]
            layer_id[r0:r1, c0:c1][win] = li
            face_id[r0:r1, c0:c1][win] = k
    return layer_id, face_id


def rasterize_hard(camera: Camera, layers) -> np.ndarray:
    """Label image from ``[(vertices, faces, label), ...]`` (the sigma -> 0 limit)."""
    layer_id, _ = zbuffer(camera, [(v, f) for v, f, _ in layers])
    lut = np.array([0] + [lab for _, _, lab in layers], dtype=np.uint8)
    return lut[layer_id + 1]


def render_hard_rgb(camera: Camera, layers, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Flat-shaded image from ``[(vertices, faces, face_colors), ...]``."""
    layer_id, face_id = zbuffer(camera, [(v, f) for v, f, _ in layers])
    img = np.tile(np.asarray(background, dtype=np.float64), (camera.height, camera.width, 1))
    for li, (_, _, colors) in enumerate(layers):
        m = layer_id == li
        img[m] = np.asarray(colors, dtype=np.float64)[face_id[m]]
    return img
