"""Image, mask and pose file formats."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .model import PoseState
from .render import MaskImage


def _to_int(img: np.ndarray, bits: int) -> np.ndarray:
    top = (1 << bits) - 1
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * top).astype(np.uint16 if bits == 16 else np.uint8)


def write_png(path, img, bits: int = 8) -> None:
    """Grey (H, W) or RGB (H, W, 3) image in [0, 1] as 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    data = _to_int(img, bits)
    if data.ndim == 3:
        if bits == 16:
            raise ValueError("16-bit PNG is supported for grey images only")
        Image.fromarray(data).save(path)
    else:
        Image.fromarray(data).save(path)  # uint8 -> L, uint16 -> I;16


def read_png(path) -> np.ndarray:
    """PNG as float64 in [0, 1]; grey stays (H, W), colour becomes (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def write_label_png(path, mask: MaskImage) -> None:
    Image.fromarray(mask.labels.astype(np.uint8)).save(path)


def read_label_png(path) -> MaskImage:
    with Image.open(path) as im:
        return MaskImage(np.asarray(im.convert("L"), dtype=np.int64))


def write_pnm(path, img, maxval: int = 255) -> None:
    """ASCII PGM (grey) or PPM (RGB) from values in [0, 1]."""
    data = np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * maxval).astype(np.int64)
    magic = "P3" if data.ndim == 3 else "P2"
    h, w = data.shape[:2]
    rows = [" ".join(str(v) for v in row.reshape(-1)) for row in data]
    Path(path).write_text(f"{magic}\n{w} {h}\n{maxval}\n" + "\n".join(rows) + "\n")


def read_pnm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in ("P2", "P3"):
        raise ValueError(f"only ASCII PGM/PPM are supported, got {magic}")
    vals = np.array(tokens[4:], dtype=np.float64) / maxval
    return vals.reshape(h, w, 3) if magic == "P3" else vals.reshape(h, w)


def dump_float32(path, img) -> None:
    """Row-major little-endian float32 dump (no header)."""
    np.asarray(img, dtype="<f4").tofile(path)


def load_float32(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape)


def write_poses(path, states, extra: dict | None = None) -> None:
    """Pose file: a JSON array of PoseState objects, or an object with ``poses`` when ``extra`` is given."""
    poses = [s.to_dict() for s in states]
    payload = poses if extra is None else {**extra, "poses": poses}
    Path(path).write_text(json.dumps(payload, indent=1))


def read_poses(path) -> list:
    d = json.loads(Path(path).read_text())
    if isinstance(d, dict):
        d = d["poses"]
    return [PoseState.from_dict(p) for p in d]
