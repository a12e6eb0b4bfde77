"""Pinhole point-splat rasterization of trajectory frames.

Frames are z-buffered splats of the particle positions, written as binary
portable graymaps (P5).  Depth ties go to the lower point index, and the
far-to-near write order makes the result independent of input ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DomainError, IoError, ShapeError

_Z_NEAR = 1e-9


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera: x_cam = rotation @ x_world + translation.

    fx, fy, cx, cy    intrinsics in pixels
    width, height     image size, >= 16
    splat_radius      point footprint in pixels
    color_mode        "depth" or "object_id"
    depth_range       optional fixed (z_lo, z_hi); default per-frame
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = None
    translation: np.ndarray = None
    splat_radius: float = 1.0
    color_mode: str = "depth"
    depth_range: Optional[tuple] = None

    def __post_init__(self):
        rot = np.eye(3) if self.rotation is None else \
            np.asarray(self.rotation, dtype=np.float64)
        tr = np.zeros(3) if self.translation is None else \
            np.asarray(self.translation, dtype=np.float64)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    def validate(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if self.width < 16 or self.height < 16:
            raise DomainError("image size must be at least 16x16")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ShapeError("rotation must be 3x3 and translation length 3")
        if self.color_mode not in ("depth", "object_id"):
            raise DomainError(f"unknown color mode {self.color_mode!r}")
        if self.splat_radius <= 0:
            raise DomainError("splat_radius must be positive")
        return self

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), **kwargs):
        """Camera at ``eye`` looking toward ``target`` (+z into the scene)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(rotation=rot, translation=-rot @ eye, **kwargs)


@dataclass
class RasterFrame:
    image: np.ndarray   # (H, W) uint8, 0 = empty
    depth: np.ndarray   # (H, W) float64, +inf where empty
    index: np.ndarray   # (H, W) int32, -1 where empty
    empty: bool


def rasterize_frame(positions, cam: CameraSpec, object_id=None) -> RasterFrame:
    """Splat points through the camera; see RasterFrame for buffers.

    Depth images map z affinely to [1, 255] with near points brighter;
    0 is reserved for background.  object_id mode needs per-point ids.
    """
    cam.validate()
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ShapeError(f"positions must be (N, 3), got {pos.shape}")
    if cam.color_mode == "object_id" and object_id is None:
        raise DomainError("object_id color mode needs per-point object ids")

    h, wd = cam.height, cam.width
    depth = np.full((h, wd), np.inf)
    index = np.full((h, wd), -1, dtype=np.int32)

    x_cam = pos @ cam.rotation.T + cam.translation
    z = x_cam[:, 2]
    visible = z > _Z_NEAR
    ids = np.nonzero(visible)[0]
    u = cam.fx * x_cam[visible, 0] / z[visible] + cam.cx
    v = cam.fy * x_cam[visible, 1] / z[visible] + cam.cy

    # far-to-near, ties by higher index first, so the final write at any
    # pixel is the nearest point with the lowest index
    order = np.lexsort((ids, z[visible]))[::-1]
    r = cam.splat_radius
    r2 = r * r
    ir = int(math.ceil(r))
    for row in order:
        uu, vv, pid = u[row], v[row], ids[row]
        px_lo = max(int(math.ceil(uu - r)), 0)
        px_hi = min(int(math.floor(uu + r)), wd - 1)
        py_lo = max(int(math.ceil(vv - r)), 0)
        py_hi = min(int(math.floor(vv + r)), h - 1)
        if px_lo > px_hi or py_lo > py_hi:
            continue
        px = np.arange(px_lo, px_hi + 1)
        py = np.arange(py_lo, py_hi + 1)
        du2 = (px - uu) ** 2
        dv2 = (py - vv) ** 2
        mask = dv2[:, None] + du2[None, :] <= r2
        if not mask.any():
            continue
        zz = z[pid]
        sub_d = depth[py_lo:py_hi + 1, px_lo:px_hi + 1]
        sub_i = index[py_lo:py_hi + 1, px_lo:px_hi + 1]
        sub_d[mask] = zz
        sub_i[mask] = pid

    occupied = index >= 0
    image = np.zeros((h, wd), dtype=np.uint8)
    if occupied.any():
        if cam.color_mode == "depth":
            if cam.depth_range is not None:
                z_lo, z_hi = cam.depth_range
            else:
                z_lo = float(depth[occupied].min())
                z_hi = float(depth[occupied].max())
            if z_hi > z_lo:
                t = np.clip((z_hi - depth[occupied]) / (z_hi - z_lo), 0.0, 1.0)
                image[occupied] = (1 + np.round(254.0 * t)).astype(np.uint8)
            else:
                image[occupied] = 255
        else:
            oid = np.asarray(object_id)
            image[occupied] = (1 + (oid[index[occupied]] % 255)).astype(np.uint8)
    return RasterFrame(image=image, depth=depth, index=index,
                       empty=not bool(occupied.any()))


def write_pgm(image: np.ndarray, path):
    """Binary portable graymap (P5), byte-stable."""
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ShapeError("image must be 2-D grayscale")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    try:
        Path(path).write_bytes(header + img.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write image to {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read image from {path}: {exc}") from exc
    if not raw.startswith(b"P5"):
        raise IoError(f"{path}: not a binary PGM")
    parts = raw.split(b"\n", 3)
    wd, h = map(int, parts[1].split())
    data = parts[3][:wd * h]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, wd)
