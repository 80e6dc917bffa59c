"""Pinhole camera and pixel-space sample transforms.

The transform story is what makes pixel striding exact.  A PixelTransform
scales and translates a pixel's unit sample cell: participant k of a
(w_n, h_n) stride layout renders a (width/w_n, height/h_n) sub-image with
scale (1/w_n, 1/h_n) and translate (ox/w_n, oy/h_n), so its pixel (i, j)
samples exactly the screen positions that final-image pixel
(i*w_n + ox, j*h_n + oy) would sample in a plain full-resolution render.

To make that equality bitwise rather than merely within float rounding, the
sampler recognizes grid-aligned transforms (translate an integer multiple of
scale, scale an integer reciprocal) and evaluates the sample position in
final-image integer pixel space:

    sx = (px * w_n + ox + jitter) / (dims_w * w_n)

which for the identity transform degenerates to ordinary (px + jitter)/w.
Both the distributed participant and the single-process oracle therefore
run literally the same float expression on the same integers, and the RNG
is keyed by the same final-image pixel coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Camera", "PixelTransform", "IDENTITY_TRANSFORM", "Ray",
           "CameraFrame", "sample_camera_ray", "resolve_pixel_grid"]


@dataclass(frozen=True)
class PixelTransform:
    """Affine map applied to a pixel's unit sample cell.

    scale and translate are (x, y) with 0 < scale <= 1, 0 <= translate < 1
    and translate + scale <= 1, so the transformed cell stays inside the
    pixel footprint.
    """

    scale: tuple[float, float] = (1.0, 1.0)
    translate: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        for s, t in zip(self.scale, self.translate):
            if not (0.0 < s <= 1.0):
                raise ValueError(f"scale component {s} outside (0, 1]")
            if not (0.0 <= t < 1.0):
                raise ValueError(f"translate component {t} outside [0, 1)")
            if s + t > 1.0 + 1e-12:
                raise ValueError(f"scale {s} + translate {t} exceeds the pixel cell")


IDENTITY_TRANSFORM = PixelTransform()


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; aspect is derived from the image dims at sample time."""

    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov: float = 45.0  # vertical, degrees

    def __post_init__(self) -> None:
        vals = np.array([*self.position, *self.look_at, *self.up, self.fov],
                        dtype=np.float64)
        if not np.isfinite(vals).all():
            raise ValueError("camera parameters must be finite")
        if not (0.0 < self.fov < 180.0):
            raise ValueError(f"fov {self.fov} outside (0, 180)")
        d = np.subtract(self.look_at, self.position)
        with np.errstate(over="ignore"):
            if not (float(d @ d) > 0.0):
                raise ValueError("camera position and look_at coincide")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length


class CameraFrame:
    """Precomputed orthonormal basis + frustum scalars for a camera.

    Exists so the per-sample work is pure float64 arithmetic; the single
    tan() here is evaluated once per camera, never per sample.
    """

    def __init__(self, camera: Camera):
        pos = np.asarray(camera.position, dtype=np.float64)
        look = np.asarray(camera.look_at, dtype=np.float64)
        up = np.asarray(camera.up, dtype=np.float64)
        fwd = look - pos
        fwd = fwd / math.sqrt(float(fwd @ fwd))
        right = np.cross(fwd, up)
        n = math.sqrt(float(right @ right))
        if n < 1e-12:
            raise ValueError("camera up is parallel to the view direction")
        right = right / n
        upv = np.cross(right, fwd)
        self.position = pos
        self.forward = fwd
        self.right = right
        self.upv = upv
        self.tan_half = math.tan(math.radians(camera.fov) * 0.5)


def resolve_pixel_grid(dims: tuple[int, int],
                       transform: PixelTransform) -> tuple[int, int, int, int] | None:
    """Recognize a grid-aligned transform.

    Returns (w_n, h_n, ox, oy) if scale is (1/w_n, 1/h_n) and translate is
    (ox/w_n, oy/h_n) for integers within tolerance, else None.  Stride
    transforms and the identity always satisfy this.
    """
    out = []
    for s, t in zip(transform.scale, transform.translate):
        n = round(1.0 / s)
        if n < 1 or abs(n * s - 1.0) > 1e-9:
            return None
        o = round(t * n)
        if o < 0 or o >= n or abs(o * s - t) > 1e-9:
            return None
        out.append((n, o))
    (wn, ox), (hn, oy) = out
    return wn, hn, ox, oy


def screen_points(dims: tuple[int, int], px, py, u, v,
                  transform: PixelTransform = IDENTITY_TRANSFORM,
                  origin: tuple[int, int] = (0, 0),
                  grid_dims: tuple[int, int] | None = None):
    """Normalized [0,1) screen coordinates of the jittered sample points.

    dims is the size of the buffer being rendered; origin its offset inside
    a grid of grid_dims pixels (tiles); the transform then maps that grid
    into the final image.  Returns (sx, sy, key_x, key_y, aspect) where
    key_x/key_y are the final-image integer pixel coordinates used to key
    the RNG.
    """
    gw, gh = grid_dims if grid_dims is not None else dims
    px = np.asarray(px, dtype=np.int64) + origin[0]
    py = np.asarray(py, dtype=np.int64) + origin[1]
    grid = resolve_pixel_grid(dims, transform)
    if grid is not None:
        wn, hn, ox, oy = grid
        key_x = px * wn + ox
        key_y = py * hn + oy
        full_w = gw * wn
        full_h = gh * hn
        sx = (key_x + u) / float(full_w)
        sy = (key_y + v) / float(full_h)
        return sx, sy, key_x, key_y, full_w / full_h
    # general transform: literal scale/translate inside the local grid
    sxs, sys_ = transform.scale
    txs, tys = transform.translate
    sx = (px + (txs + sxs * u)) / float(gw)
    sy = (py + (tys + sys_ * v)) / float(gh)
    return sx, sy, px, py, gw / gh


def rays_through(frame: CameraFrame, sx, sy, aspect: float):
    """Map normalized screen points through the pinhole model.

    sx, sy arrays in [0, 1); returns unit direction array shaped (..., 3).
    Screen y grows downward (row 0 is the top of the image).
    """
    xc = (2.0 * sx - 1.0) * (frame.tan_half * aspect)
    yc = (1.0 - 2.0 * sy) * frame.tan_half
    d = (frame.forward
         + xc[..., None] * frame.right
         + yc[..., None] * frame.upv)
    # explicit component form so scalar and wavefront paths share the exact
    # float expression
    n2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
    inv = 1.0 / np.sqrt(n2)
    return d * inv[..., None]


def sample_camera_ray(camera: Camera, dims: tuple[int, int], px: int, py: int,
                      u: float, v: float,
                      transform: PixelTransform = IDENTITY_TRANSFORM,
                      origin: tuple[int, int] = (0, 0),
                      grid_dims: tuple[int, int] | None = None) -> Ray:
    """Primary ray for sub-pixel position (u, v) of pixel (px, py).

    pre: 0 <= px < dims[0], 0 <= py < dims[1], u and v in [0, 1).
    The identity transform reproduces ordinary pixel sampling; a stride
    transform samples the final-image pixel this sub-pixel maps to.
    """
    w, h = dims
    if not (0 <= px < w and 0 <= py < h):
        raise ValueError(f"pixel ({px}, {py}) outside {w}x{h}")
    if not (0.0 <= u < 1.0 and 0.0 <= v < 1.0):
        raise ValueError("sub-pixel jitter must lie in [0, 1)")
    fr = CameraFrame(camera)
    sx, sy, _, _, aspect = screen_points(
        dims, np.int64(px), np.int64(py), np.float64(u), np.float64(v),
        transform, origin, grid_dims)
    d = rays_through(fr, np.asarray(sx)[None], np.asarray(sy)[None], aspect)[0]
    return Ray(origin=fr.position.copy(), direction=d)
