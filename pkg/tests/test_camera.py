import math

import numpy as np
import pytest

from clusterpt.camera import (Camera, CameraFrame, IDENTITY_TRANSFORM,
                              PixelTransform, resolve_pixel_grid,
                              sample_camera_ray)


def test_center_ray_looks_forward():
    cam = Camera(position=(0, 0, 0), look_at=(0, 0, -1), fov=90.0)
    ray = sample_camera_ray(cam, (3, 3), 1, 1, 0.5, 0.5)
    assert np.array_equal(ray.origin, np.zeros(3))
    assert np.array_equal(ray.direction, np.array([0.0, 0.0, -1.0]))


def test_ray_matches_manual_pinhole_model():
    # independent evaluation of the documented model: screen point
    # (sx, sy) -> direction fwd + (2sx-1)*tan(fov/2)*aspect*right
    #                 + (1-2sy)*tan(fov/2)*up
    cam = Camera(position=(1.0, 2.0, 3.0), look_at=(0.0, 0.5, -1.0), fov=60.0)
    dims = (8, 4)
    px, py, u, v = 5, 1, 0.25, 0.75
    ray = sample_camera_ray(cam, dims, px, py, u, v)

    pos = np.array(cam.position)
    fwd = np.array(cam.look_at) - pos
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, fwd)
    th = math.tan(math.radians(60.0) / 2)
    sx, sy = (px + u) / 8.0, (py + v) / 4.0
    d = fwd + (2 * sx - 1) * th * 2.0 * right + (1 - 2 * sy) * th * up
    d /= np.linalg.norm(d)
    assert np.allclose(ray.direction, d, atol=1e-14)
    assert float(ray.direction @ ray.direction) == pytest.approx(1.0, abs=1e-15)


def test_screen_y_grows_downward():
    cam = Camera(position=(0, 0, 0), look_at=(0, 0, -1), fov=90.0)
    top = sample_camera_ray(cam, (1, 2), 0, 0, 0.5, 0.5)
    bottom = sample_camera_ray(cam, (1, 2), 0, 1, 0.5, 0.5)
    assert top.direction[1] > 0 > bottom.direction[1]


def test_stride_ray_equals_full_frame_ray_bitwise():
    # participant k of a 2x2 stride layout must produce, for its pixel
    # (px, py), the exact ray of final-image pixel (2px+ox, 2py+oy)
    cam = Camera(position=(0.3, 1.0, 2.0), look_at=(0, 0, 0), fov=45.0)
    for k in range(4):
        ox, oy = k % 2, k // 2
        tr = PixelTransform(scale=(0.5, 0.5), translate=(ox / 2, oy / 2))
        for px, py in [(0, 0), (1, 1), (2, 0)]:
            part = sample_camera_ray(cam, (3, 2), px, py, 0.125, 0.625,
                                     transform=tr)
            full = sample_camera_ray(cam, (6, 4), 2 * px + ox, 2 * py + oy,
                                     0.125, 0.625)
            assert np.array_equal(part.direction, full.direction)


def test_resolve_pixel_grid():
    assert resolve_pixel_grid((4, 4), IDENTITY_TRANSFORM) == (1, 1, 0, 0)
    tr = PixelTransform(scale=(0.5, 0.5), translate=(0.5, 0.0))
    assert resolve_pixel_grid((4, 4), tr) == (2, 2, 1, 0)
    tr = PixelTransform(scale=(1 / 3, 1.0), translate=(2 / 3, 0.0))
    assert resolve_pixel_grid((9, 9), tr) == (3, 1, 2, 0)
    # a non-reciprocal scale is not a pixel grid
    assert resolve_pixel_grid((4, 4), PixelTransform(scale=(0.7, 1.0))) is None


def test_pixel_transform_validation():
    with pytest.raises(ValueError):
        PixelTransform(scale=(0.0, 1.0))
    with pytest.raises(ValueError):
        PixelTransform(scale=(1.5, 1.0))
    with pytest.raises(ValueError):
        PixelTransform(translate=(-0.1, 0.0))
    with pytest.raises(ValueError):
        PixelTransform(scale=(0.75, 1.0), translate=(0.5, 0.0))


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(position=(0, 0, 0), look_at=(0, 0, 0))
    with pytest.raises(ValueError):
        Camera(position=(0, 0, float("nan")), look_at=(0, 0, -1))
    with pytest.raises(ValueError):
        Camera(position=(0, 0, 0), look_at=(0, 0, -1), fov=0.0)
    with pytest.raises(ValueError):
        Camera(position=(0, 0, 0), look_at=(0, 0, -1), fov=180.0)


def test_up_parallel_to_view_rejected():
    cam = Camera(position=(0, 0, 0), look_at=(0, 1, 0), up=(0, 1, 0))
    with pytest.raises(ValueError):
        CameraFrame(cam)


def test_jitter_bounds_checked():
    cam = Camera(position=(0, 0, 0), look_at=(0, 0, -1))
    with pytest.raises(ValueError):
        sample_camera_ray(cam, (2, 2), 0, 0, 1.0, 0.5)
    with pytest.raises(ValueError):
        sample_camera_ray(cam, (2, 2), 2, 0, 0.5, 0.5)
