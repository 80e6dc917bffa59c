"""Deterministic wavefront path tracer.

One call renders a rectangular pixel region at a given sample count.  The
integrator is unidirectional path tracing with next-event estimation toward
the quad lights and balance-heuristic weighting between the light sample and
the diffuse bounce; metal and glass are treated as delta lobes (no light
sampling, full credit on emitter hits).

Determinism contract: every floating point value a (pixel, sample) pair
produces is a pure function of (seed root, final-image pixel coordinates,
global sample index).  All per-lane math is elementwise, so batching pixels
differently (regions, bands, strides) or splitting the sample range across
processes cannot change any individual sample's radiance.  Accumulation into
the float32 buffer happens in strictly increasing sample order, which makes
whole-frame renders and pixel-partitioned renders bitwise identical.

Random dimension map per (sample, bounce):
    0, 1        camera sub-pixel jitter (bounce 0 only)
    2           light selection
    3, 4        point on the light
    5           lobe choice (dielectric reflect/refract)
    8 + 2i      cosine-hemisphere disk rejection, iteration i
    8 + 3i      fuzzy-metal sphere rejection, iteration i
Rejection sampling retries up to REJECT_ITERS times on fresh dimensions and
then falls back to a fixed central value, keeping the draw count bounded and
the result a pure function of the key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import (Camera, CameraFrame, IDENTITY_TRANSFORM,
                              PixelTransform, Ray, rays_through, screen_points)
from clusterpt.rng import SeedNamespace, lane, sample_u01
from clusterpt.scene import (KIND_DIELECTRIC, KIND_DIFFUSE, KIND_EMISSIVE,
                             KIND_METAL, Scene, env_radiance)

__all__ = ["render_region", "intersect", "Hit", "DEFAULT_MAX_DEPTH"]

DEFAULT_MAX_DEPTH = 10
REJECT_ITERS = 32

DIM_CAM_U = 0
DIM_CAM_V = 1
DIM_LIGHT_SELECT = 2
DIM_LIGHT_U = 3
DIM_LIGHT_V = 4
DIM_LOBE = 5
DIM_REJECT_BASE = 8

_T_MIN = 1e-4
_SHADOW_SHRINK = 1.0 - 1e-4
_INV_PI = 1.0 / np.pi


def _orthonormal_basis(n: np.ndarray):
    """Branchless tangent frame per lane; deterministic elementwise."""
    pick = np.abs(n[:, 0]) > 0.9
    a = np.zeros_like(n)
    a[:, 0] = np.where(pick, 0.0, 1.0)
    a[:, 1] = np.where(pick, 1.0, 0.0)
    t1 = np.cross(a, n)
    inv = 1.0 / np.sqrt((t1 * t1).sum(axis=1))
    t1 = t1 * inv[:, None]
    t2 = np.cross(n, t1)
    return t1, t2


def _unit_disk(root, kx, ky, sample, bounce: int):
    """Rejection-sampled point in the unit disk, one per lane.

    Lanes that fail REJECT_ITERS times fall back to the center, so the
    sampler is total and still a pure function of the key.
    """
    x = np.zeros(len(kx))
    y = np.zeros(len(kx))
    need = np.ones(len(kx), bool)
    for i in range(REJECT_ITERS):
        if not need.any():
            break
        d0 = DIM_REJECT_BASE + 2 * i
        cx = 2.0 * sample_u01(root, kx, ky, lane(sample, bounce, d0)) - 1.0
        cy = 2.0 * sample_u01(root, kx, ky, lane(sample, bounce, d0 + 1)) - 1.0
        ok = need & (cx * cx + cy * cy < 1.0)
        x = np.where(ok, cx, x)
        y = np.where(ok, cy, y)
        need &= ~ok
    return x, y


def _unit_sphere(root, kx, ky, sample, bounce: int):
    """Rejection-sampled point in the unit ball; fallback is the origin."""
    p = np.zeros((len(kx), 3))
    need = np.ones(len(kx), bool)
    for i in range(REJECT_ITERS):
        if not need.any():
            break
        d0 = DIM_REJECT_BASE + 3 * i
        c = np.stack([
            2.0 * sample_u01(root, kx, ky, lane(sample, bounce, d0 + k)) - 1.0
            for k in range(3)], axis=1)
        ok = need & ((c * c).sum(axis=1) < 1.0)
        p[ok] = c[ok]
        need &= ~ok
    return p


def _hit_normals(prep, gp: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Outward geometric unit normals for global primitive ids."""
    n = np.zeros_like(pos)
    S = len(prep.sph_radius)
    sph = gp < S
    if sph.any():
        s = gp[sph]
        n[sph] = (pos[sph] - prep.sph_center[s]) / prep.sph_radius[s][:, None]
    for mp in prep.meshes:
        count = len(mp.tri.a)
        sel = (gp >= mp.prim_base) & (gp < mp.prim_base + count)
        if not sel.any():
            continue
        local = gp[sel] - mp.prim_base
        c = np.cross(mp.tri.e1[local], mp.tri.e2[local])
        inv = 1.0 / np.sqrt((c * c).sum(axis=1))
        n[sel] = c * inv[:, None]
    return n


def _trace_wave(prep, env, fr: CameraFrame, dims, px, py, samples,
                transform, origin, grid_dims, root: int, max_depth: int):
    """Radiance of one wave of (pixel, sample) lanes, shaped (n, 3) float64.

    px, py, samples are parallel per-lane arrays.  Every lane's arithmetic
    is elementwise, so the result for a given (pixel, sample) key does not
    depend on which other lanes share the wave.
    """
    n_lanes = len(px)
    _, _, kx0, ky0, _ = screen_points(dims, px, py, 0.0, 0.0,
                                      transform, origin, grid_dims)
    ju = sample_u01(root, kx0, ky0, lane(samples, 0, DIM_CAM_U))
    jv = sample_u01(root, kx0, ky0, lane(samples, 0, DIM_CAM_V))
    sx, sy, kx0, ky0, aspect = screen_points(dims, px, py, ju, jv,
                                             transform, origin, grid_dims)
    d = rays_through(fr, sx, sy, aspect)
    o = np.broadcast_to(fr.position, (n_lanes, 3)).copy()

    radiance = np.zeros((n_lanes, 3))
    idx = np.arange(n_lanes)
    kx = kx0
    ky = ky0
    smp = np.asarray(samples, np.uint64)
    thr = np.ones((n_lanes, 3))
    prev_pdf = np.zeros(n_lanes)
    prev_delta = np.ones(n_lanes, bool)  # bounce 0: emitter hits get full credit

    L = prep.n_lights

    for bounce in range(max_depth):
        t, gp, _, _ = prep.nearest(o, d, t_min=_T_MIN)

        miss = gp < 0
        if miss.any():
            radiance[idx[miss]] += thr[miss] * env_radiance(env, d[miss])

        hit = ~miss
        if not hit.any():
            break
        idx = idx[hit]
        kx = kx[hit]
        ky = ky[hit]
        smp = smp[hit]
        o = o[hit]
        d = d[hit]
        thr = thr[hit]
        prev_pdf = prev_pdf[hit]
        prev_delta = prev_delta[hit]
        t = t[hit]
        gp = gp[hit]

        p = o + t[:, None] * d
        n = _hit_normals(prep, gp, p)
        mat = prep.prim_mat[gp]
        kind = prep.mat_kind[mat]
        cos_in = (d * n).sum(axis=1)      # negative when hitting the front
        front = cos_in < 0.0

        emissive = kind == KIND_EMISSIVE
        if emissive.any():
            e_idx = np.nonzero(emissive)[0]
            emit = prep.mat_emission[mat[e_idx]]
            li = prep.light_of_prim[gp[e_idx]]
            # balance-heuristic weight against the light sample that could
            # have produced this hit; delta-lobe history gets full credit
            w = np.ones(len(e_idx))
            sampled = (li >= 0) & ~prev_delta[e_idx]
            if sampled.any():
                s_ = np.nonzero(sampled)[0]
                cos_l = -cos_in[e_idx[s_]]
                pdf_light = (t[e_idx[s_]] ** 2
                             / (L * prep.light_area[li[s_]] * cos_l))
                bp = prev_pdf[e_idx[s_]]
                w[s_] = bp / (bp + pdf_light)
            gain = thr[e_idx] * emit * (front[e_idx] * w)[:, None]
            radiance[idx[e_idx]] += gain

        # emissive surfaces terminate the path (opaque, black backside)
        live = ~emissive
        if not live.any():
            break
        idx = idx[live]
        kx = kx[live]
        ky = ky[live]
        smp = smp[live]
        d = d[live]
        thr = thr[live]
        p = p[live]
        n = n[live]
        kind = kind[live]
        mat = mat[live]
        front = front[live]
        cos_in = cos_in[live]

        ns = np.where(front[:, None], n, -n)   # shading normal, faces the ray

        diffuse = kind == KIND_DIFFUSE
        metal = kind == KIND_METAL
        glass = kind == KIND_DIELECTRIC
        albedo = prep.mat_albedo[mat]

        # next-event estimation from diffuse lanes
        if L > 0 and diffuse.any():
            di = np.nonzero(diffuse)[0]
            u_sel = sample_u01(root, kx[di], ky[di],
                               lane(smp[di], bounce, DIM_LIGHT_SELECT))
            li = np.minimum((u_sel * L).astype(np.int64), L - 1)
            ua = sample_u01(root, kx[di], ky[di],
                            lane(smp[di], bounce, DIM_LIGHT_U))
            ub = sample_u01(root, kx[di], ky[di],
                            lane(smp[di], bounce, DIM_LIGHT_V))
            q = (prep.light_corner[li]
                 + ua[:, None] * prep.light_eu[li]
                 + ub[:, None] * prep.light_ev[li])
            wiv = q - p[di]
            dist2 = (wiv * wiv).sum(axis=1)
            dist = np.sqrt(dist2)
            wi = wiv / dist[:, None]
            cos_s = (wi * ns[di]).sum(axis=1)
            cos_l = -(wi * prep.light_normal[li]).sum(axis=1)
            valid = (cos_s > 0.0) & (cos_l > 0.0) & (dist > _T_MIN)
            if valid.any():
                v_ = np.nonzero(valid)[0]
                blocked = prep.occluded(p[di[v_]], wi[v_],
                                        dist[v_] * _SHADOW_SHRINK)
                open_ = ~blocked
                if open_.any():
                    s_ = v_[open_]
                    pdf_light = dist2[s_] / (L * prep.light_area[li[s_]]
                                             * cos_l[s_])
                    pdf_bsdf = cos_s[s_] * _INV_PI
                    w = pdf_light / (pdf_light + pdf_bsdf)
                    f = albedo[di[s_]] * _INV_PI
                    gain = (thr[di[s_]] * f
                            * (cos_s[s_] / pdf_light * w)[:, None]
                            * prep.light_radiance[li[s_]])
                    radiance[idx[di[s_]]] += gain

        if bounce + 1 >= max_depth:
            break

        # scatter
        wo = np.zeros_like(d)
        alive = np.ones(len(d), bool)
        new_pdf = np.zeros(len(d))
        new_delta = np.ones(len(d), bool)

        if diffuse.any():
            di = np.nonzero(diffuse)[0]
            dx, dy = _unit_disk(root, kx[di], ky[di], smp[di], bounce)
            dz = np.sqrt(np.maximum(1.0 - dx * dx - dy * dy, 0.0))
            t1, t2 = _orthonormal_basis(ns[di])
            wo[di] = (dx[:, None] * t1 + dy[:, None] * t2
                      + dz[:, None] * ns[di])
            thr[di] *= albedo[di]
            new_pdf[di] = dz * _INV_PI
            new_delta[di] = False

        if metal.any():
            mi = np.nonzero(metal)[0]
            refl = d[mi] - 2.0 * (d[mi] * ns[mi]).sum(axis=1)[:, None] * ns[mi]
            fuzz = prep.mat_fuzz[mat[mi]]
            # drawn unconditionally so a lane's arithmetic never depends on
            # which other materials share its wave
            fz = _unit_sphere(root, kx[mi], ky[mi], smp[mi], bounce)
            refl = refl + fuzz[:, None] * fz
            inv = 1.0 / np.sqrt((refl * refl).sum(axis=1))
            wdir = refl * inv[:, None]
            wo[mi] = wdir
            thr[mi] *= albedo[mi]
            # fuzzed rays scattered under the surface are absorbed
            alive[mi] = (wdir * ns[mi]).sum(axis=1) > 0.0

        if glass.any():
            gi = np.nonzero(glass)[0]
            ior = prep.mat_ior[mat[gi]]
            eta = np.where(front[gi], 1.0 / ior, ior)
            cos_t = -cos_in[gi] * np.where(front[gi], 1.0, -1.0)
            cos_t = np.minimum(cos_t, 1.0)
            sin2 = eta * eta * (1.0 - cos_t * cos_t)
            cannot = sin2 > 1.0
            r0 = ((1.0 - ior) / (1.0 + ior)) ** 2
            refl_p = r0 + (1.0 - r0) * (1.0 - cos_t) ** 5
            u_lobe = sample_u01(root, kx[gi], ky[gi],
                                lane(smp[gi], bounce, DIM_LOBE))
            choose_refl = cannot | (u_lobe < refl_p)
            ng = ns[gi]
            refl = d[gi] + 2.0 * cos_t[:, None] * ng
            k = eta * cos_t - np.sqrt(np.maximum(1.0 - sin2, 0.0))
            refr = eta[:, None] * d[gi] + k[:, None] * ng
            pick = np.where(choose_refl[:, None], refl, refr)
            inv = 1.0 / np.sqrt((pick * pick).sum(axis=1))
            wo[gi] = pick * inv[:, None]

        if not alive.any():
            break
        idx = idx[alive]
        kx = kx[alive]
        ky = ky[alive]
        smp = smp[alive]
        o = p[alive]
        d = wo[alive]
        thr = thr[alive]
        prev_pdf = new_pdf[alive]
        prev_delta = new_delta[alive]

    return radiance


def render_region(scene: Scene, camera: Camera, *,
                  size: tuple[int, int], spp: int,
                  seed: SeedNamespace = SeedNamespace(),
                  transform: PixelTransform = IDENTITY_TRANSFORM,
                  origin: tuple[int, int] = (0, 0),
                  grid_dims: tuple[int, int] | None = None,
                  max_depth: int = DEFAULT_MAX_DEPTH,
                  frame_id: int = 0,
                  ray_budget: int = 600_000) -> RadianceBuffer:
    """Render a pixel region and return its radiance sums.

    size: (width, height) of the buffer to produce.  origin/grid_dims place
    the region inside a larger pixel grid (tiles); transform maps that grid
    into the final image (strides).  spp samples per pixel are accumulated
    in strictly increasing sample order; seed.sample_base offsets the global
    sample indices for sample-split rendering.

    Work is batched into waves of at most ray_budget (pixel, sample) lanes:
    horizontal pixel bands, several samples per wave when the band is small.
    Both are pure partitions of elementwise work followed by in-order
    accumulation, so the batching never changes a single output bit.
    """
    w, h = size
    if w <= 0 or h <= 0:
        raise ValueError(f"region size {size} must be positive")
    if spp <= 0:
        raise ValueError("spp must be positive")
    prep = scene.prep()
    env = scene.environment
    fr = CameraFrame(camera)

    buf = RadianceBuffer.zeros(w, h, spp, frame_id)
    rows_per_band = max(1, min(h, ray_budget // max(w, 1)))
    clamped = 0
    for r0 in range(0, h, rows_per_band):
        r1 = min(r0 + rows_per_band, h)
        py, px = np.mgrid[r0:r1, 0:w]
        px = px.ravel().astype(np.int64)
        py = py.ravel().astype(np.int64)
        n_pix = len(px)
        band = buf.rgb[r0:r1].reshape(-1, 3)
        per_wave = max(1, ray_budget // n_pix)
        for j0 in range(0, spp, per_wave):
            j1 = min(j0 + per_wave, spp)
            k = j1 - j0
            wave_px = np.tile(px, k)
            wave_py = np.tile(py, k)
            wave_s = np.repeat(
                np.arange(seed.sample_base + j0, seed.sample_base + j1,
                          dtype=np.int64), n_pix)
            rad = _trace_wave(prep, env, fr, size, wave_px, wave_py, wave_s,
                              transform, origin, grid_dims,
                              seed.root, max_depth)
            bad = ~np.isfinite(rad)
            if bad.any():
                clamped += int(bad.sum())
                rad = np.where(bad, 0.0, rad)
            rad32 = rad.astype(np.float32).reshape(k, n_pix, 3)
            for j in range(k):
                band += rad32[j]
    buf.nonfinite_clamped = clamped
    return buf


@dataclass(frozen=True)
class Hit:
    """Single-ray intersection record."""

    t: float
    position: np.ndarray
    normal: np.ndarray
    prim_id: int
    material: int


def intersect(scene: Scene, ray: Ray, t_min: float = _T_MIN,
              t_max: float = np.inf) -> Hit | None:
    """Nearest intersection of one ray with the scene, or None."""
    prep = scene.prep()
    o = np.asarray(ray.origin, np.float64)[None, :]
    d = np.asarray(ray.direction, np.float64)[None, :]
    t, gp, _, _ = prep.nearest(o, d, t_min=t_min, t_max=t_max)
    if gp[0] < 0:
        return None
    pos = (o + t[:, None] * d)[0]
    n = _hit_normals(prep, gp, pos[None, :])[0]
    return Hit(float(t[0]), pos, n, int(gp[0]),
               int(prep.prim_mat[gp[0]]))
