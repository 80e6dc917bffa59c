"""Work distribution: carving a frame into per-participant render tasks.

Three strategies, one task shape:

stride   every participant renders a sub-sampled grid of the full image
         (participant k of a (w_n, h_n) layout owns final pixels where
         x % w_n == k % w_n and y % h_n == k // w_n) at the full sample
         budget.  Merging interleaves rows/columns back; since each final
         pixel is produced by exactly one participant with position-keyed
         randomness, the merge is bitwise equal to a monolithic render.

sample   every participant renders the full image with a disjoint slice of
         the sample budget (participant p owns global samples
         [p*spp, (p+1)*spp)); merging sums the radiance buffers.

tile     the image is cut into rectangles dealt round-robin; each tile is
         rendered at the full budget and pasted back.

plan() returns one task list per participant; merge() reassembles their
buffers and validates coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from clusterpt.buffers import RadianceBuffer
from clusterpt.camera import IDENTITY_TRANSFORM, PixelTransform
from clusterpt.errors import MergeError, PlanError
from clusterpt.rng import SeedNamespace

__all__ = [
    "RegionTask", "STRATEGIES", "STRATEGY_IDS", "STRATEGY_NAMES",
    "stride_layout", "stride_transform", "plan", "merge",
    "merge_stride", "merge_samples", "merge_tiles", "make_tiles",
]

STRATEGIES = ("stride", "sample", "tile")
STRATEGY_IDS = {"stride": 0, "sample": 1, "tile": 2}
STRATEGY_NAMES = {v: k for k, v in STRATEGY_IDS.items()}


@dataclass(frozen=True)
class RegionTask:
    """One render_region invocation's worth of work."""

    participant: int
    origin: tuple            # pixel origin inside grid_dims (tiles)
    size: tuple              # (width, height) of the buffer to render
    grid_dims: tuple | None  # full grid the origin indexes, None = size
    transform: PixelTransform
    seed: SeedNamespace
    spp: int


def stride_layout(participants: int, dims: tuple) -> tuple:
    """Pick the (w_n, h_n) factorization of the participant count whose
    grid shape best matches the image aspect (ties prefer wide)."""
    if participants < 1:
        raise PlanError("participant count must be >= 1")
    w, h = dims
    aspect = w / h
    best = None
    for wn in range(1, participants + 1):
        if participants % wn:
            continue
        hn = participants // wn
        score = abs(math.log((wn / hn) / aspect))
        # strict < keeps the earlier (wider is later, so invert the scan)
        if best is None or score < best[0] or (score == best[0] and wn > best[1]):
            best = (score, wn, hn)
    return best[1], best[2]


def stride_transform(k: int, wn: int, hn: int) -> PixelTransform:
    """Sample-cell transform for participant k of a (wn, hn) stride layout."""
    if not (0 <= k < wn * hn):
        raise PlanError(f"participant {k} outside a {wn}x{hn} layout")
    ox, oy = k % wn, k // wn
    return PixelTransform(scale=(1.0 / wn, 1.0 / hn),
                          translate=(ox / wn, oy / hn))


def make_tiles(dims: tuple, tile_size: tuple) -> list:
    """Row-major (origin, size) rectangles covering dims exactly."""
    w, h = dims
    tw, th = tile_size
    if tw <= 0 or th <= 0:
        raise PlanError(f"tile size {tile_size} must be positive")
    tiles = []
    for y in range(0, h, th):
        for x in range(0, w, tw):
            tiles.append(((x, y), (min(tw, w - x), min(th, h - y))))
    return tiles


def plan(strategy: str, dims: tuple, participants: int, spp: int,
         seed_root: int = 0, tile_size: tuple = (32, 32)) -> list:
    """Task lists, one per participant.

    stride: dims must divide evenly by the stride layout.
    sample: spp is the per-participant budget (total = participants * spp).
    tile:   tiles are dealt round-robin in row-major order.
    """
    if strategy not in STRATEGIES:
        raise PlanError(f"unknown strategy {strategy!r}")
    if participants < 1:
        raise PlanError("participant count must be >= 1")
    if spp < 1:
        raise PlanError("spp must be >= 1")
    w, h = dims
    if w < 1 or h < 1:
        raise PlanError(f"image dims {dims} must be positive")

    if strategy == "stride":
        wn, hn = stride_layout(participants, dims)
        if w % wn or h % hn:
            raise PlanError(
                f"{w}x{h} image does not divide into a {wn}x{hn} stride layout")
        return [[RegionTask(k, (0, 0), (w // wn, h // hn), None,
                            stride_transform(k, wn, hn),
                            SeedNamespace(seed_root), spp)]
                for k in range(participants)]

    if strategy == "sample":
        return [[RegionTask(k, (0, 0), (w, h), None, IDENTITY_TRANSFORM,
                            SeedNamespace(seed_root, sample_base=k * spp), spp)]
                for k in range(participants)]

    tiles = make_tiles(dims, tile_size)
    out = [[] for _ in range(participants)]
    for i, (origin, size) in enumerate(tiles):
        k = i % participants
        out[k].append(RegionTask(k, origin, size, dims, IDENTITY_TRANSFORM,
                                 SeedNamespace(seed_root), spp))
    return out


def merge_stride(parts: list, dims: tuple, wn: int, hn: int) -> RadianceBuffer:
    """Interleave stride sub-images back into the full frame.

    parts must be ordered by participant index and share one spp.
    """
    w, h = dims
    if len(parts) != wn * hn:
        raise MergeError(f"stride merge needs {wn * hn} buffers, got {len(parts)}")
    spp = parts[0].spp
    out = RadianceBuffer.zeros(w, h, spp, parts[0].frame_id)
    for k, part in enumerate(parts):
        if part.spp != spp:
            raise MergeError("stride participants disagree on spp")
        if (part.width, part.height) != (w // wn, h // hn):
            raise MergeError(
                f"participant {k} buffer is {part.width}x{part.height}, "
                f"expected {w // wn}x{h // hn}")
        ox, oy = k % wn, k // wn
        out.rgb[oy::hn, ox::wn] = part.rgb
    out.nonfinite_clamped = sum(p.nonfinite_clamped for p in parts)
    return out


def merge_samples(parts: list) -> RadianceBuffer:
    """Sum radiance buffers over participants, in participant order."""
    if not parts:
        raise MergeError("no buffers to merge")
    w, h = parts[0].width, parts[0].height
    out = RadianceBuffer.zeros(w, h, 0, parts[0].frame_id)
    spp = 0
    for k, part in enumerate(parts):
        if (part.width, part.height) != (w, h):
            raise MergeError(f"participant {k} buffer size differs")
        out.rgb += part.rgb
        spp += part.spp
    out.spp = spp
    out.nonfinite_clamped = sum(p.nonfinite_clamped for p in parts)
    return out


def merge_tiles(tasks_and_buffers: list, dims: tuple) -> RadianceBuffer:
    """Paste (RegionTask, RadianceBuffer) pairs back into the frame.

    Coverage must be exact: every pixel exactly once.
    """
    w, h = dims
    if not tasks_and_buffers:
        raise MergeError("no tiles to merge")
    spp = tasks_and_buffers[0][1].spp
    out = RadianceBuffer.zeros(w, h, spp, tasks_and_buffers[0][1].frame_id)
    seen = np.zeros((h, w), bool)
    for task, buf in tasks_and_buffers:
        if buf.spp != spp:
            raise MergeError("tiles disagree on spp")
        x, y = task.origin
        tw, th = task.size
        if (buf.width, buf.height) != (tw, th):
            raise MergeError(f"tile at {task.origin} has wrong buffer size")
        if x < 0 or y < 0 or x + tw > w or y + th > h:
            raise MergeError(f"tile at {task.origin} size {task.size} exceeds frame")
        if seen[y:y + th, x:x + tw].any():
            raise MergeError(f"tile at {task.origin} overlaps another tile")
        seen[y:y + th, x:x + tw] = True
        out.rgb[y:y + th, x:x + tw] = buf.rgb
    if not seen.all():
        raise MergeError("tiles do not cover the frame")
    out.nonfinite_clamped = sum(b.nonfinite_clamped for _, b in tasks_and_buffers)
    return out


def merge(strategy: str, dims: tuple, participants: int,
          tasks_and_buffers: list) -> RadianceBuffer:
    """Reassemble participant results according to the strategy.

    tasks_and_buffers: flat list of (RegionTask, RadianceBuffer), any order;
    it is sorted back into participant/task order here.
    """
    if strategy == "stride":
        wn, hn = stride_layout(participants, dims)
        by_k = sorted(tasks_and_buffers, key=lambda tb: tb[0].participant)
        if [tb[0].participant for tb in by_k] != list(range(participants)):
            raise MergeError("stride merge needs exactly one buffer per participant")
        return merge_stride([tb[1] for tb in by_k], dims, wn, hn)
    if strategy == "sample":
        by_k = sorted(tasks_and_buffers, key=lambda tb: tb[0].participant)
        if [tb[0].participant for tb in by_k] != list(range(participants)):
            raise MergeError("sample merge needs exactly one buffer per participant")
        return merge_samples([tb[1] for tb in by_k])
    if strategy == "tile":
        return merge_tiles(tasks_and_buffers, dims)
    raise MergeError(f"unknown strategy {strategy!r}")
