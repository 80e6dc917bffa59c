"""Per-frame timing statistics and the frame-rate model.

The master measures each stage of every frame in milliseconds and publishes
the rows over STATS messages.  The model the cluster is judged against:
a pipelined renderer's frame period is bounded by its slowest stage, and
with scene update and render dominating, sustained fps comes to about

    fps ~= 0.9 / (scene_update_s + render_s)

the 0.9 covering the fixed per-frame overheads (merge scheduling, socket
turnaround) that don't scale with the image.  predicted_fps() is that
formula; the acceptance run checks the client's measured rate against it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

__all__ = ["FrameStats", "StatsLog", "StageTimer", "predicted_fps",
           "STAT_ROWS"]

# canonical row order in STATS messages
STAT_ROWS = (
    "event_wait_ms",
    "scene_update_ms",
    "render_ms",
    "merge_ms",
    "denoise_ms",
    "tonemap_ms",
    "compression_ms",
    "distribution_overhead_ms",
)


def predicted_fps(scene_update_ms: float, render_ms: float) -> float:
    """Model fps from the two dominant stage times (milliseconds)."""
    total_s = (scene_update_ms + render_ms) / 1000.0
    if total_s <= 0:
        return float("inf")
    return 0.9 / total_s


@dataclass
class FrameStats:
    """One frame's stage timings, milliseconds."""

    frame_id: int
    values: dict = field(default_factory=dict)

    def set(self, name: str, ms: float) -> None:
        self.values[name] = float(ms)

    def rows(self) -> list:
        """(name, value) pairs in canonical order, extras appended sorted."""
        out = [(n, self.values.get(n, 0.0)) for n in STAT_ROWS]
        extras = sorted(set(self.values) - set(STAT_ROWS))
        out.extend((n, self.values[n]) for n in extras)
        return out


class StageTimer:
    """Context manager that drops elapsed milliseconds into FrameStats."""

    def __init__(self, stats: FrameStats, name: str):
        self.stats = stats
        self.name = name

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.stats.set(self.name, (time.perf_counter() - self._t0) * 1e3)
        return False


class StatsLog:
    """Accumulated per-frame stats with summaries and export."""

    def __init__(self):
        self.frames: list = []

    def append(self, fs: FrameStats) -> None:
        self.frames.append(fs)

    def mean(self, name: str, skip: int = 0) -> float:
        vals = [f.values.get(name, 0.0) for f in self.frames[skip:]]
        return sum(vals) / len(vals) if vals else 0.0

    def to_csv(self) -> str:
        names = list(STAT_ROWS)
        extra = sorted({n for f in self.frames for n in f.values}
                       - set(STAT_ROWS))
        names.extend(extra)
        lines = ["frame_id," + ",".join(names)]
        for f in self.frames:
            lines.append(str(f.frame_id) + "," + ",".join(
                f"{f.values.get(n, 0.0):.3f}" for n in names))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps([{"frame_id": f.frame_id, **f.values}
                           for f in self.frames], indent=2)
