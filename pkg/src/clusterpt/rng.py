"""Counter-based deterministic random numbers.

Every random draw in the renderer is a pure function of a key
(root, pixel_x, pixel_y, sample, bounce, dimension), so the value a sample
sees does not depend on which process renders it, how pixels are batched
into numpy waves, or in what order lanes are compacted.  That property is
what makes the distribution strategies bitwise-verifiable against a
single-process render.

The hash is a chained splitmix64 finalizer: absorb each key component with
xor, remix.  Fast to vectorize (a handful of uint64 ops per draw) and well
mixed enough that adjacent pixels/samples/dimensions are uncorrelated for
Monte Carlo purposes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SeedNamespace", "sample_u01", "lane"]

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# lane packs (sample, bounce, dimension) into one counter:
# dimension < 256, bounce < 4096, sample < 2^44.
_BOUNCE_SHIFT = np.uint64(8)
_SAMPLE_SHIFT = np.uint64(20)

_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@dataclass(frozen=True)
class SeedNamespace:
    """Seed context a render runs under.

    root: cluster-wide seed shared by every participant.
    sample_base: offset added to local sample indices, so participant p of a
        sample-split render draws the exact streams of global samples
        [p*spp, (p+1)*spp) of a monolithic render.
    """

    root: int = 0
    sample_base: int = 0


def _mix(h: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point; silence numpy's scalar overflow warning
    with np.errstate(over="ignore"):
        h = (h ^ (h >> np.uint64(30))) * _M1
        h = (h ^ (h >> np.uint64(27))) * _M2
    return h ^ (h >> np.uint64(31))


def lane(sample, bounce: int, dim: int):
    """Pack (sample, bounce, dimension) into a single uint64 counter."""
    s = np.asarray(sample, dtype=np.uint64)
    return (
        (s << _SAMPLE_SHIFT)
        | np.uint64((bounce << 8) | dim)
    )


def sample_u01(root: int, px, py, lane_counter) -> np.ndarray:
    """Uniform float64 in [0, 1) for each key. Arguments broadcast."""
    h = _mix(np.uint64((root + int(_GOLDEN)) & 0xFFFFFFFFFFFFFFFF))
    h = _mix(h ^ np.asarray(px, dtype=np.uint64))
    h = _mix(h ^ (np.asarray(py, dtype=np.uint64) + _GOLDEN))
    h = _mix(h ^ np.asarray(lane_counter, dtype=np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53
