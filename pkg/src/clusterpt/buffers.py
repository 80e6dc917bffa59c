"""Accumulation buffers.

A RadianceBuffer stores the SUM of per-sample radiance, not the mean, plus
the uniform sample count that produced it.  Sums make merging associative:
combining partial buffers is addition, and the displayable mean is only
formed at tone-map time as rgb / spp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from clusterpt.errors import MergeError

__all__ = ["RadianceBuffer"]


@dataclass
class RadianceBuffer:
    """Per-pixel radiance sums for one frame.

    rgb is float32, shape (height, width, 3), row-major.  spp is the uniform
    number of samples accumulated into every pixel.
    """

    width: int
    height: int
    rgb: np.ndarray
    spp: int
    frame_id: int = 0
    # samples whose radiance came back non-finite and were clamped to zero
    nonfinite_clamped: int = 0

    @classmethod
    def zeros(cls, width: int, height: int, spp: int = 0, frame_id: int = 0) -> "RadianceBuffer":
        return cls(width, height, np.zeros((height, width, 3), dtype=np.float32),
                   spp, frame_id)

    def __post_init__(self) -> None:
        if self.rgb.shape != (self.height, self.width, 3):
            raise ValueError(
                f"rgb shape {self.rgb.shape} does not match "
                f"{self.height}x{self.width}x3")
        if self.rgb.dtype != np.float32:
            raise ValueError(f"rgb must be float32, got {self.rgb.dtype}")
        if self.spp < 0:
            raise ValueError("spp must be >= 0")

    def mean(self) -> np.ndarray:
        """Per-pixel mean radiance, float32. Requires spp > 0."""
        if self.spp <= 0:
            raise MergeError("cannot take the mean of an empty buffer")
        return self.rgb / np.float32(self.spp)

    def to_bytes(self) -> bytes:
        """Raw little-endian float32 RGB, row-major; exactly w*h*12 bytes."""
        return np.ascontiguousarray(self.rgb, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, width: int, height: int, spp: int, raw: bytes,
                   frame_id: int = 0) -> "RadianceBuffer":
        expected = width * height * 12
        if len(raw) != expected:
            raise MergeError(
                f"radiance payload is {len(raw)} bytes, expected {expected}")
        rgb = np.frombuffer(raw, dtype="<f4").reshape(height, width, 3).copy()
        return cls(width, height, rgb, spp, frame_id)

    def byte_size(self) -> int:
        return self.width * self.height * 12
