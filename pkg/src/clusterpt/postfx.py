"""Post-processing: denoise, tone map, sRGB encode, image compression.

The displayable image is formed as

    mean radiance -> (optional) edge-preserving denoise -> Reinhard
    m/(1+m) -> sRGB -> round-half-up 8-bit quantize

The mean is computed as float32 rgb / float32 spp, so doubling both the
radiance sums and the sample count (as merging equal partial buffers does)
reproduces the exact same image: binary scaling is lossless in IEEE floats.

The denoiser is a single-pass 5x5 bilateral filter written in residual form

    out = center + sum_i w_i * (v_i - center) / (1 + sum_i w_i)

so a constant input is a bitwise fixed point: every residual is exactly
zero, whatever the weights.
"""

from __future__ import annotations

import io

import numpy as np

from clusterpt.buffers import RadianceBuffer

__all__ = ["tone_map", "tone_curve", "srgb_encode", "quantize_u8",
           "denoise_radiance", "encode_image", "decode_image", "ENCODINGS"]

# wire ids for FRAME_IMAGE payload encodings
ENCODINGS = {"raw-rgb8": 0, "png": 1, "jpeg": 2, "radiance-f32": 3}
ENCODING_NAMES = {v: k for k, v in ENCODINGS.items()}

_SRGB_CUT = 0.0031308


def srgb_encode(x: np.ndarray) -> np.ndarray:
    """Linear [0,1] to sRGB transfer curve, elementwise float64."""
    x = np.asarray(x, np.float64)
    lo = 12.92 * x
    hi = 1.055 * np.power(np.maximum(x, _SRGB_CUT), 1.0 / 2.4) - 0.055
    return np.where(x <= _SRGB_CUT, lo, hi)


def quantize_u8(y: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-up."""
    q = np.floor(np.asarray(y, np.float64) * 255.0 + 0.5)
    return np.clip(q, 0.0, 255.0).astype(np.uint8)


def denoise_radiance(mean: np.ndarray, sigma_range: float = 0.2,
                     radius: int = 2) -> np.ndarray:
    """Edge-preserving bilateral smoothing of mean radiance (h, w, 3).

    Gaussian spatial falloff over a (2*radius+1)^2 window, Gaussian range
    falloff on luminance difference.  Residual form: constant regions pass
    through bitwise unchanged.
    """
    src = np.asarray(mean, np.float64)
    h, w, _ = src.shape
    lum = src @ np.array([0.2126, 0.7152, 0.0722])
    pad = np.pad(src, ((radius, radius), (radius, radius), (0, 0)), "reflect")
    lpad = np.pad(lum, radius, "reflect")

    acc = np.zeros_like(src)
    wsum = np.ones((h, w))  # center weight
    inv_2sr2 = 1.0 / (2.0 * sigma_range * sigma_range)
    inv_2ss2 = 1.0 / (2.0 * (radius / 2.0) ** 2)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            v = pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            lv = lpad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            dl = lv - lum
            wgt = np.exp(-(dx * dx + dy * dy) * inv_2ss2
                         - dl * dl * inv_2sr2)
            acc += wgt[:, :, None] * (v - src)
            wsum += wgt
    out = src + acc / wsum[:, :, None]
    return out.astype(np.float32)


def tone_curve(mean: np.ndarray) -> np.ndarray:
    """Reinhard compress + sRGB + quantize a mean-radiance image to uint8."""
    x = np.asarray(mean, np.float64)
    y = x / (1.0 + x)
    return quantize_u8(srgb_encode(y))


def tone_map(buffer: RadianceBuffer, denoise: bool = False) -> np.ndarray:
    """Displayable uint8 image (h, w, 3) from accumulated radiance."""
    m = buffer.mean()
    if denoise:
        m = denoise_radiance(m)
    return tone_curve(m)


def encode_image(rgb8: np.ndarray, encoding: str = "png",
                 jpeg_quality: int = 90) -> bytes:
    """Serialize a (h, w, 3) uint8 image for the FRAME_IMAGE payload."""
    if rgb8.dtype != np.uint8 or rgb8.ndim != 3 or rgb8.shape[2] != 3:
        raise ValueError("expected (h, w, 3) uint8")
    if encoding == "raw-rgb8":
        return np.ascontiguousarray(rgb8).tobytes()
    from PIL import Image
    img = Image.fromarray(rgb8, "RGB")
    buf = io.BytesIO()
    if encoding == "png":
        img.save(buf, "PNG")
    elif encoding == "jpeg":
        img.save(buf, "JPEG", quality=jpeg_quality)
    else:
        raise ValueError(f"unknown image encoding {encoding!r}")
    return buf.getvalue()


def decode_image(encoding: str, data: bytes, width: int,
                 height: int) -> np.ndarray:
    """Inverse of encode_image: bytes back to a (h, w, 3) uint8 array."""
    if encoding == "raw-rgb8":
        expected = width * height * 3
        if len(data) != expected:
            raise ValueError(f"raw image is {len(data)} bytes, want {expected}")
        return np.frombuffer(data, np.uint8).reshape(height, width, 3).copy()
    if encoding == "radiance-f32":
        expected = width * height * 12
        if len(data) != expected:
            raise ValueError(f"radiance image is {len(data)} bytes, want {expected}")
        raise ValueError("radiance-f32 decodes to floats; use RadianceBuffer")
    from PIL import Image
    img = Image.open(io.BytesIO(data)).convert("RGB")
    out = np.asarray(img, np.uint8)
    if out.shape != (height, width, 3):
        raise ValueError(f"decoded {out.shape}, header says {(height, width, 3)}")
    return out.copy()
