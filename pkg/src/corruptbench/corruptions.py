"""Severity-graded corruption kernels.

Every kernel maps ``(ImageBuffer, severity, seed) -> ImageBuffer`` and keeps
shape, channel count and the [0, 1] range. Only ``gaussian_noise``,
``impulse_noise`` and ``motion_blur`` consume the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .datamodel import CLEAN_TAG, ImageBuffer
from .seeding import make_rng


class CorruptionKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    IMPULSE_NOISE = "impulse_noise"
    MOTION_BLUR = "motion_blur"
    ZOOM_BLUR = "zoom_blur"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    PIXELATE = "pixelate"
    BLOCK_JPEG = "block_jpeg"

    def __str__(self):
        return self.value


# Result-table order; block_jpeg is opt-in and not part of the benchmark.
BENCHMARK_KINDS = tuple(CorruptionKind)[:7]
SEVERITIES = (1, 2, 3, 4, 5)
LOG_CORRUPTIONS = frozenset([CLEAN_TAG, *(k.value for k in BENCHMARK_KINDS)])

TABLES_VERSION = "imagenet-c-compat/1"
SEVERITY_TABLES = {
    CorruptionKind.GAUSSIAN_NOISE: ("sigma", (0.08, 0.12, 0.18, 0.26, 0.38)),
    CorruptionKind.IMPULSE_NOISE: ("fraction", (0.03, 0.06, 0.09, 0.17, 0.27)),
    CorruptionKind.MOTION_BLUR: ("kernel_length", (7, 9, 13, 17, 21)),
    CorruptionKind.ZOOM_BLUR: ("max_zoom", (1.11, 1.16, 1.21, 1.26, 1.31)),
    CorruptionKind.BRIGHTNESS: ("shift", (0.1, 0.2, 0.3, 0.4, 0.5)),
    CorruptionKind.CONTRAST: ("factor", (0.4, 0.3, 0.2, 0.1, 0.05)),
    CorruptionKind.PIXELATE: ("scale", (0.6, 0.5, 0.4, 0.3, 0.25)),
    CorruptionKind.BLOCK_JPEG: ("quality", (25, 18, 15, 10, 7)),
}

JPEG_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        _check_severity(self.severity)


def _check_severity(severity):
    if isinstance(severity, bool) or severity not in SEVERITIES:
        raise ValueError(f"severity must be an integer in 1..5, got {severity!r}")


def severity_param(kind, severity: int):
    _check_severity(severity)
    return SEVERITY_TABLES[CorruptionKind(kind)][1][severity - 1]


def _out(x: np.ndarray) -> ImageBuffer:
    return ImageBuffer(np.clip(x, 0.0, 1.0))


def apply_gaussian_noise(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    sigma = severity_param(CorruptionKind.GAUSSIAN_NOISE, severity)
    noise = make_rng(seed).standard_normal(img.shape) * sigma
    return _out(img.pixels + noise)


def impulse_count(height: int, width: int, severity: int) -> int:
    frac = severity_param(CorruptionKind.IMPULSE_NOISE, severity)
    return int(math.floor(frac * height * width + 0.5))


def apply_impulse_noise(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    """Salt-and-pepper over whole pixel positions (all channels of a hit pixel get the same value)."""
    h, w, _ = img.shape
    n = impulse_count(h, w, severity)
    rng = make_rng(seed)
    flat = rng.choice(h * w, size=n, replace=False)
    values = rng.integers(0, 2, size=n).astype(np.float64)
    out = img.pixels.copy()
    rows, cols = np.divmod(flat, w)
    out[rows, cols, :] = values[:, None]
    return ImageBuffer(out)


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized line kernel of ``length`` taps, one tap per step along the dominant axis.

    ``angle`` is in radians, measured from the +x (column) axis toward +y (rows).
    """
    if length < 1:
        raise ValueError("kernel length must be positive")
    size = length if length % 2 else length + 1
    c = size // 2
    kernel = np.zeros((size, size))
    dx, dy = math.cos(angle), math.sin(angle)
    half = (length - 1) / 2.0
    for k in range(length):
        t = k - half
        if abs(dx) >= abs(dy):
            col = c + int(math.floor(t + 0.5))
            row = c + int(math.floor(t * dy / dx + 0.5))
        else:
            row = c + int(math.floor(t + 0.5))
            col = c + int(math.floor(t * dx / dy + 0.5))
        kernel[row, col] = 1.0
    return kernel / kernel.sum()


def motion_angle(seed: int) -> float:
    return float(make_rng(seed).uniform(0.0, math.pi))


def _blur_channels(pixels: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return np.stack(
        [ndimage.correlate(pixels[:, :, ch], kernel, mode="reflect") for ch in range(pixels.shape[2])],
        axis=2,
    )


def apply_motion_blur(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    length = severity_param(CorruptionKind.MOTION_BLUR, severity)
    kernel = motion_blur_kernel(length, motion_angle(seed))
    return _out(_blur_channels(img.pixels, kernel))


def zoom_factors(severity: int) -> list[float]:
    z_max = severity_param(CorruptionKind.ZOOM_BLUR, severity)
    steps = int(round((z_max - 1.0) * 100))
    return [1.0 + k / 100.0 for k in range(steps + 1)]


def linear_interp_matrix(n: int, coords: np.ndarray) -> np.ndarray:
    """(len(coords) x n) matrix sampling a length-n signal at ``coords`` by linear interpolation (clamped)."""
    coords = np.clip(np.asarray(coords, dtype=np.float64), 0.0, n - 1.0)
    lo = np.minimum(np.floor(coords).astype(int), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = coords - lo
    m = np.zeros((len(coords), n))
    rows = np.arange(len(coords))
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def center_zoom(pixels: np.ndarray, factor: float) -> np.ndarray:
    """Crop the central 1/factor of the image and upsample bilinearly back to full size.

    Bilinear sampling on a product grid is separable, so it is two small matrix products.
    """
    h, w, _ = pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    mh = linear_interp_matrix(h, cy + (np.arange(h) - cy) / factor)
    mw = linear_interp_matrix(w, cx + (np.arange(w) - cx) / factor)
    return np.einsum("ah,hwc,bw->abc", mh, pixels, mw, optimize=True)


def apply_zoom_blur(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    acc = img.pixels.copy()
    factors = zoom_factors(severity)
    for z in factors:
        acc += center_zoom(img.pixels, z)
    return _out(acc / (len(factors) + 1))


def apply_brightness(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    return _out(img.pixels + severity_param(CorruptionKind.BRIGHTNESS, severity))


def apply_contrast(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    c = severity_param(CorruptionKind.CONTRAST, severity)
    mu = img.pixels.mean(axis=(0, 1), keepdims=True)
    return _out((img.pixels - mu) * c + mu)


def area_resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out x n_in) matrix averaging input cells by overlap with each output cell."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    m = np.zeros((n_out, n_in))
    for r in range(n_out):
        lo, hi = edges[r], edges[r + 1]
        for i in range(int(math.floor(lo)), min(n_in, int(math.ceil(hi)))):
            m[r, i] = min(hi, i + 1) - max(lo, i)
    return m / m.sum(axis=1, keepdims=True)


def pixelate_size(n: int, severity: int) -> int:
    f = severity_param(CorruptionKind.PIXELATE, severity)
    return max(1, math.ceil(f * n - 1e-9))


def apply_pixelate(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    h, w, _ = img.shape
    sh, sw = pixelate_size(h, severity), pixelate_size(w, severity)
    mh, mw = area_resample_matrix(h, sh), area_resample_matrix(w, sw)
    small = np.einsum("ah,hwc,bw->abc", mh, img.pixels, mw, optimize=True)
    # each output pixel takes the cell containing its center
    ri = ((2 * np.arange(h) + 1) * sh) // (2 * h)
    ci = ((2 * np.arange(w) + 1) * sw) // (2 * w)
    return _out(small[ri][:, ci])


def jpeg_quant_table(quality: float) -> np.ndarray:
    """IJG scaling of the standard luminance table; steps never drop below 1."""
    quality = min(max(quality, 1), 100)
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.maximum(np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0), 1.0)


def quantize_blocks(coeffs: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Round DC to the nearest step; truncate AC toward zero (dead-zone), so AC magnitudes only shrink.

    ``coeffs`` has shape (..., 8, 8).
    """
    q = np.trunc(coeffs / qtable) * qtable
    q[..., 0, 0] = np.floor(coeffs[..., 0, 0] / qtable[0, 0] + 0.5) * qtable[0, 0]
    return q


def _to_blocks(plane: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = plane.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    return padded.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3), (h, w)


def _from_blocks(blocks: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)[: size[0], : size[1]]


def block_dct_roundtrip(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Level-shifted 8x8 DCT, quantize, inverse; ``plane`` in [0, 1], result unclamped."""
    blocks, size = _to_blocks(plane * 255.0 - 128.0)
    coeffs = dctn(blocks, axes=(2, 3), norm="ortho")
    rec = idctn(quantize_blocks(coeffs, qtable), axes=(2, 3), norm="ortho")
    return (_from_blocks(rec, size) + 128.0) / 255.0


def apply_block_jpeg(img: ImageBuffer, severity: int, seed: int) -> ImageBuffer:
    qtable = jpeg_quant_table(severity_param(CorruptionKind.BLOCK_JPEG, severity))
    out = np.stack(
        [block_dct_roundtrip(img.pixels[:, :, ch], qtable) for ch in range(img.channels)], axis=2
    )
    return _out(out)


KERNELS = {
    CorruptionKind.GAUSSIAN_NOISE: apply_gaussian_noise,
    CorruptionKind.IMPULSE_NOISE: apply_impulse_noise,
    CorruptionKind.MOTION_BLUR: apply_motion_blur,
    CorruptionKind.ZOOM_BLUR: apply_zoom_blur,
    CorruptionKind.BRIGHTNESS: apply_brightness,
    CorruptionKind.CONTRAST: apply_contrast,
    CorruptionKind.PIXELATE: apply_pixelate,
    CorruptionKind.BLOCK_JPEG: apply_block_jpeg,
}
STOCHASTIC_KINDS = frozenset(
    {CorruptionKind.GAUSSIAN_NOISE, CorruptionKind.IMPULSE_NOISE, CorruptionKind.MOTION_BLUR}
)


def apply_corruption(img: ImageBuffer, spec: CorruptionSpec) -> ImageBuffer:
    try:
        kernel = KERNELS[CorruptionKind(spec.kind)]
    except ValueError:
        raise ValueError(f"unknown corruption kind {spec.kind!r}") from None
    return kernel(img, spec.severity, spec.seed)


def severity_table_rows(include_optional: bool = False) -> list[list]:
    kinds = tuple(CorruptionKind) if include_optional else BENCHMARK_KINDS
    return [[k.value, SEVERITY_TABLES[k][0], *SEVERITY_TABLES[k][1]] for k in kinds]
