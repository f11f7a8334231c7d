"""DCT frequency profiles and pixel-intensity histograms over image collections."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .datamodel import DataError, ImageBuffer

LOW_FREQ_CUTOFF = 0.25
HIST_BINS = 256


def dct2(img) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a single-channel image (ImageBuffer or 2-D array)."""
    x = _plane(img)
    return dctn(x, type=2, norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    return idctn(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho")


def _plane(img) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        if img.channels != 1:
            raise ValueError("dct2 needs a single-channel image; convert with luma() first")
        return img.pixels[:, :, 0]
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim != 2:
        raise ValueError(f"dct2 needs a 2-D plane, got shape {x.shape}")
    return x


def luma(img: ImageBuffer) -> ImageBuffer:
    """Equal-weight channel average."""
    return ImageBuffer(img.pixels.mean(axis=2, keepdims=True))


def radial_frequency(height: int, width: int) -> np.ndarray:
    """Normalized radial frequency of each DCT coefficient; index k maps to k/N of Nyquist."""
    u = np.arange(height)[:, None] / height
    v = np.arange(width)[None, :] / width
    return np.sqrt(u * u + v * v)


def _split(energy: np.ndarray) -> tuple[float, float]:
    total = energy.sum()
    if total <= 0.0:
        return 1.0, 0.0
    low = energy[radial_frequency(*energy.shape) < LOW_FREQ_CUTOFF].sum() / total
    return float(low), float(1.0 - low)


def high_frequency_fraction(img: ImageBuffer) -> float:
    return _split(dct2(luma(img)) ** 2)[1]


@dataclass
class FrequencyProfile:
    magnitude: np.ndarray
    energy: np.ndarray
    low_fraction: float
    high_fraction: float
    n_images: int


def frequency_profile(imgs) -> FrequencyProfile:
    """Dataset-averaged DCT magnitude and energy grids, split at LOW_FREQ_CUTOFF."""
    imgs = list(imgs)
    if not imgs:
        raise DataError("frequency_profile needs at least one image")
    shape = imgs[0].shape[:2]
    mag = np.zeros(shape)
    energy = np.zeros(shape)
    for img in imgs:
        if img.shape[:2] != shape:
            raise DataError(f"image size {img.shape[:2]} differs from {shape}")
        c = dct2(luma(img))
        mag += np.abs(c)
        energy += c * c
    mag /= len(imgs)
    energy /= len(imgs)
    low, high = _split(energy)
    return FrequencyProfile(mag, energy, low, high, len(imgs))


@dataclass
class DensityHistogram:
    mass: np.ndarray
    edges: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    def mean(self) -> float:
        return float(np.dot(self.mass, self.centers))


def pixel_histogram(imgs) -> DensityHistogram:
    imgs = list(imgs)
    if not imgs:
        raise DataError("pixel_histogram needs at least one image")
    counts = np.zeros(HIST_BINS)
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    for img in imgs:
        counts += np.histogram(img.pixels, bins=edges)[0]
    return DensityHistogram(counts / counts.sum(), edges)


def write_profile_csv(profile: FrequencyProfile, path) -> None:
    h, w = profile.magnitude.shape
    rad = radial_frequency(h, w)
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["u", "v", "radial_frequency", "mean_magnitude", "mean_energy"])
        for u in range(h):
            for v in range(w):
                out.writerow([u, v, f"{rad[u, v]:.6f}", f"{profile.magnitude[u, v]:.8g}", f"{profile.energy[u, v]:.8g}"])


def write_histogram_csv(hist: DensityHistogram, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["bin", "left", "right", "mass"])
        for i, m in enumerate(hist.mass):
            out.writerow([i, f"{hist.edges[i]:.6f}", f"{hist.edges[i + 1]:.6f}", f"{m:.8g}"])
