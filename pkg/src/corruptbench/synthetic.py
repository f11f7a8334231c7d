"""Procedural images and datasets for tests, acceptance runs and demos."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .datamodel import MODALITIES, DatasetManifest, ImageBuffer, ManifestItem, save_image, save_manifest
from .seeding import make_rng, seed_from_parts

SHAPE_CLASSES = ("circle", "square", "triangle", "cross")


def natural_image(seed: int, size: int = 64, channels: int = 1) -> ImageBuffer:
    """Smooth random field plus a few hard-edged blobs, kept inside [0.1, 0.9]."""
    rng = make_rng(seed)
    field = ndimage.gaussian_filter(rng.standard_normal((size, size, channels)), sigma=(size / 10, size / 10, 0))
    field = (field - field.mean()) / (field.std() + 1e-12)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(3):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(size / 10, size / 4)
        field[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] += rng.uniform(-1.5, 1.5)
    lo, hi = field.min(), field.max()
    return ImageBuffer(0.1 + 0.8 * (field - lo) / (hi - lo))


def checkerboard(size: int = 64, cell: int = 2, low: float = 0.2, high: float = 0.8, phase: int = 0) -> ImageBuffer:
    yy, xx = np.mgrid[0:size, 0:size]
    board = ((yy // cell + xx // cell + phase) % 2).astype(np.float64)
    return ImageBuffer(low + (high - low) * board)


def disk(size: int = 64, radius: float = 16.0, inside: float = 0.8, outside: float = 0.2) -> ImageBuffer:
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (yy - c) ** 2 + (xx - c) ** 2 <= radius * radius
    return ImageBuffer(np.where(mask, inside, outside))


def shape_image(label: int, seed: int, size: int = 32) -> ImageBuffer:
    """One of four filled shapes with random position, scale and contrast over a noisy background."""
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = rng.uniform(0.22, 0.32) * size
    cy, cx = rng.uniform(r + 1, size - r - 1, 2)
    dy, dx = yy - cy, xx - cx
    if label == 0:
        mask = dy * dy + dx * dx <= r * r
    elif label == 1:
        mask = (np.abs(dy) <= 0.85 * r) & (np.abs(dx) <= 0.85 * r)
    elif label == 2:
        mask = (dy <= 0.8 * r) & (dy >= -r + 2.0 * np.abs(dx))
    elif label == 3:
        arm = 0.3 * r
        mask = ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    else:
        raise ValueError(f"label must be 0..3, got {label}")
    bg = rng.uniform(0.1, 0.35)
    fg = rng.uniform(0.6, 0.9)
    px = np.where(mask, fg, bg) + rng.normal(0.0, 0.03, (size, size))
    return ImageBuffer(np.clip(px, 0.0, 1.0))


def shapes_arrays(n: int, seed: int, size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """``n`` class-balanced shape images as an (n, size, size, 1) array plus labels."""
    labels = np.arange(n) % len(SHAPE_CLASSES)
    make_rng(seed).shuffle(labels)
    images = np.stack([shape_image(int(y), seed_from_parts(seed, "shape", i), size).pixels for i, y in enumerate(labels)])
    return images, labels


def write_dataset(root, name: str, modality: str, images, labels, class_names, split: str = "test") -> Path:
    """Write PNGs plus ``manifest.json`` under ``root/name``; returns the manifest path."""
    root = Path(root) / name
    (root / "images").mkdir(parents=True, exist_ok=True)
    items = []
    for i, (img, y) in enumerate(zip(images, labels)):
        item_id = f"{name}_{i:05d}"
        rel = f"images/{item_id}.png"
        save_image(img if isinstance(img, ImageBuffer) else ImageBuffer(img), root / rel)
        items.append(ManifestItem(item_id, rel, int(y)))
    manifest = DatasetManifest(name, modality, list(class_names), items, root=root, split=split)
    save_manifest(manifest, root / "manifest.json")
    return root / "manifest.json"


def write_fixture_datasets(root, n_datasets: int = 5, n_items: int = 100, size: int = 64, seed: int = 0) -> list[Path]:
    """One small two-class dataset per modality, with natural-looking images."""
    paths = []
    for d in range(n_datasets):
        modality = MODALITIES[d % len(MODALITIES)]
        channels = 3 if d % 2 else 1
        imgs = [natural_image(seed_from_parts(seed, "fixture", d, i), size, channels) for i in range(n_items)]
        labels = [i % 2 for i in range(n_items)]
        paths.append(write_dataset(root, f"toy{d}", modality, imgs, labels, ["negative", "positive"]))
    return paths
