"""Image buffers, dataset manifests and prediction logs, plus their file formats.

Manifest JSON::

    {"dataset_name": "pbc", "modality": "cell_microscopy",
     "class_names": ["basophil", ...],
     "items": [{"id": "img001", "path": "images/img001.png", "label": 0}, ...]}

Item paths are relative to the manifest's directory. Two optional keys are
understood: ``split`` (defaults to ``"test"``) and, on manifests emitted by the
benchmark generator, ``corruption`` / ``severity``.

Prediction log CSV header: ``item_id,corruption,severity,true_label,pred_label``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MODALITIES = (
    "cell_microscopy",
    "breast_imaging",
    "chest_xray",
    "fundoscopy",
    "retinal_oct",
)
CLEAN_TAG = "clean"
LOG_HEADER = ("item_id", "corruption", "severity", "true_label", "pred_label")
CACHE_ENV = "CORRUPTBENCH_CACHE"


class DataError(ValueError):
    """Raised for malformed input data (manifests, logs, images, grids)."""


class ManifestError(DataError):
    pass


class ImageFormatError(DataError):
    pass


class LogError(DataError):
    pass


@dataclass
class ImageBuffer:
    """H x W x C float64 image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected HxWx1 or HxWx3 pixels, got shape {px.shape}")
        if px.size and (not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.pixels.copy())

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    path: str
    label: int


@dataclass
class DatasetManifest:
    dataset_name: str
    modality: str
    class_names: list[str]
    items: list[ManifestItem]
    root: Path = field(default_factory=Path, compare=False)
    split: str = "test"
    corruption: str = CLEAN_TAG
    severity: int = 0

    def __post_init__(self):
        validate_manifest(self)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def image_path(self, item: ManifestItem) -> Path:
        return Path(self.root) / item.path

    def to_json(self) -> dict:
        doc = {
            "dataset_name": self.dataset_name,
            "modality": self.modality,
            "class_names": list(self.class_names),
            "items": [{"id": it.item_id, "path": it.path, "label": it.label} for it in self.items],
        }
        if self.split != "test":
            doc["split"] = self.split
        if self.corruption != CLEAN_TAG:
            doc["corruption"] = self.corruption
            doc["severity"] = self.severity
        return doc


def validate_manifest(m: DatasetManifest) -> None:
    if not m.dataset_name:
        raise ManifestError("dataset_name is empty")
    if m.modality not in MODALITIES:
        raise ManifestError(f"modality {m.modality!r} not one of {', '.join(MODALITIES)}")
    if not m.class_names:
        raise ManifestError("class_names is empty")
    if len(set(m.class_names)) != len(m.class_names):
        raise ManifestError("class_names contains duplicates")
    if (m.corruption == CLEAN_TAG) != (m.severity == 0):
        raise ManifestError("severity must be 0 exactly when corruption is 'clean'")
    seen = set()
    for row, it in enumerate(m.items):
        if it.item_id in seen:
            raise ManifestError(f"items[{row}]: duplicate item id {it.item_id!r}")
        seen.add(it.item_id)
        if isinstance(it.label, bool) or not isinstance(it.label, int):
            raise ManifestError(f"items[{row}] ({it.item_id}): label must be an integer")
        if not 0 <= it.label < len(m.class_names):
            raise ManifestError(
                f"items[{row}] ({it.item_id}): label {it.label} out of range "
                f"for {len(m.class_names)} classes"
            )


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    for key in ("dataset_name", "modality", "class_names", "items"):
        if key not in doc:
            raise ManifestError(f"{path}: missing key {key!r}")
    if not isinstance(doc["items"], list) or not isinstance(doc["class_names"], list):
        raise ManifestError(f"{path}: 'items' and 'class_names' must be lists")
    items = []
    for row, raw in enumerate(doc["items"]):
        if not isinstance(raw, dict) or not {"id", "path", "label"} <= raw.keys():
            raise ManifestError(f"{path}: items[{row}] needs 'id', 'path' and 'label'")
        items.append(ManifestItem(str(raw["id"]), str(raw["path"]), raw["label"]))
    try:
        return DatasetManifest(
            dataset_name=str(doc["dataset_name"]),
            modality=str(doc["modality"]),
            class_names=[str(c) for c in doc["class_names"]],
            items=items,
            root=path.parent,
            split=str(doc.get("split", "test")),
            corruption=str(doc.get("corruption", CLEAN_TAG)),
            severity=int(doc.get("severity", 0)),
        )
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write ``manifest`` as JSON; the temp-file rename keeps a crash from leaving half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest.to_json(), indent=2) + "\n")
    os.replace(tmp, path)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Round-half-up to 8 bits."""
    return np.clip(np.floor(np.asarray(pixels) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _decode_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: only PNG is supported, got {im.format}")
            if im.mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode} (need 8-bit L or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def load_image(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"image not found: {path}")
    cache_dir = os.environ.get(CACHE_ENV)
    if not cache_dir:
        return ImageBuffer(_decode_png(path))
    data = path.read_bytes()
    cached = Path(cache_dir) / (hashlib.sha256(data).hexdigest() + ".npy")
    if cached.is_file():
        return ImageBuffer(np.load(cached))
    pixels = _decode_png(path)
    cached.parent.mkdir(parents=True, exist_ok=True)
    tmp = cached.with_name(f"{cached.stem}.{os.getpid()}.tmp.npy")
    np.save(tmp, pixels)
    os.replace(tmp, cached)
    return ImageBuffer(pixels)


def save_image(img: ImageBuffer, path) -> None:
    path = Path(path)
    data = quantize(img.pixels)
    if data.shape[2] == 1:
        pil = Image.fromarray(data[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(data, mode="RGB")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class PredictionRow:
    item_id: str
    corruption: str
    severity: int
    true_label: int
    pred_label: int


def validate_row(row: PredictionRow, num_classes: int | None = None, where: str = "") -> None:
    if (row.corruption == CLEAN_TAG) != (row.severity == 0):
        raise LogError(f"{where}severity must be 0 exactly when corruption is 'clean'")
    if row.corruption != CLEAN_TAG and not 1 <= row.severity <= 5:
        raise LogError(f"{where}severity {row.severity} outside 1..5")
    for name in ("true_label", "pred_label"):
        v = getattr(row, name)
        if v < 0 or (num_classes is not None and v >= num_classes):
            raise LogError(f"{where}{name} {v} is not a valid label id")


def read_prediction_log(path, num_classes: int | None = None) -> list[PredictionRow]:
    from .corruptions import LOG_CORRUPTIONS

    path = Path(path)
    if not path.is_file():
        raise LogError(f"prediction log not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
            raise LogError(f"{path}: header must be {','.join(LOG_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            where = f"{path}:{lineno}: "
            if len(rec) != len(LOG_HEADER):
                raise LogError(f"{where}expected {len(LOG_HEADER)} fields, got {len(rec)}")
            item_id, corruption, sev, true_label, pred_label = (f.strip() for f in rec)
            if corruption not in LOG_CORRUPTIONS:
                raise LogError(f"{where}unknown corruption {corruption!r}")
            try:
                row = PredictionRow(item_id, corruption, int(sev), int(true_label), int(pred_label))
            except ValueError:
                raise LogError(f"{where}severity and labels must be integers") from None
            validate_row(row, num_classes, where)
            rows.append(row)
    return rows


def write_prediction_log(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in rows:
            writer.writerow([r.item_id, r.corruption, r.severity, r.true_label, r.pred_label])
