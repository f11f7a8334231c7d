"""Materialize the corruption benchmark: every dataset x kind x severity, one PNG per item.

Layout::

    out_root/layout.json
    out_root/{dataset}/{kind}/{severity}/manifest.json
    out_root/{dataset}/{kind}/{severity}/{item_id}.png

Each item's corruption seed comes from ``derive_item_seed`` so results never
depend on scheduling or worker count. A set's manifest is written only after
all of its images, and a dataset's manifests only after all of its sets.
"""
from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corruptions import BENCHMARK_KINDS, SEVERITIES, TABLES_VERSION, CorruptionKind, CorruptionSpec, apply_corruption
from .datamodel import DataError, DatasetManifest, ManifestItem, load_image, save_image, save_manifest
from .seeding import seed_from_parts

log = logging.getLogger(__name__)

_SAFE_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class BenchmarkError(DataError):
    pass


def derive_item_seed(global_seed, dataset: str, kind, severity: int, item_id: str) -> int:
    """FNV-1a 64 of ``"global|dataset|kind|severity|item_id"`` (global seed in decimal if an int)."""
    return seed_from_parts(global_seed, dataset, CorruptionKind(kind).value, int(severity), item_id)


@dataclass
class BenchmarkLayout:
    root: Path
    entries: dict[tuple[str, str, int], Path] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)

    def to_json(self, global_seed: int) -> dict:
        return {
            "global_seed": int(global_seed),
            "tables_version": TABLES_VERSION,
            "sets": [
                {
                    "dataset": ds,
                    "corruption": kind,
                    "severity": sev,
                    "manifest": Path(p).relative_to(self.root).as_posix(),
                }
                for (ds, kind, sev), p in sorted(self.entries.items())
            ],
        }


def load_layout(path) -> BenchmarkLayout:
    path = Path(path)
    doc = json.loads(path.read_text())
    layout = BenchmarkLayout(path.parent)
    for e in doc["sets"]:
        layout.entries[(e["dataset"], e["corruption"], int(e["severity"]))] = path.parent / e["manifest"]
    return layout


def _corrupt_item(task):
    """Decode one source image once and write all of its corrupted variants."""
    src, outputs = task
    img = load_image(src)
    for dst, kind, severity, seed in outputs:
        save_image(apply_corruption(img, CorruptionSpec(kind, severity, seed)), dst)
    return src


def _check_inputs(manifests, out_root: Path):
    names = set()
    for m in manifests:
        if m.split != "test":
            raise BenchmarkError(f"{m.dataset_name}: only test splits are corrupted (split={m.split!r})")
        if m.dataset_name in names:
            raise BenchmarkError(f"duplicate dataset name {m.dataset_name!r}")
        if not _SAFE_NAME.match(m.dataset_name):
            raise BenchmarkError(f"dataset name {m.dataset_name!r} is not usable as a directory name")
        names.add(m.dataset_name)
        bad = [it.item_id for it in m.items if not _SAFE_NAME.match(it.item_id)]
        if bad:
            raise BenchmarkError(f"{m.dataset_name}: item ids not usable as file names: {bad[:3]}")
        for it in m.items:
            src = m.image_path(it).resolve()
            if out_root == src or out_root in src.parents:
                raise BenchmarkError(f"{m.dataset_name}: output root contains source image {src}")


def build_benchmark(
    manifests: list[DatasetManifest],
    global_seed: int,
    out_root,
    kinds=None,
    severities=None,
    workers: int = 1,
    keep_going: bool = False,
) -> BenchmarkLayout:
    out_root = Path(out_root).resolve()
    kinds = [CorruptionKind(k) for k in (kinds or BENCHMARK_KINDS)]
    severities = list(severities or SEVERITIES)
    for s in severities:
        CorruptionSpec(kinds[0], s)
    _check_inputs(manifests, out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    layout = BenchmarkLayout(out_root)

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for m in manifests:
            try:
                layout.entries.update(_build_dataset(m, global_seed, out_root, kinds, severities, pool))
            except (DataError, OSError) as exc:
                if not keep_going:
                    raise BenchmarkError(f"{m.dataset_name}: {exc}") from exc
                log.error("dataset %s failed: %s", m.dataset_name, exc)
                layout.failed[m.dataset_name] = str(exc)
    finally:
        if pool is not None:
            pool.shutdown()

    tmp = out_root / "layout.json.tmp"
    tmp.write_text(json.dumps(layout.to_json(global_seed), indent=2) + "\n")
    os.replace(tmp, out_root / "layout.json")
    return layout


def _build_dataset(m, global_seed, out_root, kinds, severities, pool):
    outputs = {it.item_id: [] for it in m.items}
    pending = {}
    for kind in kinds:
        for sev in severities:
            set_dir = out_root / m.dataset_name / kind.value / str(sev)
            set_dir.mkdir(parents=True, exist_ok=True)
            stale = set_dir / "manifest.json"
            if stale.exists():
                stale.unlink()
            items = []
            for it in m.items:
                seed = derive_item_seed(global_seed, m.dataset_name, kind, sev, it.item_id)
                name = f"{it.item_id}.png"
                outputs[it.item_id].append((set_dir / name, kind.value, sev, seed))
                items.append(ManifestItem(it.item_id, name, it.label))
            pending[(m.dataset_name, kind.value, sev)] = DatasetManifest(
                m.dataset_name, m.modality, list(m.class_names), items,
                root=set_dir, corruption=kind.value, severity=sev,
            )
    tasks = [(m.image_path(it), outputs[it.item_id]) for it in m.items]
    if pool is None:
        for t in tasks:
            _corrupt_item(t)
    else:
        list(pool.map(_corrupt_item, tasks))

    entries = {}
    for key, manifest in pending.items():
        path = Path(manifest.root) / "manifest.json"
        save_manifest(manifest, path)
        entries[key] = path
    log.info("%s: wrote %d sets", m.dataset_name, len(entries))
    return entries
