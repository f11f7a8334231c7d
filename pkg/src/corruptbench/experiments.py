"""Desk-scale adaptation experiment on the procedural shapes dataset.

A seeded random encoder plays the frozen "pretrained" model. Few-shot LoRA
tuning on a stratified slice of the training split is compared with it on the
clean test split and on every corruption cell of the benchmark.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .benchgen import derive_item_seed
from .corruptions import BENCHMARK_KINDS, SEVERITIES, CorruptionSpec, apply_corruption
from .datamodel import ImageBuffer
from .seeding import make_rng, seed_from_parts
from .metrics import AccuracyGrid, RobustnessReport, build_report
from .synthetic import SHAPE_CLASSES, shapes_arrays
from .tinyclip.config import EncoderConfig, TrainConfig
from .tinyclip.encoder import VisualEncoder
from .tinyclip.prompts import prompt_embeddings
from .tinyclip.train import train_lora, zero_shot_predict_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShapesExperimentConfig:
    n_train: int = 2000
    n_test: int = 400
    percent: float = 10.0
    lora_rank: int = 16
    lr: float = 1e-4
    epochs: int = 20
    batch_size: int = 1
    # corrupted cells are scored on the first n_corrupt test items
    n_corrupt: int = 200
    modality: str = "cell_microscopy"
    corrupt: bool = True


@dataclass
class SeedResult:
    seed: int
    n_shots: int
    base_clean: float
    tuned_clean: float
    loss_trace: list[float]
    report: RobustnessReport | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["report"] = self.report.to_dict() if self.report else None
        return d


@dataclass
class ExperimentSummary:
    config: ShapesExperimentConfig
    runs: list[SeedResult] = field(default_factory=list)

    @property
    def base_clean(self) -> float:
        return float(np.mean([r.base_clean for r in self.runs]))

    @property
    def tuned_clean(self) -> float:
        return float(np.mean([r.tuned_clean for r in self.runs]))

    @property
    def mce(self) -> float:
        return float(np.mean([r.report.mce_pct for r in self.runs if r.report]))

    def to_dict(self) -> dict:
        out = {"config": asdict(self.config), "runs": [r.to_dict() for r in self.runs]}
        out.update(base_clean=self.base_clean, tuned_clean=self.tuned_clean)
        if any(r.report for r in self.runs):
            out["mce_pct"] = self.mce
        return out


def stratified_indices(labels: np.ndarray, percent: float, seed: int) -> np.ndarray:
    """Same per-class rule as the manifest sampler: max(1, round(p * n_c / 100))."""
    rng = make_rng(seed_from_parts(seed, "shots"))
    chosen = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = max(1, int(np.floor(percent * len(idx) / 100 + 0.5)))
        chosen.append(np.sort(rng.permutation(idx)[:k]))
    return np.sort(np.concatenate(chosen))


def corrupted_grid(enc, images, labels, table, seed, use_adapters=True, model_id="") -> AccuracyGrid:
    clean = float(np.mean(zero_shot_predict_batch(enc, images, table, use_adapters) == labels))
    cells = {}
    for kind in BENCHMARK_KINDS:
        for sev in SEVERITIES:
            batch = _corrupt_batch(images, kind, sev, seed)
            cells[(kind.value, sev)] = float(np.mean(zero_shot_predict_batch(enc, batch, table, use_adapters) == labels))
    return AccuracyGrid(clean, cells, model_id, "shapes")


_CACHE: dict = {}


def _corrupt_batch(images, kind, sev, seed):
    key = (id(images), kind, sev, seed)
    if key not in _CACHE:
        _CACHE[key] = np.stack([
            apply_corruption(ImageBuffer(img), CorruptionSpec(kind, sev, derive_item_seed(seed, "shapes", kind, sev, f"t{i}"))).pixels
            for i, img in enumerate(images)
        ])
    return _CACHE[key]


def run_seed(seed: int, cfg: ShapesExperimentConfig = ShapesExperimentConfig()) -> SeedResult:
    t0 = time.time()
    x_train, y_train = shapes_arrays(cfg.n_train, seed=1000 + seed)
    x_test, y_test = shapes_arrays(cfg.n_test, seed=2000 + seed)
    shots = stratified_indices(y_train, cfg.percent, seed)

    enc = VisualEncoder(EncoderConfig(lora_rank=cfg.lora_rank), seed=seed)
    table = prompt_embeddings(SHAPE_CLASSES, cfg.modality, seed=seed, embed_dim=enc.cfg.embed_dim)
    base_clean = float(np.mean(zero_shot_predict_batch(enc, x_test, table, use_adapters=False) == y_test))

    tcfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, percent=cfg.percent, seed=seed)
    enc, trace = train_lora(enc, x_train[shots], y_train[shots], table, tcfg)
    tuned_clean = float(np.mean(zero_shot_predict_batch(enc, x_test, table) == y_test))

    report = None
    if cfg.corrupt:
        xs, ys = x_test[: cfg.n_corrupt], y_test[: cfg.n_corrupt]
        base = corrupted_grid(enc, xs, ys, table, seed, use_adapters=False, model_id="base")
        tuned = corrupted_grid(enc, xs, ys, table, seed, model_id="lora")
        report = build_report(tuned, base)
        _CACHE.clear()
    res = SeedResult(seed, len(shots), base_clean, tuned_clean, trace, report, time.time() - t0)
    log.info("seed %d: base %.3f tuned %.3f (%.1fs)", seed, base_clean, tuned_clean, res.seconds)
    return res


def run_experiment(seeds=(0, 1, 2), cfg: ShapesExperimentConfig = ShapesExperimentConfig()) -> ExperimentSummary:
    return ExperimentSummary(cfg, [run_seed(s, cfg) for s in seeds])


def few_shot_sweep(percents=(1, 3, 7, 10), seeds=(0, 1, 2), **overrides) -> dict[float, ExperimentSummary]:
    """Clean-accuracy ablation over few-shot percentages."""
    out = {}
    for p in percents:
        cfg = ShapesExperimentConfig(percent=float(p), corrupt=False, **overrides)
        out[p] = run_experiment(seeds, cfg)
    return out
