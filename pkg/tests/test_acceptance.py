"""Acceptance gate: one test and one printed pass/fail line per criterion."""
import csv
import hashlib
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from corruptbench.analysis import dct2, high_frequency_fraction, idct2
from corruptbench.benchgen import build_benchmark
from corruptbench.corruptions import BENCHMARK_KINDS, SEVERITIES, KERNELS
from corruptbench.datamodel import load_manifest
from corruptbench.experiments import ShapesExperimentConfig, run_experiment
from corruptbench.metrics import build_report, clean_error_ratio, corruption_error, mean_corruption_error, read_grid_csv
from corruptbench.synthetic import natural_image, write_fixture_datasets
from corruptbench.tinyclip.config import VIT_B16, EncoderConfig
from corruptbench.tinyclip.encoder import VisualEncoder, count_lora_params
from corruptbench.tinyclip.prompts import prompt_embeddings
from corruptbench.tinyclip.train import zero_shot_predict_batch

from test_tinyclip import fd_max_relative_error, perturb_adapters

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
KINDS = [k.value for k in BENCHMARK_KINDS]
MODEL_FILES = {"CLIP": "clip", "MedCLIP": "medclip", "BioMedCLIP": "biomedclip", "UniMedCLIP": "unimedclip", "RMedCLIP": "rmedclip"}


def tree_digest(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c01_table_reproduction(criterion):
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    with open(FIXTURES / "table2_robustness.csv") as fh:
        for row in csv.DictReader(fh):
            d = FIXTURES / "grids" / row["benchmark"] / row["modality"]
            report = build_report(read_grid_csv(d / f"{MODEL_FILES[row['model']]}.csv"), read_grid_csv(d / "clip.csv"))
            expected = [float(row[c]) for c in ["clean", *KINDS, "mce"]]
            worst = max(worst, float(np.max(np.abs(np.array(report.table_row()) - expected))))
            n += len(expected)
    elapsed = time.perf_counter() - t0
    ok = criterion(1, n == 450 and worst <= 0.15 and elapsed < 1.0,
                   f"{n} table values, max deviation {worst:.3f} pp (tol 0.15), {elapsed:.2f}s (< 1s)")
    assert ok


def test_c02_spot_checks(criterion):
    clean = clean_error_ratio(1 - 0.8005, 1 - 0.1781)
    gauss = corruption_error([1 - 0.3230] * 5, [1 - 0.1758] * 5)
    model, base = read_grid_csv(FIXTURES / "rmc_cell.csv"), read_grid_csv(FIXTURES / "clip_cell.csv")
    mce = mean_corruption_error(build_report(model, base).ce_pct)
    ok = abs(clean - 24.3) <= 0.15 and abs(gauss - 82.1) <= 0.15 and abs(mce - 70.1) <= 0.15
    assert criterion(2, ok, f"clean {clean:.2f} (24.3), gaussian CE {gauss:.2f} (82.1), mCE {mce:.2f} (70.1), tol 0.15")


def test_c03_parameter_accounting(criterion):
    trainable, total, pct = count_lora_params(VIT_B16)
    ok = trainable == 884_736 and abs(total - 87e6) / 87e6 <= 0.02 and 1.00 <= pct <= 1.05
    assert criterion(3, ok, f"trainable {trainable:,} (884,736), total {total:,} (87M +/- 2%), {pct:.3f}% in [1.00, 1.05]")


def test_c04_benchmark_generation(tmp_path, criterion):
    paths = write_fixture_datasets(tmp_path / "src", n_datasets=5, n_items=100, size=64, seed=0)
    manifests = [load_manifest(p) for p in paths]
    times = []
    for name, workers in (("a", 1), ("b", 1), ("c", 8)):
        t0 = time.perf_counter()
        layout = build_benchmark(manifests, 2024, tmp_path / name, workers=workers)
        times.append(time.perf_counter() - t0)
    sets = list((tmp_path / "a").rglob("manifest.json"))
    preserved = True
    for (ds, _, _), p in layout.entries.items():
        src = next(m for m in manifests if m.dataset_name == ds)
        out = load_manifest(p)
        preserved &= [(i.item_id, i.label) for i in out.items] == [(i.item_id, i.label) for i in src.items]
    a, b, c = (tree_digest(tmp_path / n) for n in "abc")
    ok = len(sets) == 175 and len(layout.entries) == 175 and preserved and a == b == c and max(times) < 120
    assert criterion(4, ok, f"{len(sets)} sets (175), labels preserved {preserved}, repeat identical {a == b}, "
                            f"1 vs 8 workers identical {a == c}, slowest build {max(times):.1f}s (< 120s)")


def test_c05_severity_monotonicity(criterion):
    imgs = [natural_image(1000 + i, 64) for i in range(100)]
    bad = []
    for kind in BENCHMARK_KINDS:
        mse = [np.mean([np.mean((KERNELS[kind](im, s, 7 * i + s).pixels - im.pixels) ** 2) for i, im in enumerate(imgs)])
               for s in SEVERITIES]
        if not all(x < y for x, y in zip(mse, mse[1:])):
            bad.append(kind.value)
    assert criterion(5, not bad, f"7 kernels x 100 images, non-monotone: {bad or 'none'}")


def test_c06_gradient_check(criterion):
    rng = np.random.default_rng(606)
    cfg = EncoderConfig()
    table = prompt_embeddings(["circle", "square", "triangle", "cross"], "cell_microscopy", seed=6)
    worst = 0.0
    for b in range(3):
        enc = VisualEncoder(cfg, seed=b)
        perturb_adapters(enc, b)
        x = rng.random((6, 32, 32, 1))
        y = rng.integers(0, 4, 6).tolist()
        worst = max(worst, fd_max_relative_error(enc, x, y, table, rng, n_coords=32))
    assert criterion(6, worst < 1e-4, f"3 batches x 32 coordinates, max relative error {worst:.2e} (< 1e-4)")


def test_c07_adapter_neutrality(criterion):
    cfg = EncoderConfig()
    enc = VisualEncoder(cfg, seed=77)
    table = prompt_embeddings(["circle", "square", "triangle", "cross"], "cell_microscopy", seed=77)
    x = np.random.default_rng(7).random((200, 32, 32, 1))
    with_ad = zero_shot_predict_batch(enc, x, table, use_adapters=True)
    without = zero_shot_predict_batch(enc, x, table, use_adapters=False)
    same = int(np.sum(with_ad == without))
    b_zero = all(torch.count_nonzero(p) == 0 for k, p in enc.lora.items() if k.endswith("_B"))
    assert criterion(7, same == 200 and b_zero, f"{same}/200 predictions identical with fresh adapters")


@pytest.fixture(scope="module")
def ten_percent():
    t0 = time.perf_counter()
    summary = run_experiment((0, 1, 2), ShapesExperimentConfig(percent=10.0))
    return summary, time.perf_counter() - t0


def test_c08_toy_adaptation_effect(ten_percent, criterion):
    summary, elapsed = ten_percent
    gain = 100 * (summary.tuned_clean - summary.base_clean)
    ok = gain >= 20 and summary.mce < 100 and elapsed < 300
    assert criterion(8, ok, f"clean acc {100 * summary.base_clean:.1f} -> {100 * summary.tuned_clean:.1f} "
                            f"(+{gain:.1f} pts, need 20), toy mCE {summary.mce:.1f} (< 100), {elapsed:.0f}s (< 300s)")


def test_c09_few_shot_trend(ten_percent, criterion):
    one = run_experiment((0, 1, 2), ShapesExperimentConfig(percent=1.0, corrupt=False))
    ten = ten_percent[0]
    ok = ten.tuned_clean >= one.tuned_clean
    assert criterion(9, ok, f"mean clean acc 1%: {100 * one.tuned_clean:.1f}, 10%: {100 * ten.tuned_clean:.1f}")


def test_c10_frequency_properties(criterion):
    imgs = [natural_image(5000 + i, 64) for i in range(100)]
    noise_up = blur_down = 0
    parseval = inverse = 0.0
    for i, im in enumerate(imgs):
        h0 = high_frequency_fraction(im)
        noise_up += high_frequency_fraction(KERNELS[BENCHMARK_KINDS[0]](im, 5, i)) > h0
        blur_down += high_frequency_fraction(KERNELS[BENCHMARK_KINDS[2]](im, 5, i)) < h0
        x = im.pixels[:, :, 0]
        c = dct2(x)
        parseval = max(parseval, abs((c * c).sum() - (x * x).sum()))
        inverse = max(inverse, float(np.max(np.abs(idct2(c) - x))))
    ok = noise_up >= 95 and blur_down >= 95 and parseval < 1e-6 and inverse < 1e-6
    assert criterion(10, ok, f"noise raises high-freq share {noise_up}/100, motion blur lowers it {blur_down}/100 "
                             f"(need 95), Parseval err {parseval:.1e}, inverse err {inverse:.1e}")
