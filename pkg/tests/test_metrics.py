import csv
import itertools
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from corruptbench.corruptions import BENCHMARK_KINDS, SEVERITIES
from corruptbench.datamodel import PredictionRow
from corruptbench.metrics import (
    AccuracyGrid,
    MetricsError,
    average_accuracy,
    build_report,
    clean_error_ratio,
    corruption_error,
    grid_from_kind_means,
    mean_corruption_error,
    read_grid_csv,
    score_predictions,
    top1_error,
    write_grid_csv,
    write_report,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

KINDS = [k.value for k in BENCHMARK_KINDS]
accuracy = st.floats(0.0, 1.0, allow_nan=False)


def random_grid(rng, model_id="m", lo=0.0, hi=1.0):
    cells = {(k, s): rng.uniform(lo, hi) for k in KINDS for s in SEVERITIES}
    return AccuracyGrid(rng.uniform(lo, hi), cells, model_id)


def test_top1_error():
    assert top1_error(0.1781) == pytest.approx(0.8219, abs=1e-12)
    assert top1_error(1.0) == 0.0
    assert top1_error(0.0) == 1.0
    with pytest.raises(MetricsError):
        top1_error(1.2)


def test_corruption_error_reference_value():
    # model accuracy 32.30% against baseline 17.58%
    assert corruption_error([0.6770] * 5, [0.8242] * 5) == pytest.approx(82.1, abs=0.15)


def test_corruption_error_trivial_cases():
    errs = [0.2, 0.3, 0.4, 0.5, 0.6]
    assert corruption_error(errs, errs) == pytest.approx(100.0)
    assert corruption_error([0.0] * 5, errs) == 0.0


def test_corruption_error_degenerate_baseline():
    with pytest.raises(MetricsError, match="zero error"):
        corruption_error([0.1] * 5, [0.0] * 5)
    with pytest.raises(MetricsError):
        corruption_error([0.1] * 4, [0.2] * 4)


def test_mce_reference_value():
    ce = dict(zip(KINDS, [82.1, 98.7, 70.1, 43.3, 40.1, 64.1, 92.5]))
    assert mean_corruption_error(ce) == pytest.approx(70.1, abs=0.15)
    assert mean_corruption_error({k: 100.0 for k in KINDS}) == 100.0
    assert mean_corruption_error({"pixelate": 57.5}) == 57.5
    with pytest.raises(MetricsError):
        mean_corruption_error({})


def test_clean_error_ratio():
    assert clean_error_ratio(0.1995, 0.8219) == pytest.approx(24.3, abs=0.15)
    assert clean_error_ratio(0.4, 0.4) == 100.0
    assert clean_error_ratio(0.0, 0.4) == 0.0
    with pytest.raises(MetricsError):
        clean_error_ratio(0.1, 0.0)


def test_average_accuracy_reference_value():
    means = [0.3230, 0.1906, 0.4395, 0.6411, 0.6760, 0.4798, 0.2410]
    grid = grid_from_kind_means(0.8005, dict(zip(KINDS, means)))
    assert average_accuracy(grid) == pytest.approx(42.73, abs=0.01)


def test_average_accuracy_constant_grid():
    grid = AccuracyGrid(0.5, {(k, s): 0.37 for k in KINDS for s in SEVERITIES})
    assert average_accuracy(grid) == pytest.approx(37.0)


def test_average_accuracy_equals_flat_mean_for_two_kinds(rng):
    cells = {(k, s): rng.random() for k in ("brightness", "contrast") for s in SEVERITIES}
    grid = AccuracyGrid(0.9, cells)
    assert average_accuracy(grid) == pytest.approx(100 * np.mean(list(cells.values())), abs=1e-12)


def test_missing_cells_are_errors():
    cells = {(k, s): 0.5 for k in KINDS for s in SEVERITIES}
    del cells[("zoom_blur", 3)]
    with pytest.raises(MetricsError, match="zoom_blur missing"):
        AccuracyGrid(0.5, cells)


def test_report_baseline_against_itself(rng):
    grid = random_grid(rng, lo=0.05, hi=0.95)
    r = build_report(grid, grid)
    assert r.clean_error_pct == pytest.approx(100.0)
    assert all(v == pytest.approx(100.0) for v in r.ce_pct.values())
    assert r.mce_pct == pytest.approx(100.0)


def test_report_reproduces_cell_microscopy_row():
    model = read_grid_csv(FIXTURES / "rmc_cell.csv")
    base = read_grid_csv(FIXTURES / "clip_cell.csv")
    r = build_report(model, base)
    expected = [24.3, 82.1, 98.7, 70.1, 43.3, 40.1, 64.1, 92.5, 70.1]
    assert r.table_row() == pytest.approx(expected, abs=0.15)
    assert r.avg_acc_pct == pytest.approx(42.73, abs=0.01)


def test_swapped_grids_give_reciprocal_ce(rng):
    a, b = random_grid(rng, "a", 0.05, 0.95), random_grid(rng, "b", 0.05, 0.95)
    ab, ba = build_report(a, b), build_report(b, a)
    for kind in KINDS:
        sum_a = sum(1 - a.cells[(kind, s)] for s in SEVERITIES)
        sum_b = sum(1 - b.cells[(kind, s)] for s in SEVERITIES)
        assert ab.ce_pct[kind] == pytest.approx(100 * sum_a / sum_b, rel=1e-12)
        assert ba.ce_pct[kind] == pytest.approx(100 * sum_b / sum_a, rel=1e-12)
        assert ab.ce_pct[kind] * ba.ce_pct[kind] == pytest.approx(1e4, rel=1e-12)


def test_report_rejects_mismatched_cells():
    full = AccuracyGrid(0.5, {(k, s): 0.5 for k in KINDS for s in SEVERITIES})
    part = AccuracyGrid(0.5, {("pixelate", s): 0.5 for s in SEVERITIES})
    with pytest.raises(MetricsError, match="different cells"):
        build_report(full, part)


@given(st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5),
       st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5),
       st.floats(0.01, 1.0))
def test_ce_scale_consistency(model, base, lam):
    scaled = corruption_error([e * lam for e in model], [e * lam for e in base])
    assert scaled == pytest.approx(corruption_error(model, base), rel=1e-9)


@given(st.lists(accuracy, min_size=7, max_size=7), st.lists(st.floats(0.0, 0.99), min_size=7, max_size=7))
def test_constant_severity_closed_form(model_means, base_means):
    model = grid_from_kind_means(0.5, dict(zip(KINDS, model_means)))
    base = grid_from_kind_means(0.5, dict(zip(KINDS, base_means)))
    r = build_report(model, base)
    for k, am, ab in zip(KINDS, model_means, base_means):
        assert r.ce_pct[k] == pytest.approx(100 * (1 - am) / (1 - ab), rel=1e-9)
    assert r.mce_pct == pytest.approx(np.mean(list(r.ce_pct.values())), abs=1e-9)


@given(st.randoms(use_true_random=False), st.lists(accuracy, min_size=35, max_size=35))
def test_average_accuracy_permutation_invariant(rnd, values):
    cells = dict(zip([(k, s) for k in KINDS for s in SEVERITIES], values))
    shuffled_values = list(values)
    rnd.shuffle(shuffled_values)
    shuffled = dict(zip([(k, s) for k in KINDS for s in SEVERITIES], shuffled_values))
    assert average_accuracy(AccuracyGrid(0.5, cells)) == pytest.approx(average_accuracy(AccuracyGrid(0.5, shuffled)), abs=1e-9)


def test_score_all_correct():
    rows = [PredictionRow("a", "clean", 0, 1, 1)]
    rows += [PredictionRow("a", k, s, 0, 0) for k in KINDS for s in SEVERITIES]
    grid = score_predictions(rows)
    assert grid.clean_acc == 1.0 and set(grid.cells.values()) == {1.0}
    assert grid.is_full


def test_score_three_of_four():
    rows = [PredictionRow("c", "clean", 0, 0, 0)]
    rows += [PredictionRow(f"i{j}", "pixelate", s, 1, 1 if (s != 2 or j < 3) else 0) for s in SEVERITIES for j in range(4)]
    grid = score_predictions(rows)
    assert grid.cells[("pixelate", 2)] == 0.75
    assert grid.kinds == ("pixelate",)


def test_score_against_recount_oracle(rng):
    """Five datasets x 35 cells x 20 rows, recounted by brute force."""
    for d in range(5):
        rows = [PredictionRow(f"c{i}", "clean", 0, int(rng.integers(3)), int(rng.integers(3))) for i in range(20)]
        for k, s in itertools.product(KINDS, SEVERITIES):
            rows += [PredictionRow(f"x{i}", k, s, int(rng.integers(3)), int(rng.integers(3))) for i in range(20)]
        grid = score_predictions(rows, dataset_id=f"d{d}", num_classes=3)
        for (k, s), acc in grid.cells.items():
            hits = sum(1 for r in rows if r.corruption == k and r.severity == s and r.true_label == r.pred_label)
            assert acc == hits / 20
        assert len(grid.cells) == 35


def test_score_errors():
    with pytest.raises(MetricsError, match="empty"):
        score_predictions([])
    with pytest.raises(MetricsError, match="empty cell"):
        score_predictions([PredictionRow("a", "clean", 0, 0, 0), PredictionRow("a", "contrast", 1, 0, 0)])
    with pytest.raises(MetricsError, match="no clean"):
        score_predictions([PredictionRow("a", "contrast", s, 0, 0) for s in SEVERITIES])
    with pytest.raises(MetricsError, match="label space"):
        score_predictions([PredictionRow("a", "clean", 0, 0, 5)], num_classes=2)


def test_grid_csv_roundtrip(tmp_path, rng):
    grid = random_grid(rng)
    write_grid_csv(grid, tmp_path / "g.csv")
    again = read_grid_csv(tmp_path / "g.csv", model_id="m")
    assert again.cells == grid.cells and again.clean_acc == grid.clean_acc


@pytest.mark.parametrize(
    "body, message",
    [
        ("clean,0,0.5\nfog,1,0.2\n", "unknown corruption"),
        ("clean,1,0.5\n", "reserved"),
        ("pixelate,1,0.5\n", "no clean row"),
        ("clean,0,0.5\nclean,0,0.4\n", "duplicate clean"),
        ("clean,0,x\n", "malformed"),
    ],
)
def test_grid_csv_errors(tmp_path, body, message):
    p = tmp_path / "g.csv"
    p.write_text("kind,severity,accuracy\n" + body)
    with pytest.raises(MetricsError, match=message):
        read_grid_csv(p)


def test_write_report_formats(tmp_path):
    model = read_grid_csv(FIXTURES / "rmc_cell.csv")
    base = read_grid_csv(FIXTURES / "clip_cell.csv")
    r = build_report(model, base)
    write_report(r, tmp_path / "r.json")
    write_report(r, tmp_path / "r.csv")
    assert '"mce_pct"' in (tmp_path / "r.json").read_text()
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert [row["metric"] for row in rows][:2] == ["clean_error", "ce_gaussian_noise"]
    assert len(rows) == 10
