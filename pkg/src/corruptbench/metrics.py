"""Robustness arithmetic: Top-1 error, Corruption Error, mCE, relative clean error, average accuracy.

Accuracies and errors are fractions; CE, mCE, clean error and average accuracy
are reported in percent as in the published result tables.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .corruptions import BENCHMARK_KINDS, SEVERITIES, CorruptionKind
from .datamodel import CLEAN_TAG, DataError, PredictionRow


class MetricsError(DataError):
    pass


@dataclass
class AccuracyGrid:
    clean_acc: float
    cells: dict[tuple[str, int], float]
    model_id: str = "model"
    dataset_id: str = "dataset"
    kinds: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.cells = {(CorruptionKind(k).value, int(s)): float(a) for (k, s), a in self.cells.items()}
        if not self.kinds:
            present = {k for k, _ in self.cells}
            self.kinds = tuple(k.value for k in CorruptionKind if k.value in present)
        for name, acc in [("clean", self.clean_acc), *self.cells.items()]:
            if not 0.0 <= acc <= 1.0:
                raise MetricsError(f"{self.model_id}: accuracy {acc} for {name} outside [0, 1]")
        for kind in self.kinds:
            missing = [s for s in SEVERITIES if (kind, s) not in self.cells]
            if missing:
                raise MetricsError(f"{self.model_id}: {kind} missing severities {missing}")
        extra = {k for k, _ in self.cells} - set(self.kinds)
        if extra:
            raise MetricsError(f"{self.model_id}: cells for undeclared kinds {sorted(extra)}")

    def kind_accuracies(self, kind: str) -> list[float]:
        return [self.cells[(kind, s)] for s in SEVERITIES]

    @property
    def is_full(self) -> bool:
        return set(self.kinds) == {k.value for k in BENCHMARK_KINDS}


@dataclass
class RobustnessReport:
    model_id: str
    baseline_id: str
    clean_error_pct: float
    ce_pct: dict[str, float]
    mce_pct: float
    avg_acc_pct: float
    baseline_avg_acc_pct: float

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "baseline_id": self.baseline_id,
            "clean_error_pct": self.clean_error_pct,
            "ce_pct": dict(self.ce_pct),
            "mce_pct": self.mce_pct,
            "avg_acc_pct": self.avg_acc_pct,
            "baseline_avg_acc_pct": self.baseline_avg_acc_pct,
        }

    def table_row(self) -> list[float]:
        """Clean, per-kind CE in benchmark order, mCE."""
        return [self.clean_error_pct, *self.ce_pct.values(), self.mce_pct]


def score_predictions(rows: list[PredictionRow], model_id: str = "model", dataset_id: str = "dataset",
                      num_classes: int | None = None) -> AccuracyGrid:
    if not rows:
        raise MetricsError("prediction log is empty")
    correct: dict[tuple[str, int], int] = defaultdict(int)
    total: dict[tuple[str, int], int] = defaultdict(int)
    for r in rows:
        if num_classes is not None and not (0 <= r.true_label < num_classes and 0 <= r.pred_label < num_classes):
            raise MetricsError(f"{r.item_id}: label outside the {num_classes}-class label space")
        key = (r.corruption, r.severity)
        total[key] += 1
        correct[key] += r.true_label == r.pred_label
    if (CLEAN_TAG, 0) not in total:
        raise MetricsError("no clean (severity 0) rows in the log")
    clean = correct[(CLEAN_TAG, 0)] / total[(CLEAN_TAG, 0)]
    cells = {key: correct[key] / n for key, n in total.items() if key[0] != CLEAN_TAG}
    kinds = {k for k, _ in cells}
    for kind in kinds:
        missing = [s for s in SEVERITIES if (kind, s) not in cells]
        if missing:
            raise MetricsError(f"empty cell: {kind} has no rows at severities {missing}")
    return AccuracyGrid(clean, cells, model_id, dataset_id)


def top1_error(acc: float) -> float:
    if not 0.0 <= acc <= 1.0:
        raise MetricsError(f"accuracy {acc} outside [0, 1]")
    return 1.0 - acc


def corruption_error(model_errors, baseline_errors) -> float:
    model_errors, baseline_errors = list(model_errors), list(baseline_errors)
    if len(model_errors) != len(SEVERITIES) or len(baseline_errors) != len(SEVERITIES):
        raise MetricsError("corruption_error needs one error per severity (5 each)")
    for e in model_errors + baseline_errors:
        if not 0.0 <= e <= 1.0:
            raise MetricsError(f"error {e} outside [0, 1]")
    denom = sum(baseline_errors)
    if denom <= 0.0:
        raise MetricsError("baseline has zero error at every severity; CE is undefined")
    return 100.0 * sum(model_errors) / denom


def mean_corruption_error(ce_by_kind: dict[str, float]) -> float:
    if not ce_by_kind:
        raise MetricsError("no CE values to average")
    return sum(ce_by_kind.values()) / len(ce_by_kind)


def clean_error_ratio(model_clean_err: float, baseline_clean_err: float) -> float:
    if baseline_clean_err <= 0.0:
        raise MetricsError("baseline clean error is zero; relative clean error is undefined")
    return 100.0 * model_clean_err / baseline_clean_err


def average_accuracy(grid: AccuracyGrid) -> float:
    if not grid.kinds:
        raise MetricsError(f"{grid.model_id}: grid has no corruption cells")
    per_kind = [sum(grid.kind_accuracies(k)) / len(SEVERITIES) for k in grid.kinds]
    return 100.0 * sum(per_kind) / len(per_kind)


def build_report(model: AccuracyGrid, baseline: AccuracyGrid) -> RobustnessReport:
    if set(model.cells) != set(baseline.cells):
        diff = sorted(set(model.cells) ^ set(baseline.cells))
        raise MetricsError(f"model and baseline grids cover different cells: {diff[:5]}")
    ce = {
        kind: corruption_error(
            [top1_error(a) for a in model.kind_accuracies(kind)],
            [top1_error(a) for a in baseline.kind_accuracies(kind)],
        )
        for kind in model.kinds
    }
    return RobustnessReport(
        model_id=model.model_id,
        baseline_id=baseline.model_id,
        clean_error_pct=clean_error_ratio(top1_error(model.clean_acc), top1_error(baseline.clean_acc)),
        ce_pct=ce,
        mce_pct=mean_corruption_error(ce),
        avg_acc_pct=average_accuracy(model),
        baseline_avg_acc_pct=average_accuracy(baseline),
    )


def grid_from_kind_means(clean_acc: float, kind_means: dict[str, float], model_id="model", dataset_id="dataset"):
    """Expand per-kind average accuracies (one mean per kind) to five equal severities.

    Exact for CE because both severity sums scale by the same factor.
    """
    cells = {(k, s): a for k, a in kind_means.items() for s in SEVERITIES}
    return AccuracyGrid(clean_acc, cells, model_id, dataset_id)


GRID_HEADER = ("kind", "severity", "accuracy")


def read_grid_csv(path, model_id: str | None = None, dataset_id: str = "dataset") -> AccuracyGrid:
    """Read ``kind,severity,accuracy`` rows (fractions; severity 0 and kind ``clean`` for the clean row)."""
    path = Path(path)
    if not path.is_file():
        raise MetricsError(f"grid file not found: {path}")
    clean, cells = None, {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != GRID_HEADER:
            raise MetricsError(f"{path}: header must be {','.join(GRID_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                kind, sev, acc = rec["kind"].strip(), int(rec["severity"]), float(rec["accuracy"])
            except (TypeError, ValueError):
                raise MetricsError(f"{path}:{lineno}: malformed row") from None
            if (kind == CLEAN_TAG) != (sev == 0):
                raise MetricsError(f"{path}:{lineno}: severity 0 is reserved for the clean row")
            if kind == CLEAN_TAG:
                if clean is not None:
                    raise MetricsError(f"{path}:{lineno}: duplicate clean row")
                clean = acc
                continue
            try:
                key = (CorruptionKind(kind).value, sev)
            except ValueError:
                raise MetricsError(f"{path}:{lineno}: unknown corruption {kind!r}") from None
            if key in cells:
                raise MetricsError(f"{path}:{lineno}: duplicate cell {key}")
            cells[key] = acc
    if clean is None:
        raise MetricsError(f"{path}: no clean row")
    try:
        return AccuracyGrid(clean, cells, model_id or path.stem, dataset_id)
    except MetricsError as exc:
        raise MetricsError(f"{path}: {exc}") from None


def write_grid_csv(grid: AccuracyGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        w.writerow([CLEAN_TAG, 0, repr(grid.clean_acc)])
        for kind in grid.kinds:
            for s in SEVERITIES:
                w.writerow([kind, s, repr(grid.cells[(kind, s)])])


def write_report(report: RobustnessReport, path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id", "baseline_id", "metric", "value_pct"])
            w.writerow([report.model_id, report.baseline_id, "clean_error", f"{report.clean_error_pct:.4f}"])
            for kind, v in report.ce_pct.items():
                w.writerow([report.model_id, report.baseline_id, f"ce_{kind}", f"{v:.4f}"])
            w.writerow([report.model_id, report.baseline_id, "mce", f"{report.mce_pct:.4f}"])
            w.writerow([report.model_id, report.baseline_id, "avg_acc", f"{report.avg_acc_pct:.4f}"])
    else:
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
