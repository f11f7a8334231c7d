"""Command-line entry point: ``corruptbench {corrupt,evaluate,analyze,train,predict,tables}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import analysis
from .benchgen import build_benchmark, load_layout
from .corruptions import SEVERITIES, severity_table_rows
from .datamodel import (
    DataError, PredictionRow, load_image, load_manifest, read_prediction_log, write_prediction_log,
)
from .metrics import build_report, read_grid_csv, score_predictions, write_report
from .tinyclip.config import EncoderConfig, TrainConfig
from .tinyclip.encoder import VisualEncoder
from .tinyclip.prompts import prompt_embeddings
from .tinyclip.train import TrainingDiverged, train_few_shot, zero_shot_predict_batch
from .tinyclip.weights import WeightFileError, load_weights, save_weights

log = logging.getLogger("corruptbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class CommandOutcome:
    exit_code: int
    summary: str
    paths: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"exit_code": self.exit_code, "summary": self.summary, "paths": self.paths})


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they do not overwrite flags given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(0), help="single source of randomness")
    p.add_argument("--workers", type=int, default=d(1))
    p.add_argument("--json", action="store_true", default=d(False), help="print a JSON summary line")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="corruptbench", description=__doc__.splitlines()[0], parents=[_common(False)])
    common = _common(True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("corrupt", parents=[common], help="materialize the corruption benchmark")
    p.add_argument("--manifest", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", nargs="+")
    p.add_argument("--severities", nargs="+", type=int)
    p.add_argument("--keep-going", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="robustness report from logs or accuracy grids")
    p.add_argument("--log")
    p.add_argument("--baseline-log")
    p.add_argument("--grid")
    p.add_argument("--baseline-grid")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", help="report path (.json or .csv)")

    p = sub.add_parser("analyze", parents=[common], help="DCT profile or pixel histogram of a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--mode", choices=["dct", "hist"], default="dct")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="few-shot LoRA tuning")
    p.add_argument("--manifest", required=True)
    p.add_argument("--percent", type=float, default=10.0)
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--base", help="weight file supplying the frozen base encoder")
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", parents=[common], help="zero-shot predictions as a log CSV")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", nargs="*", default=[])
    p.add_argument("--layout", help="layout.json from `corrupt`; adds every corrupted set")
    p.add_argument("--out", required=True)

    p = sub.add_parser("tables", parents=[common], help="print the severity parameter table")
    p.add_argument("--include-optional", action="store_true")
    return parser


# --- subcommands ----------------------------------------------------------


def cmd_corrupt(args) -> CommandOutcome:
    manifests = [load_manifest(m) for m in args.manifest]
    layout = build_benchmark(manifests, args.seed, args.out, args.kinds, args.severities, args.workers, args.keep_going)
    out = Path(args.out) / "layout.json"
    code = EXIT_DATA if layout.failed else EXIT_OK
    msg = f"wrote {len(layout.entries)} corruption sets to {args.out}"
    if layout.failed:
        msg += f"; failed datasets: {', '.join(sorted(layout.failed))}"
    return CommandOutcome(code, msg, [str(out)])


def cmd_evaluate(args) -> CommandOutcome:
    if args.grid and args.baseline_grid and not (args.log or args.baseline_log):
        model = read_grid_csv(args.grid)
        base = read_grid_csv(args.baseline_grid)
    elif args.log and args.baseline_log and not (args.grid or args.baseline_grid):
        model = score_predictions(read_prediction_log(args.log, args.num_classes), Path(args.log).stem,
                                  num_classes=args.num_classes)
        base = score_predictions(read_prediction_log(args.baseline_log, args.num_classes), Path(args.baseline_log).stem,
                                 num_classes=args.num_classes)
    else:
        raise UsageError("evaluate needs either --log and --baseline-log or --grid and --baseline-grid")
    report = build_report(model, base)
    paths = []
    if args.out:
        write_report(report, args.out)
        paths.append(args.out)
    ce = " ".join(f"{k}={v:.2f}" for k, v in report.ce_pct.items())
    msg = f"clean={report.clean_error_pct:.2f} mCE={report.mce_pct:.2f} avg_acc={report.avg_acc_pct:.2f} {ce}"
    return CommandOutcome(EXIT_OK, msg, paths)


def _images_in(directory: Path):
    manifest = directory / "manifest.json"
    if manifest.is_file():
        m = load_manifest(manifest)
        return [load_image(m.image_path(it)) for it in m.items]
    files = sorted(directory.rglob("*.png"))
    if not files:
        raise DataError(f"no PNG images under {directory}")
    return [load_image(f) for f in files]


def cmd_analyze(args) -> CommandOutcome:
    imgs = _images_in(Path(args.dir))
    if args.mode == "dct":
        prof = analysis.frequency_profile(imgs)
        analysis.write_profile_csv(prof, args.out)
        msg = f"{prof.n_images} images: low={prof.low_fraction:.4f} high={prof.high_fraction:.4f}"
    else:
        hist = analysis.pixel_histogram(imgs)
        analysis.write_histogram_csv(hist, args.out)
        msg = f"{len(imgs)} images: mean intensity {hist.mean():.4f}"
    return CommandOutcome(EXIT_OK, msg, [args.out])


def _encoder_for(manifest, args) -> VisualEncoder:
    first = load_image(manifest.image_path(manifest.items[0]))
    if args.base:
        base, _ = load_weights(args.base)
        cfg = replace(base.cfg, lora_rank=args.rank)
        enc = VisualEncoder(cfg, seed=args.seed)
        with torch.no_grad():
            for name, buf in enc.base_state().items():
                buf.copy_(base.base_state()[name])
    else:
        if first.height != first.width:
            raise DataError(f"{manifest.dataset_name}: encoder needs square images, got {first.shape[:2]}")
        cfg = EncoderConfig(image_size=first.height, channels=first.channels, lora_rank=args.rank)
        enc = VisualEncoder(cfg, seed=args.seed)
    if (first.height, first.width, first.channels) != (cfg.image_size, cfg.image_size, cfg.channels):
        raise DataError(f"{manifest.dataset_name}: image shape {first.shape} does not fit the encoder")
    return enc


def cmd_train(args) -> CommandOutcome:
    manifest = load_manifest(args.manifest)
    try:
        tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, percent=args.percent, seed=args.seed)
        enc = _encoder_for(manifest, args)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    table = prompt_embeddings(manifest.class_names, manifest.modality, seed=args.seed, embed_dim=enc.cfg.embed_dim)
    enc, trace = train_few_shot(enc, manifest, table, tcfg)
    path = save_weights(enc, args.out, table)
    loss = f"loss {trace[0]:.4f} -> {trace[-1]:.4f}" if trace else "no epochs run"
    return CommandOutcome(EXIT_OK, f"trained {len(trace)} epochs, {loss}; weights at {path}", [str(path)])


def _manifest_rows(enc, table, manifest):
    imgs = np.stack([load_image(manifest.image_path(it)).pixels for it in manifest.items])
    preds = zero_shot_predict_batch(enc, imgs, table)
    return [
        PredictionRow(it.item_id, manifest.corruption, int(manifest.severity), it.label, int(p))
        for it, p in zip(manifest.items, preds)
    ]


def cmd_predict(args) -> CommandOutcome:
    enc, table = load_weights(args.weights)
    manifests = [load_manifest(m) for m in args.manifest]
    if args.layout:
        layout = load_layout(args.layout)
        manifests += [load_manifest(p) for _, p in sorted(layout.entries.items())]
    if not manifests:
        raise UsageError("predict needs --manifest and/or --layout")
    if table is None:
        m = manifests[0]
        table = prompt_embeddings(m.class_names, m.modality, seed=args.seed, embed_dim=enc.cfg.embed_dim)
    rows = []
    for m in manifests:
        if tuple(m.class_names) != table.class_names:
            raise DataError(f"{m.dataset_name}: class names differ from the weight file's prompt table")
        rows += _manifest_rows(enc, table, m)
    write_prediction_log(rows, args.out)
    return CommandOutcome(EXIT_OK, f"wrote {len(rows)} predictions from {len(manifests)} sets", [args.out])


def cmd_tables(args) -> CommandOutcome:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "parameter", *[f"s{s}" for s in SEVERITIES]])
    w.writerows(severity_table_rows(args.include_optional))
    sys.stdout.write(buf.getvalue())
    return CommandOutcome(EXIT_OK, "severity table", [])


COMMANDS = {
    "corrupt": cmd_corrupt,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "predict": cmd_predict,
    "tables": cmd_tables,
}


def run(argv=None) -> CommandOutcome:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        outcome = COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip() + "\n")
        return CommandOutcome(EXIT_USAGE, str(exc).splitlines()[0])
    except (DataError, WeightFileError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return CommandOutcome(EXIT_DATA, str(exc))
    except (TrainingDiverged, RuntimeError, OSError) as exc:
        sys.stderr.write(f"failed: {exc}\n")
        return CommandOutcome(EXIT_RUNTIME, str(exc))
    if args.json:
        print(outcome.to_json())
    elif args.command != "tables":
        print(outcome.summary)
    return outcome


def main() -> None:
    raise SystemExit(run(sys.argv[1:]).exit_code)


if __name__ == "__main__":
    main()
