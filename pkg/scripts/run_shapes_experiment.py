"""Few-shot LoRA tuning vs the frozen seeded encoder on the shapes dataset, clean and corrupted."""
import argparse
import json
import logging

from corruptbench.corruptions import BENCHMARK_KINDS
from corruptbench.experiments import ShapesExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--percent", type=float, default=10.0)
    ap.add_argument("--batch-size", type=int, default=1)
    ap.add_argument("--json", help="write the full summary here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ShapesExperimentConfig(percent=args.percent, batch_size=args.batch_size)
    summary = run_experiment(tuple(args.seeds), cfg)

    kinds = [k.value for k in BENCHMARK_KINDS]
    print("seed  base  tuned  clean_err  " + "  ".join(k[:8] for k in kinds) + "  mCE")
    for r in summary.runs:
        ce = "  ".join(f"{r.report.ce_pct[k]:8.1f}" for k in kinds)
        print(f"{r.seed:4d}  {r.base_clean:.3f}  {r.tuned_clean:.3f}  {r.report.clean_error_pct:9.1f}  {ce}  {r.report.mce_pct:.1f}")
    print(f"mean  {summary.base_clean:.3f}  {summary.tuned_clean:.3f}  mCE {summary.mce:.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2)


if __name__ == "__main__":
    main()
