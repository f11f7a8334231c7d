"""Clean accuracy of the tuned encoder at 1/3/7/10 percent few-shot, averaged over seeds."""
import argparse

import numpy as np

from corruptbench.experiments import few_shot_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--percents", type=float, nargs="+", default=[1, 3, 7, 10])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    results = few_shot_sweep(args.percents, tuple(args.seeds))
    print("percent  shots  base   tuned  (per seed)")
    for p, s in results.items():
        per_seed = " ".join(f"{r.tuned_clean:.3f}" for r in s.runs)
        shots = int(np.mean([r.n_shots for r in s.runs]))
        print(f"{p:7g}  {shots:5d}  {s.base_clean:.3f}  {s.tuned_clean:.3f}  ({per_seed})")


if __name__ == "__main__":
    main()
