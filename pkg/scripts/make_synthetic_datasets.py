"""Write the synthetic fixture datasets (one per modality) and the shapes train/test splits as PNG + manifest."""
import argparse
from pathlib import Path

from corruptbench.synthetic import SHAPE_CLASSES, shapes_arrays, write_dataset, write_fixture_datasets


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data")
    ap.add_argument("--items", type=int, default=100, help="items per fixture dataset")
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    for p in write_fixture_datasets(out / "fixtures", n_items=args.items, size=args.size, seed=args.seed):
        print(p)
    for split, n, offset in (("train", 2000, 1000), ("test", 400, 2000)):
        x, y = shapes_arrays(n, seed=offset + args.seed)
        print(write_dataset(out / "shapes" / split, "shapes", "cell_microscopy", x, y, SHAPE_CLASSES, split=split))


if __name__ == "__main__":
    main()
