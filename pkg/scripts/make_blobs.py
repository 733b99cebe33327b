"""Write the Gaussian-blob fixture as train/test CSV files (label first)."""

import argparse
from pathlib import Path

from privset.data import save_csv
from privset.fixtures import make_blobs, perceptron_separable


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", type=Path)
    p.add_argument("--train", type=int, default=600)
    p.add_argument("--test", type=int, default=600)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    x, y = make_blobs(a.train + a.test, a.classes, a.dim, a.seed, a.separation)
    if not perceptron_separable(x[: a.train], y[: a.train], a.classes):
        raise SystemExit("training split is not linearly separable; raise --separation")
    a.out.mkdir(parents=True, exist_ok=True)
    save_csv(a.out / "train.csv", x[: a.train], y[: a.train])
    save_csv(a.out / "test.csv", x[a.train :], y[a.train :])
    print(f"wrote {a.out}/train.csv and {a.out}/test.csv")


if __name__ == "__main__":
    main()
