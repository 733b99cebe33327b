"""Export the two-class desk MNIST split as gzipped IDX files.

Reads the 5000-digit sample bundled with mlxtend (``pip install mlxtend``) or
the CSV given by ``--source``.
"""

import argparse
from pathlib import Path

from privset.mnist_subset import export_desk_mnist


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", type=Path)
    p.add_argument("--classes", default="0,1")
    p.add_argument("--train-per-class", type=int, default=400)
    p.add_argument("--source", type=Path, default=None)
    a = p.parse_args()
    classes = tuple(int(c) for c in a.classes.split(","))
    export_desk_mnist(a.out, classes, a.train_per_class, a.source)
    print(f"wrote IDX files to {a.out}")


if __name__ == "__main__":
    main()
