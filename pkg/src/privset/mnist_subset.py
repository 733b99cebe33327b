"""Desk-scale two-class MNIST built from the 5000-digit sample shipped with mlxtend.

The sample holds 500 digits per class as CSV rows (784 pixel values 0-255, then
the label). :func:`export_desk_mnist` writes a class-restricted train/test split
as gzipped IDX files so that the regular IDX loader can read it; any real MNIST
IDX pair with the same file names works in its place.
"""

import gzip
import importlib.util
import os
from pathlib import Path

import numpy as np

from .data import load_idx, write_idx

FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}
ENV_DIR = "PRIVSET_MNIST_DIR"


def bundled_csv_path():
    """Location of mlxtend's ``mnist_5k.csv.gz`` (found without importing mlxtend)."""
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        raise FileNotFoundError("mlxtend is not installed; pip install 'artifact[mnist]'")
    path = Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found in the installed mlxtend")
    return path


def read_bundled(path=None):
    with gzip.open(path or bundled_csv_path(), "rt") as f:
        table = np.loadtxt(f, delimiter=",", dtype=np.int64)
    return table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1]


def export_desk_mnist(out_dir, classes=(0, 1), train_per_class=400, source=None):
    """Write train/test IDX files for ``classes``, relabeled to 0..len(classes)-1.

    The first ``train_per_class`` digits of each class (file order) go to the
    training split and the rest to the test split.
    """
    images, labels = read_bundled(source)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split = {"train": [], "test": []}
    for new, c in enumerate(classes):
        idx = np.flatnonzero(labels == c)
        if len(idx) <= train_per_class:
            raise ValueError(f"class {c} has only {len(idx)} digits")
        split["train"] += [(i, new) for i in idx[:train_per_class]]
        split["test"] += [(i, new) for i in idx[train_per_class:]]
    for name, pairs in split.items():
        pairs.sort()
        idx = np.array([i for i, _ in pairs])
        lab = np.array([n for _, n in pairs], dtype=np.uint8)
        img_file, lab_file = FILES[name]
        write_idx(out / img_file, images[idx])
        write_idx(out / lab_file, lab)
    return out


def load_desk_mnist(data_dir=None, downsample=2):
    """(train, test) datasets; the test split replays the training normalization."""
    data_dir = Path(data_dir or os.environ.get(ENV_DIR, ""))
    tr_img, tr_lab = (data_dir / f for f in FILES["train"])
    te_img, te_lab = (data_dir / f for f in FILES["test"])
    train = load_idx(tr_img, tr_lab, downsample=downsample)
    test = load_idx(te_img, te_lab, train.normalization, train.num_classes, role="test",
                    downsample=downsample)
    return train, test
