"""Downstream utility: train fresh classifiers on a synthetic set, test on real data.

Nothing here touches real training data or an accountant. ``train_downstream``
only accepts a :class:`SyntheticSet` and ``evaluate_accuracy`` refuses any
dataset whose provenance role marks it as training data.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledDataset, SyntheticSet
from .optim import sgd_update
from .rng import stream_seed, substream

DOWNSTREAM_ARCHS = ("convnet", "lenet", "mlp")


class ProvenanceError(RuntimeError):
    """Real training data reached a path that must only see synthetic or test data."""


@dataclass
class EvalConfig:
    arch: str = "convnet"
    epochs: int = 300
    lr: float = 0.01
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 256
    augment: bool | None = None  # None: on for image data, off for flat features
    seed: int = 0
    repeats: int = 3
    width: int = 128
    depth: int = 3
    hidden: tuple = (128, 128)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.arch not in DOWNSTREAM_ARCHS:
            raise ValueError(f"unknown downstream architecture {self.arch!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size and lr must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def downstream_spec(data_shape, num_classes, cfg: EvalConfig, arch=None) -> nn.NetworkSpec:
    return nn.NetworkSpec(arch or cfg.arch, tuple(data_shape), num_classes, width=cfg.width,
                          depth=cfg.depth, hidden=cfg.hidden)


def random_crop(x, rng, pad=4):
    """Zero-pad by ``pad`` and crop back to the original size at random offsets."""
    n, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = np.empty_like(x)
    for i, (dy, dx) in enumerate(offs):
        out[i] = padded[i, :, dy : dy + h, dx : dx + w]
    return out


def _require_synthetic(syn):
    if not isinstance(syn, SyntheticSet) or syn.role != "synthetic":
        raise ProvenanceError("downstream training only accepts a synthetic set")


def train_downstream(syn: SyntheticSet, cfg: EvalConfig, repeat=0, arch=None):
    """Train a fresh classifier on ``syn``; returns its parameters.

    Step decay by ``lr_decay`` at half the epochs. Initialization, shuffling and
    augmentation use evaluation-only seed streams, so they never collide with a
    distillation run sharing the master seed.
    """
    _require_synthetic(syn)
    if len(syn) == 0:
        raise ValueError("empty synthetic set")
    arch = arch or cfg.arch
    spec = downstream_spec(syn.data_shape, syn.num_classes, cfg, arch)
    tag = f"eval/{arch}/{repeat}"
    params = nn.init_params(spec, stream_seed(cfg.seed, tag + "/init"))
    rng = substream(cfg.seed, tag + "/shuffle")
    augment = cfg.augment if cfg.augment is not None else len(syn.data_shape) == 3
    x, y = syn.features, syn.labels
    state = None
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (cfg.lr_decay if epoch >= cfg.epochs // 2 else 1.0)
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = random_crop(x[idx], rng) if augment else x[idx]
            _, g = nn.loss_and_grad(params, spec, xb, y[idx])
            params, state = sgd_update(params, g, lr, cfg.momentum, cfg.weight_decay, state)
    return params


def evaluate_accuracy(params, spec: nn.NetworkSpec, test: LabeledDataset, classes=None):
    """Fraction of argmax-correct predictions (ties go to the lowest class index).

    ``classes`` restricts the evaluation to test examples of those labels while
    the argmax still ranges over all outputs.
    """
    if test.role.startswith("train"):
        raise ProvenanceError(f"refusing to evaluate on data with role {test.role!r}")
    x, y = test.features, test.labels
    if classes is not None:
        keep = np.isin(y, list(classes))
        x, y = x[keep], y[keep]
    if len(y) == 0:
        return math.nan
    logits = nn.predict(params, spec, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def cross_arch_report(syn: SyntheticSet, archs, test: LabeledDataset, cfg: EvalConfig):
    """Mean and population std of test accuracy per architecture over ``cfg.repeats`` seeds."""
    unknown = [a for a in archs if a not in DOWNSTREAM_ARCHS]
    if unknown:
        raise ValueError(f"unknown architectures: {unknown}")
    table = {}
    for arch in archs:
        spec = downstream_spec(syn.data_shape, syn.num_classes, cfg, arch)
        accs = [
            evaluate_accuracy(train_downstream(syn, cfg, r, arch), spec, test)
            for r in range(cfg.repeats)
        ]
        table[arch] = {"mean": float(np.mean(accs)), "std": float(np.std(accs)),
                       "runs": accs}
    return table


__all__ = [
    "DOWNSTREAM_ARCHS",
    "EvalConfig",
    "ProvenanceError",
    "cross_arch_report",
    "downstream_spec",
    "evaluate_accuracy",
    "random_crop",
    "train_downstream",
]
