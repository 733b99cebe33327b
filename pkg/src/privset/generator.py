"""Synthetic set parameterized as the output of a small conditional generator.

Each synthetic sample is ``G([z_i, onehot(y_i)]; phi)`` with latent codes
``z_i`` drawn once and frozen. The matching gradient with respect to the
samples is pulled back through the generator and applied to ``phi`` with Adam.
The sampling, noise and accounting are shared verbatim with the direct path.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledDataset, SyntheticSet, balanced_labels
from .distill import (
    DistillConfig,
    _checksum,
    _psg_loop,
    _report,
    _seed_table,
    _setup,
    matching_input_grad,
)
from .optim import adam_update
from .privacy import Accountant
from .rng import stream_seed


@dataclass
class GeneratorConfig:
    latent_dim: int = 64
    width: int = 32
    hidden: int = 128
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.latent_dim < 1 or self.width < 1 or self.hidden < 1:
            raise ValueError("generator sizes must be positive")
        if self.lr <= 0:
            raise ValueError("generator learning rate must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)


def generator_spec(gcfg: GeneratorConfig, data_shape, num_classes) -> nn.NetworkSpec:
    return nn.NetworkSpec("generator", tuple(data_shape), num_classes, width=gcfg.width,
                          hidden=(gcfg.hidden,), latent_dim=gcfg.latent_dim)


def sample_latents(m, latent_dim, seed, dtype=np.float32):
    return np.random.default_rng(seed).standard_normal((m, latent_dim)).astype(dtype)


def generator_inputs(latents, labels, num_classes):
    labels = np.asarray(labels)
    onehot = np.zeros((len(labels), num_classes), dtype=latents.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    return np.concatenate([latents, onehot], axis=1)


def generator_forward(phi, spec: nn.NetworkSpec, latents, labels):
    """Samples in ``[-1, 1]`` shaped like the data, one per (latent, label) pair."""
    if latents.shape != (len(labels), spec.latent_dim):
        raise ValueError(f"latents must have shape ({len(labels)}, {spec.latent_dim})")
    return nn.forward(phi, spec, generator_inputs(latents, labels, spec.num_classes))


def prior_matching_grad(phi, gspec, latents, labels, theta, spec, g_real):
    """(matching loss, gradient w.r.t. generator parameters) at fixed classifier ``theta``."""
    inputs = generator_inputs(latents, labels, gspec.num_classes)
    x = nn.forward(phi, gspec, inputs)
    loss, grad_x = matching_input_grad(theta, spec, x, labels, g_real)
    g_phi, _ = nn.vjp(phi, gspec, inputs, grad_x)
    return loss, g_phi


class _GeneratedSet:
    """Synthetic features produced by a generator whose parameters are trained."""

    def __init__(self, phi, spec, latents, labels, gcfg):
        self.phi, self.spec, self.labels, self.gcfg = phi, spec, labels, gcfg
        self.latents = latents
        self.latent_sum = _checksum([latents])
        self.inputs = generator_inputs(latents, labels, spec.num_classes)
        self.state = None
        self._x = None

    def features(self):
        if self._x is None:
            self._x = nn.forward(self.phi, self.spec, self.inputs)
        return self._x

    def step(self, grad):
        g_phi, _ = nn.vjp(self.phi, self.spec, self.inputs, grad.astype(self.inputs.dtype))
        c = self.gcfg
        self.phi, self.state = adam_update(self.phi, g_phi, c.lr, c.beta1, c.beta2, c.eps,
                                           self.state)
        self._x = None

    def checksum(self):
        return _checksum(self.phi)


def psg_train_with_prior(dataset: LabeledDataset, cfg: DistillConfig,
                         gcfg: GeneratorConfig | None = None,
                         accountant: Accountant | None = None):
    """Generator-backed variant of ``psg_train``; same return triple."""
    gcfg = gcfg or GeneratorConfig()
    start = time.perf_counter()
    q, sigma, accountant = _setup(dataset, cfg, accountant)
    spec = cfg.network_spec(dataset.data_shape, dataset.num_classes)
    gspec = generator_spec(gcfg, dataset.data_shape, dataset.num_classes)
    labels = balanced_labels(cfg.spc, dataset.num_classes)
    latents = sample_latents(len(labels), gcfg.latent_dim, stream_seed(cfg.seed, "latent"))
    phi = nn.init_params(gspec, stream_seed(cfg.seed, "generator_init"))
    param = _GeneratedSet(phi, gspec, latents, labels, gcfg)
    curves = _psg_loop(dataset, cfg, spec, param, accountant, sigma, q)
    if _checksum([param.latents]) != param.latent_sum:
        raise RuntimeError("latent codes changed during training")
    out = SyntheticSet(param.features().copy(), labels, cfg.spc, dataset.num_classes)
    seeds = _seed_table(cfg, ["latent", "generator_init", "sampling", "noise"])
    extra = {"generator": gcfg.to_dict(), "generator_network": gspec.to_dict()}
    report = _report("psg_prior", dataset, cfg, spec, accountant, sigma, q, curves, seeds,
                     start, extra)
    return out, accountant.state, report


__all__ = [
    "GeneratorConfig",
    "generator_forward",
    "generator_inputs",
    "generator_spec",
    "prior_matching_grad",
    "psg_train_with_prior",
    "sample_latents",
]
