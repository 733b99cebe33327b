"""Private set generation by matching sanitized real-data gradients.

The synthetic set is trained against per-layer cosine distances between the
classifier gradient it induces and a clipped, noised gradient of a Poisson
sample of the real data. Networks are re-initialized ``runs`` times; each run
alternates ``outer_iters`` rounds of (``batches`` matching steps on the set,
``inner_iters`` SGD steps on the network).
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import LabeledDataset, SyntheticSet, balanced_labels, poisson_batch
from .optim import sgd_update
from .privacy import (
    Accountant,
    BudgetExhausted,
    calibrate_noise,
    check_delta,
    noisy_average,
)
from .rng import stream_seed, substream

log = logging.getLogger(__name__)

# samples per class -> (outer, inner) iterations
SPC_SCHEDULE = {1: (1, 1), 10: (10, 50), 20: (20, 25), 50: (50, 10)}
ZERO_ROW = 1e-12
PER_EXAMPLE_CHUNK = 128


class NonFiniteLoss(RuntimeError):
    pass


class IsolationError(RuntimeError):
    """A parameter block changed during a phase that must leave it untouched."""


def default_iterations(spc):
    """(outer, inner) iterations for ``spc``; off-table values use the nearest row."""
    key = min(SPC_SCHEDULE, key=lambda k: (abs(k - spc), k))
    return SPC_SCHEDULE[key]


@dataclass
class DistillConfig:
    spc: int = 10
    runs: int = 1000
    outer_iters: int | None = None
    inner_iters: int | None = None
    batches: int = 10
    batch_size: int = 256
    lr_theta: float = 0.01
    lr_syn: float = 0.1
    momentum_theta: float = 0.5
    momentum_syn: float = 0.5
    clip: float = 0.1
    sigma: float | None = None
    epsilon: float | None = 10.0
    delta: float = 1e-5
    private: bool = True
    arch: str = "convnet"
    width: int = 128
    depth: int = 3
    hidden: tuple = (128, 128)
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.outer_iters is None or self.inner_iters is None:
            t, j = default_iterations(self.spc)
            self.outer_iters = t if self.outer_iters is None else self.outer_iters
            self.inner_iters = j if self.inner_iters is None else self.inner_iters
        for name in ("spc", "runs", "outer_iters", "batches", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.inner_iters < 0:
            raise ValueError("inner_iters must be >= 0")
        if self.lr_theta <= 0 or self.lr_syn <= 0:
            raise ValueError("learning rates must be positive")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.private:
            if self.sigma is not None and self.epsilon is not None:
                raise ValueError("set either sigma or epsilon, not both")
            if self.sigma is None and self.epsilon is None:
                raise ValueError("private runs need sigma or epsilon")
            if self.sigma is not None and self.sigma <= 0:
                raise ValueError("private runs need sigma > 0")
            if self.epsilon is not None and self.epsilon <= 0:
                raise ValueError("epsilon must be positive")

    @property
    def total_steps(self):
        return self.runs * self.outer_iters * self.batches

    def network_spec(self, data_shape, num_classes):
        return nn.NetworkSpec(self.arch, tuple(data_shape), num_classes, width=self.width,
                              depth=self.depth, hidden=self.hidden)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def init_synthetic(spc, num_classes, data_shape, seed) -> SyntheticSet:
    """Standard-normal features, ``spc`` labels per class in class-major order."""
    if spc < 1 or num_classes < 2:
        raise ValueError("need spc >= 1 and at least two classes")
    rng = np.random.default_rng(seed)
    m = spc * num_classes
    x = rng.standard_normal((m,) + tuple(data_shape), dtype=np.float32)
    return SyntheticSet(x, balanced_labels(spc, num_classes), spc, num_classes)


# ---------------------------------------------------------------------------
# matching loss


def _rows(a):
    return a.reshape(a.shape[0], -1) if a.ndim >= 2 else a.reshape(1, -1)


def _layer_distance(a, b, need_grad):
    if a.shape != b.shape:
        raise ValueError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    A = _rows(np.asarray(a, dtype=np.float64))
    B = _rows(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    ok = (na >= ZERO_ROW) & (nb >= ZERO_ROW)
    dots = np.einsum("ij,ij->i", A, B)
    denom = np.where(ok, na * nb, 1.0)
    cos = np.where(ok, dots / denom, 0.0)
    dist = float(np.sum(1.0 - cos))
    if not need_grad:
        return dist, None
    safe_na = np.where(ok, na, 1.0)
    grad = -(B / denom[:, None] - (cos / (safe_na * safe_na))[:, None] * A)
    grad[~ok] = 0.0
    return dist, grad.reshape(a.shape).astype(a.dtype)


def layer_cosine_distance(a, b):
    """Sum over output rows of (1 - cosine similarity).

    Weights are viewed as (out, rest); 1-d tensors (biases, norm parameters)
    form a single row. A row whose norm is below 1e-12 on either side counts 1.
    """
    return _layer_distance(a, b, False)[0]


def matching_loss(g_syn, g_real):
    if len(g_syn) != len(g_real):
        raise ValueError("gradient lists differ in length")
    return sum(layer_cosine_distance(a, b) for a, b in zip(g_syn, g_real))


def matching_loss_and_grad(g_syn, g_real):
    """Matching loss and its gradient with respect to ``g_syn``."""
    if len(g_syn) != len(g_real):
        raise ValueError("gradient lists differ in length")
    total, grads = 0.0, []
    for a, b in zip(g_syn, g_real):
        d, g = _layer_distance(a, b, True)
        total += d
        grads.append(g)
    return total, grads


def matching_input_grad(params, spec, features, labels, g_real):
    """(loss, d loss / d features) for the synthetic batch at fixed params."""
    tape = nn.Tape(params, spec, features, labels)
    loss, u = matching_loss_and_grad(tape.grads, g_real)
    return loss, tape.input_grad_of(u)


# ---------------------------------------------------------------------------
# training loop


def _checksum(arrays):
    crc = 0
    for a in arrays:
        crc = zlib.crc32(np.ascontiguousarray(a).view(np.uint8), crc)
    return crc


class _DirectSet:
    """Synthetic features optimized directly with momentum SGD."""

    def __init__(self, syn: SyntheticSet, lr, momentum):
        self.x = syn.features.copy()
        self.labels = syn.labels
        self.lr, self.momentum = lr, momentum
        self.state = None

    def features(self):
        return self.x

    def step(self, grad):
        (self.x,), self.state = sgd_update([self.x], [grad.astype(self.x.dtype)], self.lr,
                                           self.momentum, 0.0, self.state)

    def checksum(self):
        return _checksum([self.x])


def _chunked_sum(params, spec, x, y, idx, clip):
    total = None
    for start in range(0, len(idx), PER_EXAMPLE_CHUNK):
        chunk = idx[start : start + PER_EXAMPLE_CHUNK]
        part, _ = nn.clipped_grad_sum(params, spec, x[chunk], y[chunk], clip)
        if clip is None:
            part = [g.astype(np.float64) for g in part]
        total = part if total is None else [t + p for t, p in zip(total, part)]
    if total is None:
        dtype = params[0].dtype if clip is not None else np.float64
        total = [np.zeros(s, dtype=dtype) for s in nn.build(spec).param_shapes]
    return total


def sanitized_gradient(params, spec, x, y, idx, clip, sigma, nominal_batch, rng):
    """``(sum of clipped per-example gradients over idx + noise) / nominal_batch``.

    ``idx`` may be empty (Poisson sampling); the result is then pure noise.
    """
    total = _chunked_sum(params, spec, x, y, idx, clip)
    return noisy_average(total, clip, sigma, nominal_batch, rng)


def _real_gradient(params, spec, dataset, idx, cfg, sigma, rng_noise, accountant):
    """Sanitized (or, for non-private runs, plain mean) gradient of a real batch."""
    x, y = dataset.features, dataset.labels
    if cfg.private:
        out = sanitized_gradient(params, spec, x, y, idx, cfg.clip, sigma, cfg.batch_size,
                                 rng_noise)
    else:
        total = _chunked_sum(params, spec, x, y, idx, None)
        n = max(len(idx), 1)
        out = [(t / n).astype(params[0].dtype) for t in total]
    accountant.record(1)
    return out


def resolve_sigma(cfg: DistillConfig, q):
    if not cfg.private:
        return 0.0
    if cfg.sigma is not None:
        return float(cfg.sigma)
    return calibrate_noise(cfg.epsilon, cfg.delta, q, cfg.total_steps)


def _setup(dataset: LabeledDataset, cfg: DistillConfig, accountant):
    if len(dataset) == 0:
        raise ValueError("empty training set")
    q = min(1.0, cfg.batch_size / len(dataset))
    sigma = resolve_sigma(cfg, q)
    if cfg.private:
        check_delta(cfg.delta, len(dataset))
    if accountant is None:
        accountant = Accountant(q, sigma, cfg.delta)
    elif cfg.private and cfg.epsilon is not None and accountant.epsilon()[0] >= cfg.epsilon:
        raise BudgetExhausted("accountant already at or beyond the target epsilon")
    return q, sigma, accountant


def _psg_loop(dataset, cfg, spec, syn_param, accountant, sigma, q):
    labels = syn_param.labels
    rng_sample = substream(cfg.seed, "sampling")
    rng_noise = substream(cfg.seed, "noise")
    loss_curve, eps_curve = [], []
    for r in range(cfg.runs):
        theta = nn.init_params(spec, stream_seed(cfg.seed, f"theta_init/{r}"))
        theta_state = None
        for _ in range(cfg.outer_iters):
            theta_sum = _checksum(theta)
            losses = []
            for _ in range(cfg.batches):
                idx = poisson_batch(len(dataset), q, rng_sample)
                g_real = _real_gradient(theta, spec, dataset, idx, cfg, sigma, rng_noise,
                                        accountant)
                try:
                    loss, grad_x = matching_input_grad(theta, spec, syn_param.features(), labels,
                                                       g_real)
                except nn.NonFiniteError as exc:
                    raise NonFiniteLoss(f"run {r}, step {accountant.steps}: {exc}") from exc
                if not math.isfinite(loss) or not np.all(np.isfinite(grad_x)):
                    raise NonFiniteLoss(
                        f"non-finite matching loss at run {r}, step {accountant.steps}"
                    )
                syn_param.step(grad_x)
                losses.append(loss)
            if _checksum(theta) != theta_sum:
                raise IsolationError("network parameters changed during matching")
            syn_sum = syn_param.checksum()
            x_syn = syn_param.features()
            for _ in range(cfg.inner_iters):
                _, g = nn.loss_and_grad(theta, spec, x_syn, labels)
                theta, theta_state = sgd_update(theta, g, cfg.lr_theta, cfg.momentum_theta,
                                                0.0, theta_state)
            if syn_param.checksum() != syn_sum:
                raise IsolationError("synthetic set changed during network updates")
            loss_curve.append(float(np.mean(losses)))
            eps = accountant.epsilon()[0]
            eps_curve.append(None if math.isinf(eps) else eps)
        if (r + 1) % max(1, cfg.runs // 10) == 0:
            log.info("run %d/%d  matching loss %.4f", r + 1, cfg.runs, loss_curve[-1])
    return loss_curve, eps_curve


def _report(method, dataset, cfg, spec, accountant, sigma, q, curves, seeds, start, extra=None):
    eps, order = accountant.epsilon()
    report = {
        "method": method,
        "prior": method == "psg_prior",
        "config": cfg.to_dict(),
        "network": spec.to_dict(),
        "num_train": len(dataset),
        "sampling_rate": q,
        "sigma": sigma,
        "steps": accountant.steps,
        "expected_steps": cfg.total_steps,
        "epsilon": None if math.isinf(eps) else eps,
        "delta": cfg.delta,
        "best_order": order,
        "loss_curve": curves[0],
        "epsilon_curve": curves[1],
        "seeds": seeds,
        "accountant": accountant.to_dict(),
        "timing": {"wall_time_s": time.perf_counter() - start},
    }
    report.update(extra or {})
    return report


def _seed_table(cfg, names):
    table = {name: stream_seed(cfg.seed, name) for name in names}
    table["theta_init/0"] = stream_seed(cfg.seed, "theta_init/0")
    return table


def psg_train(dataset: LabeledDataset, cfg: DistillConfig, accountant: Accountant | None = None):
    """Learn a synthetic set; returns (SyntheticSet, AccountantState, report)."""
    start = time.perf_counter()
    q, sigma, accountant = _setup(dataset, cfg, accountant)
    spec = cfg.network_spec(dataset.data_shape, dataset.num_classes)
    syn = init_synthetic(cfg.spc, dataset.num_classes, dataset.data_shape,
                         stream_seed(cfg.seed, "syn_init"))
    param = _DirectSet(syn, cfg.lr_syn, cfg.momentum_syn)
    curves = _psg_loop(dataset, cfg, spec, param, accountant, sigma, q)
    out = SyntheticSet(param.features(), syn.labels, cfg.spc, dataset.num_classes)
    seeds = _seed_table(cfg, ["syn_init", "sampling", "noise"])
    report = _report("psg", dataset, cfg, spec, accountant, sigma, q, curves, seeds, start)
    return out, accountant.state, report


__all__ = [
    "DistillConfig",
    "IsolationError",
    "NonFiniteLoss",
    "SPC_SCHEDULE",
    "SyntheticSet",
    "default_iterations",
    "init_synthetic",
    "layer_cosine_distance",
    "matching_input_grad",
    "matching_loss",
    "matching_loss_and_grad",
    "psg_train",
    "sanitized_gradient",
]
