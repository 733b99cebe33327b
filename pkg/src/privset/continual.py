"""Private class-incremental learning over disjoint class partitions.

Two strategies are compared stage by stage:

``dpsgd``
    One classifier over all classes, fine-tuned on each partition in turn with
    clipped and noised SGD. Only its parameters cross stage boundaries.
``psg_replay``
    Each stage distills its own partition into a private synthetic set, adds it
    to a growing pool, and trains a fresh classifier (one output per class seen
    so far) on the pool. Only synthetic sets cross stage boundaries.

After stage ``k`` the model is scored on the test classes of every stage
``j <= k``; the reported curve is the mean of those scores.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import LabeledDataset, SyntheticSet, class_split, encode_synthetic, poisson_batch
from .distill import DistillConfig, psg_train, sanitized_gradient
from .eval import EvalConfig, downstream_spec, evaluate_accuracy, train_downstream
from .optim import sgd_update
from .privacy import Accountant, calibrate_noise, check_delta
from .rng import stream_seed, substream

log = logging.getLogger(__name__)

METHODS = ("dpsgd", "psg_replay")


class ProvenanceViolation(RuntimeError):
    pass


@dataclass
class StagePlan:
    """Ordered class partitions with a per-partition privacy budget.

    Exactly one of ``epsilon`` and ``sigma`` is set; ``sigma=0`` runs without
    privacy (steps are still counted).
    """

    class_sets: list
    method: str = "psg_replay"
    epsilon: float | None = 10.0
    sigma: float | None = None
    delta: float = 1e-5

    def __post_init__(self):
        self.class_sets = [tuple(sorted(int(c) for c in s)) for s in self.class_sets]
        if self.method not in METHODS:
            raise ValueError(f"unknown continual method {self.method!r}")
        if not self.class_sets or any(not s for s in self.class_sets):
            raise ValueError("need at least one non-empty class set")
        flat = [c for s in self.class_sets for c in s]
        if len(flat) != len(set(flat)):
            raise ValueError("class sets must be disjoint")
        if (self.epsilon is None) == (self.sigma is None):
            raise ValueError("set exactly one of epsilon and sigma")

    @property
    def private(self):
        return self.sigma is None or self.sigma > 0

    def to_dict(self):
        return {"class_sets": [list(s) for s in self.class_sets], "method": self.method,
                "epsilon": self.epsilon, "sigma": self.sigma, "delta": self.delta}


@dataclass
class ContinualConfig:
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    dpsgd_epochs: int = 10
    dpsgd_lr: float = 0.5
    dpsgd_momentum: float = 0.9
    dpsgd_batch_size: int = 256
    clip: float = 0.1
    seed: int = 0

    def to_dict(self):
        return {
            "distill": self.distill.to_dict(),
            "eval": self.eval.to_dict(),
            "dpsgd_epochs": self.dpsgd_epochs,
            "dpsgd_lr": self.dpsgd_lr,
            "dpsgd_momentum": self.dpsgd_momentum,
            "dpsgd_batch_size": self.dpsgd_batch_size,
            "clip": self.clip,
            "seed": self.seed,
        }


def _relabel(ds: LabeledDataset, classes, role):
    lookup = {c: i for i, c in enumerate(classes)}
    labels = np.array([lookup[int(y)] for y in ds.labels], dtype=np.int64)
    return LabeledDataset(ds.features, labels, len(classes), ds.normalization, role, ds.source)


def _masked_accuracy(params, spec, test, classes, allowed):
    """Accuracy on test examples of ``classes`` with argmax over ``allowed`` outputs."""
    keep = np.isin(test.labels, classes)
    if not keep.any():
        return math.nan
    logits = nn.predict(params, spec, test.features[keep])
    allowed = np.asarray(allowed)
    pred = allowed[np.argmax(logits[:, allowed], axis=1)]
    return float(np.mean(pred == test.labels[keep]))


class _Audit:
    """Records what each stage consumed and what it handed to the next stage."""

    def __init__(self):
        self.log = []

    def consume(self, stage, obj):
        role = getattr(obj, "role", None)
        if isinstance(obj, LabeledDataset) and role != f"train:partition{stage}":
            raise ProvenanceViolation(f"stage {stage} read real data with role {role!r}")
        self.log.append({"stage": stage, "event": "consume", "role": role or type(obj).__name__})

    def transfer(self, stage, kind, nbytes):
        if kind not in ("model_parameters", "synthetic_set"):
            raise ProvenanceViolation(f"stage {stage} tried to transfer {kind!r}")
        self.log.append({"stage": stage, "event": "transfer", "kind": kind, "bytes": nbytes})


def _dpsgd_stage(params, spec, part, k, plan, cfg, audit):
    audit.consume(k, part)
    n = len(part)
    q = min(1.0, cfg.dpsgd_batch_size / n)
    steps = cfg.dpsgd_epochs * max(1, round(1 / q))
    if plan.sigma is not None:
        sigma = float(plan.sigma)
    else:
        sigma = calibrate_noise(plan.epsilon, plan.delta, q, steps)
    if plan.private:
        check_delta(plan.delta, n)
    acct = Accountant(q, sigma, plan.delta)
    rng_s = substream(cfg.seed, f"continual/{k}/sampling")
    rng_n = substream(cfg.seed, f"continual/{k}/noise")
    state = None
    for _ in range(steps):
        idx = poisson_batch(n, q, rng_s)
        g = sanitized_gradient(params, spec, part.features, part.labels, idx, cfg.clip, sigma,
                               cfg.dpsgd_batch_size, rng_n)
        acct.record(1)
        params, state = sgd_update(params, g, cfg.dpsgd_lr, cfg.dpsgd_momentum, 0.0, state)
    return params, acct, sigma


def _replay_stage(part, k, classes, pool, plan, cfg, audit):
    audit.consume(k, part)
    local = _relabel(part, classes, part.role)
    overrides = {
        "private": plan.private,
        "sigma": plan.sigma if plan.private else None,
        "epsilon": plan.epsilon if plan.private else None,
        "seed": stream_seed(cfg.seed, f"continual/{k}"),
    }
    dcfg = DistillConfig(**{**cfg.distill.to_dict(), **overrides})
    syn, _, rep = psg_train(local, dcfg)
    offset = pool.num_classes if pool is not None else 0
    labels = syn.labels + offset
    if pool is None:
        pool = SyntheticSet(syn.features, labels, syn.spc, len(classes))
    else:
        pool = SyntheticSet(np.concatenate([pool.features, syn.features]),
                            np.concatenate([pool.labels, labels]), syn.spc,
                            pool.num_classes + len(classes))
    nbytes = len(encode_synthetic(syn.features, syn.labels, syn.num_classes, syn.spc))
    audit.transfer(k, "synthetic_set", nbytes)
    audit.consume(k, pool)
    return pool, rep, nbytes


def run_continual(plan: StagePlan, train: LabeledDataset, test: LabeledDataset,
                  cfg: ContinualConfig | None = None):
    """Run all stages; returns a JSON-ready report.

    ``report["averaged_accuracy"][k]`` is the mean over stages ``j <= k`` of the
    accuracy on stage ``j``'s test classes after stage ``k``.
    """
    cfg = cfg or ContinualConfig()
    all_classes = [c for s in plan.class_sets for c in s]
    if max(all_classes) >= train.num_classes:
        raise ValueError("class set refers to a label outside the dataset")
    parts = class_split(train, plan.class_sets)
    audit = _Audit()
    stages = len(parts)
    matrix = [[None] * stages for _ in range(stages)]
    eps_stage, sigma_stage, sizes, steps = [], [], [], []
    seen = []
    params = pool = None
    if plan.method == "dpsgd":
        spec = downstream_spec(train.data_shape, train.num_classes, cfg.eval)
        params = nn.init_params(spec, stream_seed(cfg.seed, "continual/init"))
    for k, (part, classes) in enumerate(zip(parts, plan.class_sets)):
        seen.extend(classes)
        if plan.method == "dpsgd":
            params, acct, sigma = _dpsgd_stage(params, spec, part, k, plan, cfg, audit)
            eps = acct.epsilon()[0]
            n_steps = acct.steps
            audit.transfer(k, "model_parameters", sum(p.nbytes for p in params))
            sizes.append(sum(p.nbytes for p in params))
            for j in range(k + 1):
                matrix[k][j] = _masked_accuracy(params, spec, test, plan.class_sets[j], seen)
        else:
            pool, rep, nbytes = _replay_stage(part, k, classes, pool, plan, cfg, audit)
            eps, sigma, n_steps = rep["epsilon"], rep["sigma"], rep["steps"]
            eps = math.inf if eps is None else eps
            sizes.append(nbytes)
            eval_seed = stream_seed(cfg.seed, f"continual/eval/{k}")
            ecfg = EvalConfig(**{**cfg.eval.to_dict(), "seed": eval_seed})
            cls_params = train_downstream(pool, ecfg)
            cspec = downstream_spec(pool.data_shape, pool.num_classes, ecfg)
            seen_test = _relabel(test.subset(np.flatnonzero(np.isin(test.labels, seen)), "test"),
                                 seen, "test")
            for j in range(k + 1):
                local = [seen.index(c) for c in plan.class_sets[j]]
                matrix[k][j] = evaluate_accuracy(cls_params, cspec, seen_test, local)
        eps_stage.append(None if math.isinf(eps) else eps)
        sigma_stage.append(sigma)
        steps.append(n_steps)
        log.info("stage %d/%d (%s) accuracy %s", k + 1, stages, plan.method, matrix[k][: k + 1])
    averaged = [float(np.nanmean(matrix[k][: k + 1])) for k in range(stages)]
    finite = [e for e in eps_stage if e is not None]
    private = plan.private and len(finite) == stages
    return {
        "method": plan.method,
        "plan": plan.to_dict(),
        "config": cfg.to_dict(),
        "averaged_accuracy": averaged,
        "accuracy_matrix": matrix,
        "epsilon_per_stage": eps_stage,
        "epsilon_max": max(finite) if private else None,
        "epsilon_sum": sum(finite) if private else None,
        "epsilon_note": "per-partition budgets; max assumes disjoint data (parallel "
                        "composition), sum is the sequential-composition bound",
        "sigma_per_stage": sigma_stage,
        "steps_per_stage": steps,
        "transferred_bytes": sizes,
        "provenance": audit.log,
    }


__all__ = ["ContinualConfig", "METHODS", "ProvenanceViolation", "StagePlan", "run_continual"]
