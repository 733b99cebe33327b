"""Command-line entry point.

Configuration is an INI document (see ``configs/`` and the README for the
grammar). Every run writes its fully normalized configuration into its
report so that an artifact can be regenerated from the report alone.

Exit status: 0 success, 1 runtime failure, 2 missing or unreadable config or
data, 3 validation failure, 4 privacy budget infeasible.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import typing
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as data_mod
from . import nn
from .continual import METHODS, ContinualConfig, StagePlan, run_continual
from .distill import DistillConfig, NonFiniteLoss, psg_train
from .eval import EvalConfig, cross_arch_report
from .generator import GeneratorConfig, psg_train_with_prior
from .privacy import (
    Accountant,
    AccountantState,
    InfeasibleBudget,
    accumulate,
    calibrate_noise,
    load_accountant_report,
    save_accountant,
)

log = logging.getLogger("privset")

OUTPUT_ROOT_ENV = "PRIVSET_OUTPUT_ROOT"
EXIT_RUNTIME, EXIT_INPUT, EXIT_VALIDATION, EXIT_INFEASIBLE = 1, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class InputError(OSError):
    """A config or data file is missing or unreadable."""


@dataclass
class DataConfig:
    format: str = "idx"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""
    downsample: int = 1
    norm_mean: float | None = None
    norm_std: float | None = None

    def __post_init__(self):
        if self.format not in ("idx", "csv"):
            raise ConfigError(f"data.format must be idx or csv, got {self.format!r}")
        if self.downsample < 1:
            raise ConfigError("data.downsample must be >= 1")


@dataclass
class PlanConfig:
    class_sets: str = "0,1;2,3;4,5;6,7;8,9"
    method: str = "psg_replay"
    epsilon: float | None = 10.0
    sigma: float | None = None
    delta: float = 1e-5
    dpsgd_epochs: int = 10
    dpsgd_lr: float = 0.5
    dpsgd_momentum: float = 0.9
    dpsgd_batch_size: int = 256

    def parsed_sets(self):
        try:
            return [[int(c) for c in part.split(",")] for part in self.class_sets.split(";")]
        except ValueError:
            raise ConfigError(f"continual.class_sets is malformed: {self.class_sets!r}") from None


@dataclass
class CrossArchConfig:
    archs: str = "convnet"


@dataclass
class RunConfig:
    seed: int = 0
    output: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cross_arch: CrossArchConfig = field(default_factory=CrossArchConfig)
    continual: PlanConfig = field(default_factory=PlanConfig)

    def to_dict(self):
        out = {"seed": self.seed, "output": self.output}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else dataclasses.asdict(section)
        return out


SECTIONS = {
    "data": DataConfig,
    "distill": DistillConfig,
    "generator": GeneratorConfig,
    "eval": EvalConfig,
    "cross_arch": CrossArchConfig,
    "continual": PlanConfig,
}
RUN_KEYS = {"seed": int, "output": str}
# seeds come from the single master seed in [run]
DERIVED_KEYS = {"seed"}


# ---------------------------------------------------------------------------
# config parsing


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key, text, hint):
    try:
        args = typing.get_args(hint)
        if type(None) in args:
            if text.strip().lower() in ("", "none"):
                return None
            hint = next(a for a in args if a is not type(None))
        if hint is bool:
            return _parse_bool(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is tuple or typing.get_origin(hint) is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text.strip()
    except (ValueError, StopIteration) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _section(name, cls, values):
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)} - DERIVED_KEYS
    kwargs = {}
    for key, text in values.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key}")
        kwargs[key] = _convert(f"{name}.{key}", text, hints[key])
    return kwargs


def read_config(path):
    """Parse an INI file into a nested dict of strings."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config {path} does not parse: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def validate_config(doc) -> RunConfig:
    """Normalize a parsed document; unknown sections or keys are rejected."""
    doc = {k: dict(v) for k, v in doc.items()}
    for name in doc:
        if name != "run" and name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    run = doc.get("run", {})
    for key in run:
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown key run.{key}")
    seed = _convert("run.seed", run["seed"], int) if "seed" in run else 0
    output = run.get("output", "")
    parsed = {name: _section(name, cls, doc.get(name, {})) for name, cls in SECTIONS.items()}

    d = parsed["distill"]
    if "sigma" in d and d["sigma"] is not None:
        if d.get("epsilon") is not None:
            raise ConfigError("distill.sigma and distill.epsilon are mutually exclusive")
        d["epsilon"] = None
    c = parsed["continual"]
    if "sigma" in c and c["sigma"] is not None:
        if c.get("epsilon") is not None:
            raise ConfigError("continual.sigma and continual.epsilon are mutually exclusive")
        c["epsilon"] = None
    if d.get("private") is False:
        d.setdefault("epsilon", None)
        if d["epsilon"] is not None or d.get("sigma") is not None:
            raise ConfigError("distill.private = false conflicts with distill.sigma/epsilon")

    built = {}
    for name, cls in SECTIONS.items():
        kwargs = parsed[name]
        if "seed" in {f.name for f in dataclasses.fields(cls)}:
            kwargs["seed"] = seed
        try:
            built[name] = cls(**kwargs)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    plan = built["continual"]
    if plan.method not in METHODS:
        raise ConfigError(f"continual.method must be one of {METHODS}")
    plan.parsed_sets()
    for arch in built["cross_arch"].archs.split(","):
        if arch.strip() not in ("convnet", "lenet", "mlp"):
            raise ConfigError(f"cross_arch.archs: unknown architecture {arch.strip()!r}")
    return RunConfig(seed=seed, output=output, **built)


# ---------------------------------------------------------------------------
# data


def _need(path, key):
    if not path:
        raise ConfigError(f"data.{key} is required for this command")
    if not Path(path).is_file():
        raise InputError(f"data file not found: {path} (data.{key})")
    return path


def _normalization(cfg: RunConfig, report=None):
    dc = cfg.data
    if dc.norm_mean is not None and dc.norm_std is not None:
        return data_mod.Normalization(dc.norm_mean, dc.norm_std)
    if report and report.get("normalization"):
        return data_mod.Normalization(**report["normalization"])
    return None


def load_train(cfg: RunConfig):
    dc = cfg.data
    norm = _normalization(cfg)
    if dc.format == "idx":
        return data_mod.load_idx(_need(dc.train_images, "train_images"),
                                 _need(dc.train_labels, "train_labels"), norm,
                                 downsample=dc.downsample)
    return data_mod.load_csv(_need(dc.train_csv, "train_csv"), norm)


def load_test(cfg: RunConfig, normalization, num_classes):
    """Test split only; the normalization must come from the training record."""
    dc = cfg.data
    if normalization is None:
        raise ConfigError("test data needs the training normalization: pass --report or set "
                          "data.norm_mean and data.norm_std")
    if dc.format == "idx":
        return data_mod.load_idx(_need(dc.test_images, "test_images"),
                                 _need(dc.test_labels, "test_labels"), normalization,
                                 num_classes, role="test", downsample=dc.downsample)
    return data_mod.load_csv(_need(dc.test_csv, "test_csv"), normalization, num_classes,
                             role="test")


# ---------------------------------------------------------------------------
# output helpers


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _output_dir(args, cfg: RunConfig | None, command):
    if args.out:
        out = Path(args.out)
    elif cfg is not None and cfg.output:
        out = Path(cfg.output)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out, syn, report, dataset):
    """Persist a distillation result; timings go to their own file."""
    timing = report.pop("timing", {})
    data_mod.save_synthetic(syn, out / "synthetic.psg")
    write_json(out / "report.json", report)
    write_json(out / "accountant.json", report["accountant"])
    write_json(out / "timing.json", timing)
    if len(syn.data_shape) == 3 and syn.data_shape[0] == 1:
        grid = data_mod.image_grid(syn.features, syn.labels, syn.num_classes,
                                   dataset.normalization)
        data_mod.write_pgm(out / "synthetic.pgm", grid)


def _load_config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    return validate_config(read_config(args.config))


def _read_report(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_calibrate(args):
    cfg = _load_config(args) if args.config else None
    dcfg = cfg.distill if cfg else None
    epsilon = args.epsilon if args.epsilon is not None else (dcfg.epsilon if dcfg else None)
    delta = args.delta if args.delta is not None else (dcfg.delta if dcfg else 1e-5)
    steps = args.steps if args.steps is not None else (dcfg.total_steps if dcfg else None)
    if args.q is None or epsilon is None or steps is None:
        raise ConfigError("calibrate needs --q, --steps and --epsilon (or a config)")
    try:
        q = float(Fraction(args.q))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"--q must be a number or fraction, got {args.q!r}") from None
    if not 0 < q <= 1:
        raise ConfigError("--q must lie in (0, 1]")
    sigma = calibrate_noise(epsilon, delta, q, steps)
    acct = Accountant(q, sigma, delta, accumulate(AccountantState(), q, sigma, steps))
    eps, order = acct.epsilon()
    out = _output_dir(args, cfg, "calibrate")
    save_accountant(acct, out / "accountant.json")
    print(json.dumps({"sigma": sigma, "epsilon": eps, "best_order": order, "q": q,
                      "steps": steps, "delta": delta, "accountant": str(out / "accountant.json")}))
    return 0


def _distill(args, prior):
    cfg = _load_config(args)
    train = load_train(cfg)
    if prior:
        syn, _, report = psg_train_with_prior(train, cfg.distill, cfg.generator)
    else:
        syn, _, report = psg_train(train, cfg.distill)
    report["run_config"] = cfg.to_dict()
    norm = train.normalization
    report["normalization"] = {"mean": norm.mean, "std": norm.std}
    out = _output_dir(args, cfg, "distill-prior" if prior else "distill")
    _write_run(out, syn, report, train)
    print(json.dumps({"output": str(out), "epsilon": report["epsilon"],
                      "steps": report["steps"], "sigma": report["sigma"]}))
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    syn_path = Path(args.synthetic)
    if not syn_path.is_file():
        raise InputError(f"synthetic set not found: {syn_path}")
    syn = data_mod.load_synthetic(syn_path)
    report_path = Path(args.report) if args.report else syn_path.with_name("report.json")
    report = _read_report(report_path) if report_path.is_file() else None
    test = load_test(cfg, _normalization(cfg, report), syn.num_classes)
    archs = [a.strip() for a in (args.archs or cfg.cross_arch.archs).split(",")]
    table = cross_arch_report(syn, archs, test, cfg.eval)
    digest = hashlib.sha256(syn_path.read_bytes()).hexdigest()
    doc = {"synthetic_sha256": digest, "table": table, "run_config": cfg.to_dict()}
    out = _output_dir(args, cfg, "eval")
    write_json(out / "eval_report.json", doc)
    print(json.dumps({a: [r["mean"], r["std"]] for a, r in table.items()}))
    return 0


def cmd_continual(args):
    cfg = _load_config(args)
    train = load_train(cfg)
    test = load_test(cfg, train.normalization, train.num_classes)
    pc = cfg.continual
    plan = StagePlan(pc.parsed_sets(), pc.method, pc.epsilon, pc.sigma, pc.delta)
    ccfg = ContinualConfig(cfg.distill, cfg.eval, pc.dpsgd_epochs, pc.dpsgd_lr,
                           pc.dpsgd_momentum, pc.dpsgd_batch_size, cfg.distill.clip, cfg.seed)
    report = run_continual(plan, train, test, ccfg)
    report["run_config"] = cfg.to_dict()
    out = _output_dir(args, cfg, "continual")
    write_json(out / "continual_report.json", report)
    print(json.dumps({"averaged_accuracy": report["averaged_accuracy"],
                      "epsilon_per_stage": report["epsilon_per_stage"]}))
    return 0


def cmd_export_images(args):
    syn_path = Path(args.synthetic)
    if not syn_path.is_file():
        raise InputError(f"synthetic set not found: {syn_path}")
    syn = data_mod.load_synthetic(syn_path)
    report_path = Path(args.report) if args.report else syn_path.with_name("report.json")
    norm = None
    if report_path.is_file():
        rec = _read_report(report_path).get("normalization")
        norm = data_mod.Normalization(**rec) if rec else None
    if len(syn.data_shape) != 3 or syn.data_shape[0] != 1:
        raise ConfigError(f"image export needs single-channel images, got {syn.data_shape}")
    out = _output_dir(args, None, "export-images")
    path = out / (syn_path.stem + ".pgm")
    data_mod.write_pgm(path, data_mod.image_grid(syn.features, syn.labels, syn.num_classes, norm))
    print(json.dumps({"image": str(path)}))
    return 0


def cmd_report(args):
    path = Path(args.accountant)
    if not path.is_file():
        raise InputError(f"accountant file not found: {path}")
    try:
        doc, eps, order = load_accountant_report(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path} is not an accountant record: {exc}") from None
    print(json.dumps({"epsilon": None if math.isinf(eps) else eps, "best_order": order,
                      "steps": doc["steps"], "delta": doc["delta"], "sigma": doc["sigma"],
                      "q": doc["q"]}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="privset", description=__doc__.split("\n")[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    common(sp)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--q", help="sampling rate, e.g. 256/60000")
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_calibrate)

    for name, prior in (("distill", False), ("distill-prior", True)):
        sp = sub.add_parser(name, help="learn a private synthetic set"
                            + (" through a generator" if prior else ""))
        common(sp)
        sp.set_defaults(func=lambda a, prior=prior: _distill(a, prior))

    sp = sub.add_parser("eval", help="train downstream classifiers on a synthetic set")
    common(sp)
    sp.add_argument("--synthetic", required=True)
    sp.add_argument("--report", help="distillation report holding the normalization")
    sp.add_argument("--archs", help="comma-separated architectures")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("continual", help="class-incremental comparison")
    common(sp)
    sp.set_defaults(func=cmd_continual)

    sp = sub.add_parser("export-images", help="PGM grid of a synthetic set")
    common(sp, config=False)
    sp.add_argument("--synthetic", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_export_images)

    sp = sub.add_parser("report", help="recompute epsilon from an accountant file")
    sp.add_argument("--accountant", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def run_command(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, data_mod.DataFormatError, data_mod.ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleBudget as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NonFiniteLoss, nn.NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
