"""Differentially private synthetic training sets learned by gradient matching."""

from .continual import ContinualConfig, StagePlan, run_continual
from .data import LabeledDataset, SyntheticSet, load_synthetic, save_synthetic
from .distill import DistillConfig, psg_train
from .eval import EvalConfig, cross_arch_report, evaluate_accuracy, train_downstream
from .generator import GeneratorConfig, psg_train_with_prior
from .privacy import Accountant, AccountantState, calibrate_noise, compute_epsilon, sgm_rdp

__version__ = "0.1.0"

__all__ = [
    "Accountant",
    "AccountantState",
    "ContinualConfig",
    "DistillConfig",
    "EvalConfig",
    "GeneratorConfig",
    "LabeledDataset",
    "StagePlan",
    "SyntheticSet",
    "calibrate_noise",
    "compute_epsilon",
    "cross_arch_report",
    "evaluate_accuracy",
    "load_synthetic",
    "psg_train",
    "psg_train_with_prior",
    "run_continual",
    "save_synthetic",
    "sgm_rdp",
    "train_downstream",
]
