"""fwmark: fragile trigger-set watermarking for image classifiers.

Watermark a trained classifier by synthesizing a trigger set from a
generator trained with a cross-entropy-to-secret-key loss plus a softmax
variance penalty; verify integrity black-box by checking that every trigger
still maps to its key label.  The protected classifier is never modified.
"""

__version__ = "0.1.0"

from .attack import (BimConfig, FineTuneConfig, SensitivityTrace, SweepProtocol,
                     ablation_suite, bim_craft, build_poisoned_dataset,
                     fine_tune, weight_sweep)
from .checkpoint import load, parameter_hash, save
from .data import Batcher, Dataset, load_idx, split, synth_blobs
from .kernels import get_backend
from .models import (ClassifierModel, GeneratorModel, build_classifier,
                     build_generator)
from .optim import SGD, Adam
from .tensor import Tape, Tensor, backward, grad_check
from .training import evaluate, train_classifier
from .watermark import (ConvergenceError, FragileLossConfig, SecretKey,
                        TriggerSet, VerificationReport, acc_tri, fragile_loss,
                        load_triggers, make_secret_key, materialize_triggers,
                        save_triggers, train_generator, variance_regularizer)

__all__ = [
    "Adam", "Batcher", "BimConfig", "ClassifierModel", "ConvergenceError",
    "Dataset", "FineTuneConfig", "FragileLossConfig", "GeneratorModel",
    "SGD", "SecretKey", "SensitivityTrace", "SweepProtocol", "Tape", "Tensor",
    "TriggerSet", "VerificationReport", "ablation_suite", "acc_tri",
    "backward", "bim_craft", "build_classifier", "build_generator",
    "build_poisoned_dataset", "evaluate", "fine_tune", "fragile_loss",
    "get_backend", "grad_check", "load", "load_idx", "load_triggers",
    "make_secret_key", "materialize_triggers", "parameter_hash", "save",
    "save_triggers", "split", "synth_blobs", "train_classifier",
    "train_generator", "variance_regularizer", "weight_sweep",
]
