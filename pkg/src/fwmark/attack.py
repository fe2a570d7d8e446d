"""Adversary simulation: BIM backdoor crafting, fine-tuning campaigns, and
the sensitivity/ablation/sweep experiment harness.

The attacker takes a watermarked classifier, crafts backdoor data with the
Basic Iterative Method, fine-tunes on clean-plus-backdoor data, and the
harness records trigger accuracy after every epoch so the first-epoch drop
and mean-AccTri trends can be measured.
"""

import copy
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .checkpoint import parameter_hash
from .data import Dataset
from .errors import ConfigError
from .models import build_generator
from .optim import make_optimizer
from .training import evaluate
from .watermark import (FragileLossConfig, acc_tri, frozen,
                        materialize_triggers, train_generator)


@dataclass
class BimConfig:
    epsilon: float = 0.1          # L-inf budget in normalized pixel units
    step_size: float = 0.025      # alpha; default epsilon/4
    iterations: int = 10
    target_mode: str = "untargeted"  # "untargeted" | "targeted"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.iterations > 0 and self.step_size <= 0:
            raise ConfigError(f"step size must be > 0, got {self.step_size}")
        if self.target_mode not in ("untargeted", "targeted"):
            raise ConfigError(f"unknown target_mode {self.target_mode!r}")


def _clip_linf_exact(adv, origin, eps):
    """Clip into the L-inf ball so that max|adv - origin| <= eps holds
    exactly in float32 (rounding of origin +/- eps can otherwise leak a few
    ulps over budget)."""
    eps = np.float32(eps)
    adv = np.clip(adv, origin - eps, origin + eps)
    while True:
        over = np.abs(adv - origin) > eps
        if not over.any():
            return adv
        adv[over] = np.nextafter(adv[over], origin[over])


def bim_craft(classifier, images, labels, cfg, targets=None):
    """Iterative sign-gradient perturbation within an exact L-inf budget.

    Untargeted mode ascends the true-label loss; targeted mode descends the
    loss toward `targets`.  Output stays inside the [-1, 1] data range.
    """
    origin = np.ascontiguousarray(images, dtype=np.float32)
    adv = origin.copy()
    if cfg.iterations == 0 or cfg.epsilon == 0.0:
        return adv
    if cfg.target_mode == "targeted":
        if targets is None:
            raise ConfigError("targeted BIM needs target labels")
        loss_labels, sign = np.asarray(targets), -1.0
    else:
        loss_labels, sign = np.asarray(labels), +1.0
    alpha = np.float32(cfg.step_size)

    with frozen(classifier):
        for _ in range(cfg.iterations):
            with T.Tape() as tape:
                x = T.Tensor(adv, requires_grad=True)
                probs = T.softmax(classifier.forward(x))
                loss = T.cross_entropy(probs, loss_labels)
            T.backward(loss, tape)
            adv = adv + np.float32(sign) * alpha * np.sign(x.grad)
            adv = _clip_linf_exact(adv, origin, cfg.epsilon)
            adv = np.clip(adv, -1.0, 1.0)  # stays inside the ball: it holds origin
    return adv


def build_poisoned_dataset(clean, classifier, bim_cfg, poison_fraction,
                           target_labels=None, seed=0):
    """Clean data plus BIM-perturbed copies of a seed-chosen subset, with the
    perturbed copies labeled by the adversary's targets ((y+1) mod M by
    default)."""
    if not 0.0 <= poison_fraction <= 1.0:
        raise ConfigError(f"poison fraction must be in [0,1], got {poison_fraction}")
    if poison_fraction == 0.0:
        return clean
    n = len(clean)
    n_poison = int(round(poison_fraction * n))
    if n_poison == 0:
        raise ConfigError(f"poison fraction {poison_fraction} selects no samples")
    rng = np.random.default_rng(np.random.PCG64(seed))
    idx = rng.choice(n, size=n_poison, replace=False)
    idx.sort()

    if target_labels is None:
        target_labels = (clean.labels + 1) % clean.M
    targets = np.asarray(target_labels, dtype=np.int64)[idx]

    crafted = []
    for lo in range(0, n_poison, 256):
        sel = idx[lo:lo + 256]
        crafted.append(bim_craft(classifier, clean.images[sel],
                                 clean.labels[sel], bim_cfg,
                                 targets=targets[lo:lo + 256]))
    images = np.concatenate([clean.images, *crafted])
    labels = np.concatenate([clean.labels, targets])
    return Dataset(images, labels, M=clean.M, name=f"{clean.name}+poison",
                   split=clean.split)


@dataclass
class FineTuneConfig:
    mode: str = "full"            # "full" | "last_layer"
    epochs: int = 60
    optimizer: str = "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    poison_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "last_layer"):
            raise ConfigError(f"unknown fine-tune mode {self.mode!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ConfigError(
                f"poison fraction must be in [0,1], got {self.poison_fraction}")


@dataclass
class EpochRecord:
    epoch: int
    acc_tri: Fraction
    test_acc: float
    param_hash: str


@dataclass
class SensitivityTrace:
    trigger_name: str
    records: list = field(default_factory=list)

    def mean_acc_tri(self):
        """Exact mean AccTri over all recorded epochs."""
        return sum((r.acc_tri for r in self.records), Fraction(0)) / len(self.records)

    def no_drop(self):
        return all(r.acc_tri == 1 for r in self.records)

    def rows(self):
        return [(r.epoch, float(r.acc_tri), r.test_acc, r.param_hash[:12])
                for r in self.records]


def fine_tune(classifier, dataset, cfg, trigger_sets=None, test_dataset=None):
    """Fine-tune a copy of the classifier, recording per-epoch sensitivity.

    trigger_sets may be a single TriggerSet or a {name: TriggerSet} mapping
    (all are evaluated during the same run, like the four lines of a
    sensitivity plot).  Returns (fine_tuned_classifier, trace) for a single
    set, (.., {name: trace}) for a mapping, (.., None) when none given.
    In "last_layer" mode all parameters below last_block_index are frozen
    and stay bit-identical.
    """
    single = trigger_sets is not None and not isinstance(trigger_sets, dict)
    named = {} if trigger_sets is None else (
        {"triggers": trigger_sets} if single else dict(trigger_sets))
    eval_ds = test_dataset if test_dataset is not None else dataset

    tuned = copy.deepcopy(classifier)
    if cfg.mode == "last_layer":
        tuned.set_requires_grad(False, tuned.frozen_layers())
    trainable = [p for p in tuned.params() if p.requires_grad]
    opt = make_optimizer(cfg.optimizer, trainable, cfg.lr, momentum=cfg.momentum)

    from .data import Batcher
    batcher = Batcher(dataset, cfg.batch_size, seed=cfg.seed)
    traces = {name: SensitivityTrace(name) for name in named}
    for epoch in range(1, cfg.epochs + 1):
        for images, labels in batcher.batches():
            with T.Tape() as tape:
                probs = T.softmax(tuned.forward(T.Tensor(images)))
                loss = T.cross_entropy(probs, labels)
            T.backward(loss, tape)
            opt.step()
            opt.zero_grad()
        h = parameter_hash(tuned)
        test_acc = evaluate(tuned, eval_ds)[0]
        for name, ts in named.items():
            traces[name].records.append(EpochRecord(
                epoch=epoch, acc_tri=acc_tri(tuned, ts).acc_tri,
                test_acc=test_acc, param_hash=h))

    if trigger_sets is None:
        return tuned, None
    return tuned, (traces["triggers"] if single else traces)


# ---------------------------------------------------------------------------
# experiment harness


def classifier_probs(classifier, images, batch=256):
    """Softmax rows for a batch of images (no taping)."""
    rows = []
    for lo in range(0, len(images), batch):
        logits = classifier.forward(T.Tensor(images[lo:lo + batch]))
        rows.append(T.softmax(logits).data)
    return np.concatenate(rows)


def row_stats(probs):
    """Per-row top-1 probability and population variance, plus their means."""
    top1 = probs.max(axis=1)
    var = probs.var(axis=1)
    return {
        "mean_top1": float(top1.mean()),
        "mean_row_variance": float(var.mean()),
        "top1": top1.tolist(),
        "row_variance": var.tolist(),
    }


ABLATION_ARMS = ("G_non", "G_cla", "G_full", "G_var")


def ablation_suite(classifier, key, epochs, a=200.0, seed=0,
                   optimizer="adam", lr=1e-3):
    """Four loss arms from one shared generator init.

    G_non: untrained.  G_cla: cross-entropy only (a=0).  G_full: full loss.
    G_var: variance term only.  G_non and G_var carry the classifier's
    predicted labels (they make no key-match promise); G_cla and G_full must
    converge to the key.
    """
    arms = {}
    for arm in ABLATION_ARMS:
        g = build_generator(classifier.input_shape, seed=seed)
        if arm == "G_non":
            pass
        elif arm == "G_var":
            cfg = FragileLossConfig(a=a, epochs=epochs, optimizer=optimizer, lr=lr)
            train_generator(g, classifier, key, cfg, loss_mode="var_only")
        else:
            arm_a = 0.0 if arm == "G_cla" else a
            cfg = FragileLossConfig(a=arm_a, epochs=epochs, optimizer=optimizer,
                                    lr=lr)
            train_generator(g, classifier, key, cfg)
        images = g.generate(key.noise())
        probs = classifier_probs(classifier, images)
        labels = None
        if arm in ("G_non", "G_var"):
            labels = classifier.predict(images)  # initial labels, not the key
        arms[arm] = {
            "trigger_set": materialize_triggers(g, key, labels=labels),
            "probs": probs,
            "stats": row_stats(probs),
        }
    pick = int(np.random.default_rng(np.random.PCG64(seed)).integers(key.n))
    return {
        "arms": arms,
        "selected_index": pick,
        "table_rows": {arm: arms[arm]["probs"][pick].tolist()
                       for arm in ABLATION_ARMS},
    }


@dataclass
class SweepProtocol:
    """Everything one sweep cell needs besides (arch, a)."""

    train_ds: Dataset
    test_ds: Dataset
    n_triggers: int = 100
    classifier_epochs: int = 5
    classifier_lr: float = 0.01
    classifier_optimizer: str = "sgd"
    generator_epochs: int = 300
    generator_lr: float = 1e-3
    generator_optimizer: str = "adam"
    finetune: FineTuneConfig = field(default_factory=lambda: FineTuneConfig(
        mode="last_layer", epochs=60, optimizer="sgd", lr=1e-3))
    bim: BimConfig = field(default_factory=BimConfig)
    poison_fraction: float = 0.1
    seed: int = 0


def _sweep_cell(classifier, poisoned, arch, a, proto, cell_index):
    from .watermark import make_secret_key

    key = make_secret_key(proto.n_triggers, proto.train_ds.M,
                          noise_seed=proto.seed * 1009 + cell_index)
    g = build_generator(classifier.input_shape, seed=proto.seed * 7919 + cell_index)
    cfg = FragileLossConfig(a=a, epochs=proto.generator_epochs,
                            optimizer=proto.generator_optimizer,
                            lr=proto.generator_lr)
    train_generator(g, classifier, key, cfg)
    triggers = materialize_triggers(g, key)
    ft = replace(proto.finetune, seed=proto.seed * 31 + cell_index)
    _, trace = fine_tune(classifier, poisoned, ft, trigger_sets=triggers,
                         test_dataset=proto.test_ds)
    return {
        "arch": arch, "a": a,
        "mean_acc_tri": float(trace.mean_acc_tri()),
        "no_drop": trace.no_drop(),
        "rows": trace.rows(),
    }


def weight_sweep(archs, a_values, proto, log=None):
    """(arch x a) grid: watermark, last-layer fine-tune, mean AccTri per cell.

    One cell's failure is recorded and does not abort the grid.  Each arch
    trains one base classifier and one poisoned corpus, shared by its cells.
    """
    from .models import build_classifier
    from .training import train_classifier

    cells = []
    for ai, arch in enumerate(archs):
        classifier = build_classifier(arch, proto.train_ds.image_shape,
                                      proto.train_ds.M, seed=proto.seed + ai)
        train_classifier(classifier, proto.train_ds,
                         epochs=proto.classifier_epochs,
                         lr=proto.classifier_lr,
                         optimizer=proto.classifier_optimizer,
                         seed=proto.seed + ai, test_ds=None)
        poisoned = build_poisoned_dataset(proto.train_ds, classifier, proto.bim,
                                          proto.poison_fraction,
                                          seed=proto.seed + ai)
        for vi, a in enumerate(a_values):
            cell_index = ai * len(a_values) + vi
            try:
                cell = _sweep_cell(classifier, poisoned, arch, a, proto,
                                   cell_index)
            except Exception as exc:  # a failed cell must not abort the grid
                cell = {"arch": arch, "a": a, "error": f"{type(exc).__name__}: {exc}"}
            cells.append(cell)
            if log:
                log(cell)
    return cells
