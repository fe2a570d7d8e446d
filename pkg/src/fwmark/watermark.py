"""Fragile trigger-set watermarking and black-box integrity verification.

The owner trains a generator against a frozen classifier so that 100 noise
vectors map to images whose predicted labels equal a secret key schedule
(label i -> i mod M), while a variance penalty flattens each image's softmax
row.  Flat rows sit near decision boundaries, so any fine-tuning of the
classifier flips some trigger labels and drags the trigger accuracy below
1.0.  The classifier itself is never modified: watermarking only queries it.
"""

import hashlib
import json
import os
import struct
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .checkpoint import parameter_hash
from .errors import ContractError, ShapeError
from .models import NOISE_DIM
from .optim import make_optimizer

TRIGGER_MAGIC_VERSION = 1


class ConvergenceError(RuntimeError):
    """Generator failed to hit trigger accuracy 1.0 within the epoch budget."""

    def __init__(self, acc_tri, loss_tail, message=None):
        self.acc_tri = acc_tri
        self.loss_tail = list(loss_tail)
        super().__init__(
            message or f"generator did not converge: final AccTri {float(acc_tri):.4f}")


class TriggerTamperError(IOError):
    """Trigger-set file failed its integrity digest; no verdict is possible."""


@dataclass(frozen=True)
class SecretKey:
    """Owner's label schedule (label i = i mod M) plus the noise seed."""

    n: int
    M: int
    labels: tuple
    noise_seed: int

    def noise(self):
        """[n, 512] float32 noise, reproduced deterministically from the seed."""
        rng = np.random.default_rng(np.random.PCG64(self.noise_seed))
        return rng.standard_normal((self.n, NOISE_DIM)).astype(np.float32)


def make_secret_key(n, M, noise_seed):
    if n < 1 or M < 2:
        raise ValueError(f"need n >= 1 and M >= 2, got n={n}, M={M}")
    if n < M:
        warnings.warn(f"n={n} < M={M}: some classes have no trigger",
                      stacklevel=2)
    return SecretKey(n=int(n), M=int(M),
                     labels=tuple(i % M for i in range(n)),
                     noise_seed=int(noise_seed))


@dataclass
class FragileLossConfig:
    """Weight of the softmax-flatness penalty and the generator budget."""

    a: float = 200.0
    epochs: int = 300
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"variance weight must be >= 0, got {self.a}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def variance_regularizer(probs):
    """Mean over samples of the population variance of each softmax row."""
    return T.mean_all(T.variance(probs))


def fragile_loss(probs, key, a):
    """cross_entropy(P, key labels) + a * variance_regularizer(P)."""
    if probs.data.shape[1] != key.M:
        raise ShapeError(
            f"P has {probs.data.shape[1]} classes but key expects {key.M}")
    ce = T.cross_entropy(probs, list(key.labels))
    return T.add(ce, T.mul(T.as_tensor(a), variance_regularizer(probs)))


@contextmanager
def frozen(model):
    """Temporarily drop requires_grad on all of a model's parameters."""
    params = model.params()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


def train_generator(generator, classifier, key, config, loss_mode="full"):
    """Optimize the generator against the frozen classifier.

    loss_mode "full" uses cross-entropy-to-key plus a*Var(P) (a=0 reduces it
    to the plain cross-entropy arm); "var_only" drops the key term and no
    convergence is required.  The classifier is query-only: its parameter
    hash is asserted unchanged.

    Returns (generator, loss_history); raises ConvergenceError when the
    trigger labels still disagree with the key after the full epoch budget.
    """
    if loss_mode not in ("full", "var_only"):
        raise ValueError(f"unknown loss_mode {loss_mode!r}")
    hash_before = parameter_hash(classifier)
    opt = make_optimizer(config.optimizer, generator.params(), config.lr,
                         momentum=config.momentum)
    history = []
    with frozen(classifier):
        for _ in range(config.epochs):
            z = key.noise()  # fixed by the key seed, never resampled
            with T.Tape() as tape:
                images = generator.forward(T.Tensor(z))
                probs = T.softmax(classifier.forward(images))
                if loss_mode == "full":
                    loss = fragile_loss(probs, key, config.a)
                else:
                    loss = T.mul(T.as_tensor(config.a),
                                 variance_regularizer(probs))
            T.backward(loss, tape)
            opt.step()
            opt.zero_grad()
            history.append(loss.item())

    if parameter_hash(classifier) != hash_before:
        raise ContractError("classifier parameters changed during watermarking")

    preds = classifier.predict(generator.generate(key.noise()))
    matches = int((preds == np.asarray(key.labels)).sum())
    acc = Fraction(matches, key.n)
    generator.metadata.update({
        "a": config.a, "epochs": config.epochs, "loss_mode": loss_mode,
        "optimizer": config.optimizer, "lr": config.lr,
        "classifier_hash": hash_before, "loss_tail": history[-10:],
        "final_acc_tri": [acc.numerator, acc.denominator],
    })
    if loss_mode == "full" and acc != 1:
        raise ConvergenceError(acc, history[-10:])
    return generator, history


@dataclass
class TriggerSet:
    """The exported fragile images, bundled with the key and provenance."""

    images: np.ndarray  # [n, C, H, W] float32
    key: SecretKey
    labels: np.ndarray  # expected labels for verification
    provenance: dict = field(default_factory=dict)
    digest: str = ""

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != self.key.n:
            raise ShapeError(
                f"{len(self.images)} images for a key of n={self.key.n}")
        if len(self.labels) != self.key.n:
            raise ShapeError(
                f"{len(self.labels)} labels for a key of n={self.key.n}")
        if not self.digest:
            self.digest = payload_digest(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]


def payload_digest(images):
    return hashlib.sha256(
        np.ascontiguousarray(images, dtype="<f4").tobytes()).hexdigest()


def materialize_triggers(generator, key, labels=None):
    """Freeze G(z_i) into a TriggerSet; bit-identical for the same (G, key).

    labels defaults to the key schedule (valid after a converged "full"
    training run); ablation arms pass the classifier's predicted labels
    instead.
    """
    images = generator.generate(key.noise())
    provenance = {
        k: generator.metadata.get(k)
        for k in ("classifier_hash", "a", "epochs", "loss_mode", "loss_tail")
    }
    return TriggerSet(
        images=images, key=key,
        labels=np.asarray(key.labels if labels is None else labels,
                          dtype=np.int64),
        provenance=provenance)


@dataclass
class VerificationReport:
    """Per-trigger predictions, the exact AccTri fraction, and the verdict."""

    predicted: np.ndarray
    expected: np.ndarray
    acc_tri: Fraction
    intact: bool
    classifier_hash: str
    n: int
    matches: int = 0

    def to_dict(self):
        return {
            "acc_tri": float(self.acc_tri),
            "acc_tri_exact": [self.acc_tri.numerator, self.acc_tri.denominator],
            "intact": self.intact,
            "verdict": "intact" if self.intact else "modified",
            "n": self.n,
            "matches": self.matches,
            "classifier_hash": self.classifier_hash,
            "predicted": self.predicted.tolist(),
            "expected": self.expected.tolist(),
        }


def acc_tri(classifier, trigger_set):
    """Fraction of triggers whose predicted label matches the expected one.

    Exact rational arithmetic; the verdict is intact iff AccTri == 1.  The
    classifier is read-only: its parameter hash is asserted unchanged.
    """
    if trigger_set.image_shape != tuple(classifier.input_shape):
        raise ShapeError(
            f"trigger shape {trigger_set.image_shape} != classifier input "
            f"{tuple(classifier.input_shape)}")
    hash_before = parameter_hash(classifier)
    preds = classifier.predict(trigger_set.images)
    if parameter_hash(classifier) != hash_before:
        raise ContractError("classifier parameters changed during verification")
    matches = int((preds == trigger_set.labels).sum())
    acc = Fraction(matches, trigger_set.key.n)
    return VerificationReport(
        predicted=preds, expected=trigger_set.labels.copy(), acc_tri=acc,
        intact=(acc == 1), classifier_hash=hash_before, n=trigger_set.key.n,
        matches=matches)


# ---------------------------------------------------------------------------
# trigger-set container: u32 manifest length | manifest JSON | raw f32 LE
# payload | trailing 32-byte SHA-256 of everything preceding


def save_triggers(trigger_set, path, created_at="", extra=None):
    manifest = {
        "version": TRIGGER_MAGIC_VERSION,
        "n": trigger_set.key.n,
        "M": trigger_set.key.M,
        "noise_seed": trigger_set.key.noise_seed,
        "image_shape": list(trigger_set.image_shape),
        "a": trigger_set.provenance.get("a"),
        "epochs": trigger_set.provenance.get("epochs"),
        "classifier_hash": trigger_set.provenance.get("classifier_hash"),
        "created_at": created_at,
        "payload_digest": trigger_set.digest,
        "labels": trigger_set.labels.tolist(),
        "key_labels": list(trigger_set.key.labels),
        "provenance": trigger_set.provenance,
    }
    if extra:
        manifest.update(extra)
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    payload = np.ascontiguousarray(trigger_set.images, dtype="<f4").tobytes()
    body = struct.pack("<I", len(mbytes)) + mbytes + payload
    blob = body + hashlib.sha256(body).digest()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return path


def load_triggers(path):
    """Integrity-check and parse a trigger-set file."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 + 32:
        raise TriggerTamperError(f"{len(buf)} bytes is below the minimum size")
    if hashlib.sha256(buf[:-32]).digest() != buf[-32:]:
        raise TriggerTamperError("trigger file digest mismatch (corrupt or tampered)")
    mlen = struct.unpack("<I", buf[:4])[0]
    manifest = json.loads(buf[4:4 + mlen].decode())
    if manifest.get("version") != TRIGGER_MAGIC_VERSION:
        raise TriggerTamperError(f"unsupported trigger file version "
                                 f"{manifest.get('version')}")
    shape = (manifest["n"], *manifest["image_shape"])
    images = np.frombuffer(buf[4 + mlen:-32], dtype="<f4").reshape(shape)
    images = np.ascontiguousarray(images, dtype=np.float32)
    if payload_digest(images) != manifest["payload_digest"]:
        raise TriggerTamperError("payload digest disagrees with manifest")
    key = SecretKey(n=manifest["n"], M=manifest["M"],
                    labels=tuple(manifest["key_labels"]),
                    noise_seed=manifest["noise_seed"])
    ts = TriggerSet(images=images, key=key,
                    labels=np.asarray(manifest["labels"], dtype=np.int64),
                    provenance=manifest.get("provenance", {}),
                    digest=manifest["payload_digest"])
    return ts, manifest
