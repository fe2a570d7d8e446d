"""Classifier training and evaluation loops."""

from fractions import Fraction

import numpy as np

from . import tensor as T
from .data import Batcher
from .optim import make_optimizer


def evaluate(model, dataset, batch=256):
    """Deterministic test accuracy; returns (accuracy, matches, n)."""
    preds = model.predict(dataset.images, batch=batch)
    matches = int((preds == dataset.labels).sum())
    return matches / len(dataset), matches, len(dataset)


def train_classifier(model, train_ds, epochs, lr=0.01, optimizer="sgd",
                     momentum=0.9, batch_size=64, seed=0, test_ds=None,
                     log=None):
    """Cross-entropy training; returns a per-epoch metrics list."""
    opt = make_optimizer(optimizer, model.params(), lr, momentum=momentum)
    batcher = Batcher(train_ds, batch_size, seed=seed)
    metrics = []
    for epoch in range(1, epochs + 1):
        losses = []
        for images, labels in batcher.batches():
            with T.Tape() as tape:
                probs = T.softmax(model.forward(T.Tensor(images)))
                loss = T.cross_entropy(probs, labels)
            T.backward(loss, tape)
            opt.step()
            opt.zero_grad()
            losses.append(loss.item())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if test_ds is not None:
            record["test_acc"] = evaluate(model, test_ds)[0]
        metrics.append(record)
        if log:
            log(record)
    model.metadata.update({
        "epochs": epochs, "optimizer": optimizer, "lr": lr,
        "final_metrics": metrics[-1] if metrics else {},
    })
    return metrics


def exact_accuracy(model, dataset, batch=256):
    """Accuracy as an exact fraction (for reports that compare to the digit)."""
    preds = model.predict(dataset.images, batch=batch)
    matches = int((preds == dataset.labels).sum())
    return Fraction(matches, len(dataset))
