"""Dataset ingestion, normalization, batching, and the synthetic corpus.

Images are float32 [N, C, H, W] normalized to [-1, 1] (the generator's tanh
range, so triggers and data share a domain).  The synthetic blob corpus lets
the whole pipeline run with zero downloads.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [-1, 1]
    labels: np.ndarray  # [N] int64
    M: int
    name: str = "dataset"
    split: str = "all"

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be [N,C,H,W], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DataFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.M):
            raise DataFormatError(f"labels outside [0, {self.M})")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]


class Batcher:
    """Seed-deterministic shuffled batches; the final partial batch is kept."""

    def __init__(self, dataset, batch_size, seed=0):
        self.dataset = dataset
        self.batch_size = int(batch_size)
        self.rng = np.random.default_rng(np.random.PCG64(seed))
        self.epoch = 0

    def batches(self):
        """One epoch: every index exactly once, in a fresh permutation."""
        self.epoch += 1
        order = self.rng.permutation(len(self.dataset))
        for lo in range(0, len(order), self.batch_size):
            idx = order[lo:lo + self.batch_size]
            yield self.dataset.images[idx], self.dataset.labels[idx]


def normalize_u8(pixels):
    """uint8 [0,255] -> float32 [-1,1]; 0 maps to -1.0 and 255 to +1.0."""
    return (pixels.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def denormalize(images):
    """Inverse of normalize_u8, rounded back to uint8."""
    x = (images.astype(np.float32) + 1.0) * np.float32(127.5)
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _read_idx(path, expected_magic, what):
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 8:
        raise DataFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad magic 0x{magic:08x} for {what}, expected 0x{expected_magic:08x}")
    if expected_magic == IDX_IMAGES_MAGIC:
        if len(buf) < 16:
            raise DataFormatError(f"{path}: truncated dimension header")
        rows, cols = struct.unpack(">II", buf[8:16])
        payload = buf[16:]
        if len(payload) != count * rows * cols:
            raise DataFormatError(
                f"{path}: payload holds {len(payload)} bytes, "
                f"expected {count * rows * cols}")
        return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    payload = buf[8:]
    if len(payload) != count:
        raise DataFormatError(
            f"{path}: payload holds {len(payload)} labels, expected {count}")
    return np.frombuffer(payload, dtype=np.uint8)


def load_idx(images_path, labels_path, name="idx", split="all"):
    """Parse an IDX image/label file pair into a normalized Dataset."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if len(images) != len(labels):
        raise DataFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels")
    m = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(normalize_u8(images)[:, None, :, :], labels.astype(np.int64),
                   M=max(m, 2), name=name, split=split)


def _box_blur(img, radius):
    """Mean filter over a (2r+1)^2 window with edge padding; img: [..., H, W]."""
    r = radius
    padded = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)], mode="edge")
    h, w = img.shape[-2:]
    out = np.zeros_like(img, dtype=np.float32)
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            out += padded[..., dy:dy + h, dx:dx + w]
    return out / np.float32((2 * r + 1) ** 2)


def synth_blobs(n_classes, per_class, shape, seed):
    """Synthetic corpus: per-class smoothed random template + per-sample noise.

    Linearly separable enough that the `tiny` classifier exceeds 95% test
    accuracy within a few epochs.
    """
    if n_classes < 2:
        raise DataFormatError(f"need at least 2 classes, got {n_classes}")
    c, h, w = shape
    rng = np.random.default_rng(np.random.PCG64(seed))
    # low-res random fields, upsampled and blurred into smooth templates
    low = rng.standard_normal((n_classes, c, max(h // 4, 1), max(w // 4, 1)))
    templates = np.repeat(np.repeat(low, 4, axis=-2), 4, axis=-1)[..., :h, :w]
    templates = _box_blur(templates.astype(np.float32), 2)
    peak = np.abs(templates).max(axis=(1, 2, 3), keepdims=True)
    templates = 0.85 * templates / peak

    images = np.empty((n_classes * per_class, c, h, w), dtype=np.float32)
    labels = np.empty(n_classes * per_class, dtype=np.int64)
    for cls in range(n_classes):
        noise = rng.standard_normal((per_class, c, h, w)).astype(np.float32)
        lo = cls * per_class
        images[lo:lo + per_class] = np.clip(templates[cls] + 0.35 * noise, -1.0, 1.0)
        labels[lo:lo + per_class] = cls
    return Dataset(images, labels, M=n_classes, name=f"blobs{n_classes}", split="all")


def split(dataset, fraction, seed):
    """Disjoint, union-complete, seed-deterministic (train, test) partition."""
    if not 0.0 < fraction < 1.0:
        raise DataFormatError(f"fraction must be in (0,1), got {fraction}")
    n = len(dataset)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise DataFormatError(f"degenerate split: {n_train}/{n - n_train}")
    order = np.random.default_rng(np.random.PCG64(seed)).permutation(n)
    tr, te = order[:n_train], order[n_train:]
    train_labels = dataset.labels[tr]
    for cls in range(dataset.M):
        if not (train_labels == cls).any():
            raise DataFormatError(f"split leaves class {cls} empty in train")
    mk = lambda idx, tag: Dataset(dataset.images[idx], dataset.labels[idx],
                                  M=dataset.M, name=dataset.name, split=tag)
    return mk(tr, "train"), mk(te, "test")
