"""The classifier family and the trigger generator.

The classifier family spans four plain conv-relu-pool stacks with strictly
increasing parameter counts (the size axis for the weight sweep).  The
generator maps 512-dim noise to images matching a classifier's input shape,
squashed to [-1, 1] by a final tanh.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import (Conv2d, ConvTranspose2d, Flatten, Linear, MaxPool2d,
                     ReLU, Reshape, Tanh)

NOISE_DIM = 512

# conv channel plans with the conv indices that get a 2x pool after them;
# exactly two pools per arch, so every arch ends at (H/4, W/4)
_ARCHS = {
    "tiny": {"channels": [8, 16], "pools": (0, 1)},
    "small": {"channels": [12, 12, 24, 24], "pools": (1, 3)},
    "wide": {"channels": [24, 24, 48, 48], "pools": (1, 3)},
    "deep": {"channels": [16, 16, 24, 24, 48, 48, 48, 48], "pools": (1, 3)},
}
ARCH_NAMES = tuple(_ARCHS)


class Model:
    """Ordered layers with named parameters; forward never mutates state."""

    def __init__(self, layers, descriptor, metadata=None):
        self.layers = layers
        self.descriptor = descriptor  # arch identity; hashed along with params
        self.metadata = dict(metadata or {})

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def named_params(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out.append((f"{i}.{name}", p))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def param_count(self):
        return sum(p.data.size for p in self.params())

    def set_requires_grad(self, flag, layers=None):
        for layer in (self.layers if layers is None else layers):
            for _, p in layer.params():
                p.requires_grad = flag

    def predict(self, images, batch=256):
        """Argmax labels for a [N,...] image array; ties go to the lowest class."""
        preds = []
        for lo in range(0, len(images), batch):
            logits = self.forward(T.Tensor(images[lo:lo + batch]))
            preds.append(np.argmax(logits.data, axis=1))
        return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


class ClassifierModel(Model):
    def __init__(self, layers, arch, input_shape, n_classes, last_block_index,
                 metadata=None):
        descriptor = {
            "kind": "classifier",
            "arch": arch,
            "input_shape": list(input_shape),
            "M": int(n_classes),
            "last_block_index": int(last_block_index),
        }
        super().__init__(layers, descriptor, metadata)
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.M = int(n_classes)
        self.last_block_index = int(last_block_index)

    def last_block_layers(self):
        return self.layers[self.last_block_index:]

    def frozen_layers(self):
        return self.layers[: self.last_block_index]


class GeneratorModel(Model):
    def __init__(self, layers, output_shape, metadata=None):
        descriptor = {
            "kind": "generator",
            "arch": "deconv",
            "input_shape": list(output_shape),
            "noise_dim": NOISE_DIM,
        }
        super().__init__(layers, descriptor, metadata)
        self.output_shape = tuple(output_shape)
        self.noise_dim = NOISE_DIM

    def generate(self, z, batch=256):
        """Images for noise z: [n, 512] -> float32 [n, C, H, W] in [-1, 1]."""
        chunks = []
        for lo in range(0, len(z), batch):
            chunks.append(self.forward(T.Tensor(z[lo:lo + batch])).data)
        return np.concatenate(chunks) if chunks else np.empty(
            (0, *self.output_shape), dtype=np.float32)


def build_classifier(arch, input_shape, n_classes, seed=0):
    """One of four conv stacks with strictly increasing parameter counts."""
    if arch not in _ARCHS:
        raise ConfigError(f"unknown arch {arch!r}; expected one of {ARCH_NAMES}")
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    c, h, w = input_shape
    if h % 4 or w % 4:
        raise ConfigError(f"input H and W must be divisible by 4, got {h}x{w}")

    rng = np.random.default_rng(np.random.PCG64(seed))
    plan = _ARCHS[arch]

    layers = []
    prev = c
    last_conv_layer_index = 0
    for i, ch in enumerate(plan["channels"]):
        last_conv_layer_index = len(layers)
        layers.append(Conv2d(prev, ch, 3, stride=1, padding=1, rng=rng))
        layers.append(ReLU())
        if i in plan["pools"]:
            layers.append(MaxPool2d(2))
        prev = ch
    layers.append(Flatten())
    layers.append(Linear(prev * (h // 4) * (w // 4), n_classes, rng=rng))

    model = ClassifierModel(layers, arch, input_shape, n_classes,
                            last_block_index=last_conv_layer_index,
                            metadata={"seed": int(seed)})
    return model


def build_generator(input_shape, seed=0):
    """Noise [n,512] -> images matching `input_shape`, values in [-1, 1].

    linear -> reshape to a (H/4, W/4) seed grid -> two stride-2 transposed
    conv blocks with relu -> 3x3 conv + tanh.
    """
    c, h, w = input_shape
    if h % 4 or w % 4:
        raise ConfigError(f"generator needs H, W divisible by 4, got {h}x{w}")
    h0, w0 = h // 4, w // 4
    rng = np.random.default_rng(np.random.PCG64(seed))
    layers = [
        Linear(NOISE_DIM, 64 * h0 * w0, rng=rng),
        Reshape((64, h0, w0)),
        ConvTranspose2d(64, 16, 4, stride=2, padding=1, rng=rng),
        ReLU(),
        ConvTranspose2d(16, 8, 4, stride=2, padding=1, rng=rng),
        ReLU(),
        Conv2d(8, c, 3, stride=1, padding=1, rng=rng),
        Tanh(),
    ]
    model = GeneratorModel(layers, input_shape, metadata={"seed": int(seed)})
    probe = model.forward(T.Tensor(np.zeros((1, NOISE_DIM), dtype=np.float32)))
    if probe.data.shape[1:] != tuple(input_shape):
        raise ConfigError(
            f"generator output {probe.data.shape[1:]} != classifier input {input_shape}")
    return model
