"""Layer primitives.  Parameter shapes are fully determined by hyperparameters."""

import numpy as np

from . import tensor as T


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Layer:
    kind = "base"

    def params(self):
        """[(name, Tensor)] in fixed order."""
        return []

    def forward(self, x):
        raise NotImplementedError

    def hyperparams(self):
        return {}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, rng=None):
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        rng = rng or np.random.default_rng(0)
        self.weight = T.Tensor(
            _kaiming_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k),
            requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        y = T.conv2d(x, self.weight, self.stride, self.padding)
        return T.add(y, T.reshape(self.bias, (1, self.out_ch, 1, 1)))

    def hyperparams(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "k": self.k,
                "stride": self.stride, "padding": self.padding}


class ConvTranspose2d(Layer):
    kind = "conv_transpose2d"

    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, rng=None):
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        rng = rng or np.random.default_rng(0)
        self.weight = T.Tensor(
            _kaiming_uniform(rng, (in_ch, out_ch, k, k), in_ch * k * k),
            requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        y = T.conv_transpose2d(x, self.weight, self.stride, self.padding)
        return T.add(y, T.reshape(self.bias, (1, self.out_ch, 1, 1)))

    def hyperparams(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "k": self.k,
                "stride": self.stride, "padding": self.padding}


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features, out_features, rng=None):
        self.in_features, self.out_features = in_features, out_features
        rng = rng or np.random.default_rng(0)
        self.weight = T.Tensor(
            _kaiming_uniform(rng, (in_features, out_features), in_features),
            requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_features, dtype=np.float32),
                             requires_grad=True)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)

    def hyperparams(self):
        return {"in_features": self.in_features, "out_features": self.out_features}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return T.relu(x)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x):
        return T.tanh(x)


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, k=2):
        self.k = k

    def forward(self, x):
        return T.max_pool2d(x, self.k)

    def hyperparams(self):
        return {"k": self.k}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        n = x.data.shape[0]
        return T.reshape(x, (n, -1))


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, target):
        self.target = tuple(target)  # per-sample shape, batch dim implied

    def forward(self, x):
        n = x.data.shape[0]
        return T.reshape(x, (n, *self.target))

    def hyperparams(self):
        return {"target": list(self.target)}
