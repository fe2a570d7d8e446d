"""Parameter update rules: SGD with momentum and bias-corrected Adam."""

import numpy as np

from .errors import ContractError


class SGD:
    """v <- momentum*v + g;  p <- p - lr*v."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        lr, mom = np.float32(self.lr), np.float32(self.momentum)
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                raise ContractError("sgd_step requires populated grads")
            v *= mom
            v += p.grad
            p.data -= lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    """Standard bias-corrected Adam."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        lr, eps = np.float32(self.lr), np.float32(self.eps)
        c1 = np.float32(1.0 - self.beta1 ** t)
        c2 = np.float32(1.0 - self.beta2 ** t)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ContractError("adam_step requires populated grads")
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def make_optimizer(name, params, lr, momentum=0.9):
    if name == "sgd":
        return SGD(params, lr, momentum=momentum)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
