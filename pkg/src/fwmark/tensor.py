"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is a Wengert list: while a ``Tape`` is active, every
differentiable op appends one record (output, inputs, backward rule).
``backward`` replays the records in reverse order and accumulates
gradients into ``.grad`` buffers; calling it again without ``zero_grad``
adds the same contribution a second time.
"""

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError

_f32 = np.float32


class Tensor:
    """n-d float32 array, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=_f32)
        self.requires_grad = bool(requires_grad)
        self.grad = None  # np.ndarray, same shape as data, once populated

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_f32))


_as_tensor = as_tensor


class Tape:
    """Ordered record of differentiable ops executed while active."""

    def __init__(self):
        self.records = []  # (output, inputs, backward_fn)

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        assert _ACTIVE and _ACTIVE[-1] is self
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.records)


_ACTIVE: list = []


def _emit(output, inputs, backward_fn):
    """Mark output differentiable and record it on the active tape, if any."""
    if any(t.requires_grad for t in inputs):
        output.requires_grad = True
        if _ACTIVE:
            _ACTIVE[-1].records.append((output, inputs, backward_fn))
    return output


def backward(loss, tape):
    """Accumulate d(loss)/d(t) into t.grad for every tensor reachable on tape."""
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    if not any(rec[0] is loss for rec in tape.records):
        raise ContractError("loss was not recorded on this tape")

    adjoint = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for output, inputs, backward_fn in reversed(tape.records):
        g = adjoint.get(id(output))
        if g is None:
            continue  # this op does not influence the loss
        for t, gi in zip(inputs, backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            holders[key] = t
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
    for key, adj in adjoint.items():
        t = holders[key]
        if not t.requires_grad:
            continue
        t.grad = adj.copy() if t.grad is None else t.grad + adj


# ---------------------------------------------------------------------------
# elementwise ops with broadcasting


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of NumPy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    out = Tensor(a.data + b.data)
    return _emit(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape) if a.requires_grad else None,
        _unbroadcast(g, b.data.shape) if b.requires_grad else None,
    ))


def sub(a, b):
    out = Tensor(a.data - b.data)
    return _emit(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape) if a.requires_grad else None,
        _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
    ))


def mul(a, b):
    out = Tensor(a.data * b.data)
    return _emit(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
        _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
    ))


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))
    return _emit(out, (x,), lambda g: (g * (x.data > 0),))


def tanh(x):
    t = np.tanh(x.data)
    out = Tensor(t)
    return _emit(out, (x,), lambda g: (g * (1.0 - t * t),))


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    return _emit(out, (x,), lambda g: (g.reshape(x.data.shape),))


def sum_all(x):
    out = Tensor(x.data.sum(dtype=_f32))
    return _emit(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def mean_all(x):
    n = x.data.size
    out = Tensor(x.data.sum(dtype=np.float64) / n)
    return _emit(out, (x,), lambda g: (
        np.broadcast_to(g / _f32(n), x.data.shape).copy(),))


def variance(x):
    """Population variance along the last axis; shape [..., k] -> [...]."""
    k = x.data.shape[-1]
    m = x.data.mean(axis=-1, keepdims=True, dtype=np.float64).astype(_f32)
    d = x.data - m
    out = Tensor((d * d).mean(axis=-1, dtype=np.float64))
    return _emit(out, (x,), lambda g: (g[..., None] * (2.0 / _f32(k)) * d,))


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    return _emit(out, (a, b), lambda g: (
        g @ b.data.T if a.requires_grad else None,
        a.data.T @ g if b.requires_grad else None,
    ))


def softmax(logits):
    """Row softmax over [N, k] with max-subtraction for stability."""
    if logits.data.ndim != 2 or logits.data.shape[1] < 2:
        raise ShapeError(f"softmax expects [N, k>=2], got {logits.data.shape}")
    if not np.isfinite(logits.data).all():
        raise NumericError("softmax input contains NaN or Inf")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = (e / e.sum(axis=1, keepdims=True, dtype=np.float64)).astype(_f32)
    out = Tensor(p)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _emit(out, (logits,), bwd)


_LOG_CLAMP = 1e-12  # avoids -inf on confidently wrong predictions


def cross_entropy(probs, labels):
    """Mean over the batch of -ln(p[label]); probs are post-softmax rows."""
    p = probs.data
    n, k = p.shape
    labels = np.asarray(labels)
    if len(labels) != n:
        raise ShapeError(f"{len(labels)} labels for {n} rows")
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(f"label out of range [0, {k})")
    picked = p[np.arange(n), labels]
    clamped = np.maximum(picked, _LOG_CLAMP)
    out = Tensor(-np.log(clamped, dtype=np.float64).mean())

    def bwd(g):
        dp = np.zeros_like(p)
        live = picked >= _LOG_CLAMP  # clamp kills the gradient below it
        dp[np.arange(n), labels] = np.where(live, -1.0 / (n * clamped), 0.0)
        return (dp * g,)

    return _emit(out, (probs,), bwd)


# ---------------------------------------------------------------------------
# spatial ops (conv kernels come from the selected backend)


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of x: [N,C,H,W] with w: [F,C,kh,kw]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d operands, got {x.data.shape} and {w.data.shape}")
    y = kernels.conv2d_forward(x.data, w.data, stride, padding)
    out = Tensor(y)
    h, wd = x.data.shape[2:]
    kh, kw = w.data.shape[2:]

    def bwd(g):
        return (
            kernels.conv2d_backward_input(g, w.data, stride, padding, h, wd)
            if x.requires_grad else None,
            kernels.conv2d_backward_weight(x.data, g, stride, padding, kh, kw)
            if w.requires_grad else None,
        )

    return _emit(out, (x, w), bwd)


def conv_transpose2d(x, w, stride=1, padding=0):
    """Transposed convolution (adjoint of conv2d) for upsampling.

    x: [N,Cin,H,W], w: [Cin,Cout,kh,kw] -> [N,Cout,(H-1)*stride-2p+kh, ...].
    Forward is conv2d's input-gradient, so the three conv kernels are reused.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d expects 4-d operands, got {x.data.shape} and {w.data.shape}")
    cin, cout, kh, kw = w.data.shape
    if x.data.shape[1] != cin:
        raise ShapeError(f"input channels {x.data.shape[1]} != kernel channels {cin}")
    h, wd = x.data.shape[2:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"degenerate output size {ho}x{wo}")
    y = kernels.conv2d_backward_input(x.data, w.data, stride, padding, ho, wo)
    out = Tensor(y)

    def bwd(g):
        return (
            kernels.conv2d_forward(g, w.data, stride, padding)
            if x.requires_grad else None,
            kernels.conv2d_backward_weight(g, x.data, stride, padding, kh, kw)
            if w.requires_grad else None,
        )

    return _emit(out, (x, w), bwd)


def max_pool2d(x, k):
    """Non-overlapping k x k max pooling (stride == k); H, W divisible by k."""
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"pool size {k} does not divide input {h}x{w}")
    ho, wo = h // k, w // k
    win = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)  # first max wins on ties
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0])

    def bwd(g):
        dwin = np.zeros((n, c, ho, wo, k * k), dtype=_f32)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(dx.reshape(n, c, h, w)),)

    return _emit(out, (x,), bwd)


# ---------------------------------------------------------------------------


def grad_check(f, x, eps=1e-3):
    """Max relative disagreement between taped and central-difference grads.

    f must be a deterministic scalar-valued tensor function.  Relative error
    uses |analytic - numeric| / (|analytic| + |numeric| + eps), so a backward
    rule that is off by a factor of two reports roughly 1/3.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    if out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    backward(out, tape)
    analytic = probe.grad.astype(np.float64)

    flat = probe.data.reshape(-1)
    numeric = np.empty(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + _f32(eps)
        fp = float(f(Tensor(probe.data)).data)
        flat[i] = orig - _f32(eps)
        fm = float(f(Tensor(probe.data)).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    numeric = numeric.reshape(analytic.shape)

    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + eps)
    return float(rel.max())
