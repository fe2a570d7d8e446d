"""Pure-NumPy convolution kernels (fallback backend).

Convolutions use the cross-correlation convention (no kernel flip).
All three kernels take float32 arrays and return float32 arrays; the
contraction goes through BLAS via ``tensordot`` on strided window views.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _out_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0:
        raise ShapeError(f"kernel size {k} exceeds padded input {size + 2 * padding}")
    if span % stride != 0:
        raise ShapeError(
            f"non-integral output size: ({size} + 2*{padding} - {k}) / {stride}"
        )
    return span // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp, kh, kw, stride):
    # [N, C, Ho, Wo, kh, kw] view, no copy
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, padding):
    """x: [N,C,H,W], w: [F,C,kh,kw] -> y: [N,F,Ho,Wo]."""
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"input channels {c} != kernel channels {cw}")
    _out_size(h, kh, stride, padding)
    _out_size(wd, kw, stride, padding)
    win = _windows(_pad(x, padding), kh, kw, stride)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [N,Ho,Wo,F]
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward_input(dy, w, stride, padding, h, wd):
    """Gradient w.r.t. x.  dy: [N,F,Ho,Wo], w: [F,C,kh,kw] -> dx: [N,C,H,W]."""
    n, f, ho, wo = dy.shape
    fw, c, kh, kw = w.shape
    if f != fw:
        raise ShapeError(f"grad channels {f} != kernel count {fw}")
    if _out_size(h, kh, stride, padding) != ho or _out_size(wd, kw, stride, padding) != wo:
        raise ShapeError(f"gradient spatial size {ho}x{wo} does not match "
                         f"a {h}x{wd} input")
    # g[n, c, i, j, oh, ow] = sum_f dy[n,f,oh,ow] * w[f,c,i,j]
    g = np.tensordot(w, dy, axes=([0], [1]))  # [C,kh,kw,N,Ho,Wo]
    g = g.transpose(3, 0, 1, 2, 4, 5)
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride,
                j : j + stride * wo : stride] += g[:, :, i, j]
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxp)


def conv2d_backward_weight(x, dy, stride, padding, kh, kw):
    """Gradient w.r.t. w.  x: [N,C,H,W], dy: [N,F,Ho,Wo] -> dw: [F,C,kh,kw]."""
    n, f, ho, wo = dy.shape
    if x.shape[0] != n:
        raise ShapeError(f"batch mismatch: {x.shape[0]} inputs vs {n} grads")
    if (_out_size(x.shape[2], kh, stride, padding) != ho
            or _out_size(x.shape[3], kw, stride, padding) != wo):
        raise ShapeError(f"gradient spatial size {ho}x{wo} does not match "
                         f"a {x.shape[2]}x{x.shape[3]} input")
    win = _windows(_pad(x, padding), kh, kw, stride)  # [N,C,Ho,Wo,kh,kw]
    # dw[f,c,i,j] = sum_{n,oh,ow} dy[n,f,oh,ow] * win[n,c,oh,ow,i,j]
    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(dw)
