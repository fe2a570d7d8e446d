# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (the training pipeline's hot loops).

Same contracts as fwmark.kernels.numpy_ref; selected at import when built.
Patch gather/scatter (im2col / col2im) runs as compiled loops; the
contraction itself is a single BLAS GEMM via numpy.
"""

import numpy as np

from fwmark.errors import ShapeError


cdef inline Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k,
                                 Py_ssize_t stride, Py_ssize_t padding) except -1:
    cdef Py_ssize_t span = size + 2 * padding - k
    if span < 0:
        raise ShapeError(f"kernel size {k} exceeds padded input {size + 2 * padding}")
    if span % stride != 0:
        raise ShapeError(
            f"non-integral output size: ({size} + 2*{padding} - {k}) / {stride}")
    return span // stride + 1


cdef _im2col(const float[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
             Py_ssize_t stride, Py_ssize_t padding,
             Py_ssize_t ho, Py_ssize_t wo):
    """[N,C,H,W] -> [C*kh*kw, N*ho*wo]; out-of-bounds taps read as zero."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    out = np.zeros((c * kh * kw, n * ho * wo), dtype=np.float32)
    cdef float[:, ::1] cols = out
    cdef Py_ssize_t ci, i, j, ni, oh, ow, ih, iw, row, pos
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    pos = 0
                    for ni in range(n):
                        for oh in range(ho):
                            ih = oh * stride + i - padding
                            if ih < 0 or ih >= h:
                                pos += wo
                                continue
                            for ow in range(wo):
                                iw = ow * stride + j - padding
                                if 0 <= iw < wd:
                                    cols[row, pos] = x[ni, ci, ih, iw]
                                pos += 1
    return out


cdef _col2im(const float[:, ::1] cols, Py_ssize_t n, Py_ssize_t c,
             Py_ssize_t h, Py_ssize_t wd, Py_ssize_t kh, Py_ssize_t kw,
             Py_ssize_t stride, Py_ssize_t padding,
             Py_ssize_t ho, Py_ssize_t wo):
    """Adjoint of _im2col: scatter-add [C*kh*kw, N*ho*wo] back to [N,C,H,W]."""
    out = np.zeros((n, c, h, wd), dtype=np.float32)
    cdef float[:, :, :, ::1] dx = out
    cdef Py_ssize_t ci, i, j, ni, oh, ow, ih, iw, row, pos
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    pos = 0
                    for ni in range(n):
                        for oh in range(ho):
                            ih = oh * stride + i - padding
                            if ih < 0 or ih >= h:
                                pos += wo
                                continue
                            for ow in range(wo):
                                iw = ow * stride + j - padding
                                if 0 <= iw < wd:
                                    dx[ni, ci, ih, iw] += cols[row, pos]
                                pos += 1
    return out


def conv2d_forward(x, w, Py_ssize_t stride, Py_ssize_t padding):
    """x: [N,C,H,W] f32, w: [F,C,kh,kw] f32 -> y: [N,F,Ho,Wo] f32."""
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input channels {x.shape[1]} != kernel channels {w.shape[1]}")
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = _out_size(x.shape[2], kh, stride, padding)
    cdef Py_ssize_t wo = _out_size(x.shape[3], kw, stride, padding)
    cdef Py_ssize_t n = x.shape[0], f = w.shape[0]

    xv = np.ascontiguousarray(x, dtype=np.float32)
    cols = _im2col(xv, kh, kw, stride, padding, ho, wo)
    wmat = np.ascontiguousarray(w, dtype=np.float32).reshape(f, -1)
    y = wmat @ cols  # [F, N*Ho*Wo]
    return np.ascontiguousarray(
        y.reshape(f, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_backward_input(dy, w, Py_ssize_t stride, Py_ssize_t padding,
                          Py_ssize_t h, Py_ssize_t wd):
    """dy: [N,F,Ho,Wo], w: [F,C,kh,kw] -> dx: [N,C,H,W]."""
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t f = w.shape[0], c = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    if dy.shape[1] != f:
        raise ShapeError(f"grad channels {dy.shape[1]} != kernel count {f}")
    if (_out_size(h, kh, stride, padding) != ho
            or _out_size(wd, kw, stride, padding) != wo):
        raise ShapeError(f"gradient spatial size {ho}x{wo} does not match "
                         f"a {h}x{wd} input")
    cdef Py_ssize_t n = dy.shape[0]
    gmat = np.ascontiguousarray(
        np.asarray(dy, dtype=np.float32).transpose(1, 0, 2, 3)).reshape(f, -1)
    wmat = np.ascontiguousarray(w, dtype=np.float32).reshape(f, -1)
    cols = np.ascontiguousarray(wmat.T @ gmat)  # [C*kh*kw, N*Ho*Wo]
    return _col2im(cols, n, c, h, wd, kh, kw, stride, padding, ho, wo)


def conv2d_backward_weight(x, dy, Py_ssize_t stride, Py_ssize_t padding,
                           Py_ssize_t kh, Py_ssize_t kw):
    """x: [N,C,H,W], dy: [N,F,Ho,Wo] -> dw: [F,C,kh,kw]."""
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    if x.shape[0] != dy.shape[0]:
        raise ShapeError(f"batch mismatch: {x.shape[0]} inputs vs {dy.shape[0]} grads")
    if (_out_size(x.shape[2], kh, stride, padding) != ho
            or _out_size(x.shape[3], kw, stride, padding) != wo):
        raise ShapeError(f"gradient spatial size {ho}x{wo} does not match "
                         f"a {x.shape[2]}x{x.shape[3]} input")
    cdef Py_ssize_t f = dy.shape[1], c = x.shape[1]

    xv = np.ascontiguousarray(x, dtype=np.float32)
    cols = _im2col(xv, kh, kw, stride, padding, ho, wo)
    gmat = np.ascontiguousarray(
        np.asarray(dy, dtype=np.float32).transpose(1, 0, 2, 3)).reshape(f, -1)
    dw = gmat @ cols.T  # [F, C*kh*kw]
    return np.ascontiguousarray(dw).reshape(f, c, kh, kw)
