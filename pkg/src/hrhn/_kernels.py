"""Loop kernels for the convolutional frontend.

Two implementations of every kernel live here: a pure-numpy one and a
numba ``@njit`` one. ``HRHN_KERNELS`` picks which one the rest of the
package uses (``numba`` by default when numba imports, else ``numpy``).
Both are always importable so they can be cross-checked and benchmarked.

Shapes: ``x`` is ``[N, C_in, L]``, ``w`` is ``[C_out, C_in, q]``.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------- numpy path


def conv1d_forward_np(x, w):
    q = w.shape[2]
    win = sliding_window_view(x, q, axis=2)  # [N, C_in, L_out, q]
    return np.einsum("nclj,fcj->nfl", win, w, optimize=True)


def conv1d_backward_np(x, w, gout):
    q = w.shape[2]
    l_out = gout.shape[2]
    win = sliding_window_view(x, q, axis=2)
    gw = np.einsum("nfl,nclj->fcj", gout, win, optimize=True)
    gx = np.zeros_like(x)
    for j in range(q):
        gx[:, :, j : j + l_out] += np.einsum("nfl,fc->ncl", gout, w[:, :, j], optimize=True)
    return gx, gw


def maxpool_forward_np(x, s):
    n, c, length = x.shape
    p = -(-length // s)
    pad = p * s - length
    if pad:
        x = np.concatenate([x, np.full((n, c, pad), -np.inf, dtype=x.dtype)], axis=2)
    blocks = x.reshape(n, c, p, s)
    arg = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
    idx = arg + np.arange(p) * s
    return out, idx.astype(np.int64)


def maxpool_backward_np(gout, idx, length):
    n, c, _ = gout.shape
    gx = np.zeros((n, c, length), dtype=gout.dtype)
    np.put_along_axis(gx, idx, gout, axis=2)
    return gx


# ---------------------------------------------------------------- numba path

# below this many (channel, tap) pairs a plain loop beats im2col + BLAS
DIRECT_MAX_TAPS = 8

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _im2col_nb(x, q):
        # rows are (batch, position), columns are (channel, tap)
        n, c_in, length = x.shape
        l_out = length - q + 1
        cols = np.empty((n * l_out, c_in * q), dtype=x.dtype)
        for b in range(n):
            for i in range(l_out):
                r = b * l_out + i
                for p in range(c_in):
                    for j in range(q):
                        cols[r, p * q + j] = x[b, p, i + j]
        return cols

    @_jit
    def _conv1d_forward_direct(x, w):
        n, c_in, length = x.shape
        c_out, _, q = w.shape
        l_out = length - q + 1
        out = np.zeros((n, c_out, l_out), dtype=x.dtype)
        for b in range(n):
            for f in range(c_out):
                for p in range(c_in):
                    for j in range(q):
                        k = w[f, p, j]
                        for i in range(l_out):
                            out[b, f, i] += k * x[b, p, i + j]
        return out

    @_jit
    def _conv1d_backward_direct(x, w, gout):
        n, c_in, length = x.shape
        c_out, _, q = w.shape
        l_out = gout.shape[2]
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        for b in range(n):
            for f in range(c_out):
                for p in range(c_in):
                    for j in range(q):
                        k = w[f, p, j]
                        acc = 0.0
                        for i in range(l_out):
                            g = gout[b, f, i]
                            acc += g * x[b, p, i + j]
                            gx[b, p, i + j] += k * g
                        gw[f, p, j] += acc
        return gx, gw

    @_jit
    def conv1d_forward_nb(x, w):
        n, c_in, length = x.shape
        c_out, _, q = w.shape
        if c_in * q <= DIRECT_MAX_TAPS:
            return _conv1d_forward_direct(x, w)
        l_out = length - q + 1
        cols = _im2col_nb(x, q)
        flat = np.dot(cols, np.ascontiguousarray(w.reshape(c_out, c_in * q).T))  # [n*l_out, c_out]
        out = np.empty((n, c_out, l_out), dtype=x.dtype)
        for b in range(n):
            for i in range(l_out):
                for f in range(c_out):
                    out[b, f, i] = flat[b * l_out + i, f]
        return out

    @_jit
    def conv1d_backward_nb(x, w, gout):
        n, c_in, length = x.shape
        c_out, _, q = w.shape
        if c_in * q <= DIRECT_MAX_TAPS:
            return _conv1d_backward_direct(x, w, gout)
        l_out = gout.shape[2]
        g2 = np.empty((n * l_out, c_out), dtype=gout.dtype)
        for b in range(n):
            for i in range(l_out):
                for f in range(c_out):
                    g2[b * l_out + i, f] = gout[b, f, i]
        cols = _im2col_nb(x, q)
        gw = np.dot(np.ascontiguousarray(g2.T), cols).reshape(c_out, c_in, q)
        gcols = np.dot(g2, np.ascontiguousarray(w.reshape(c_out, c_in * q)))
        gx = np.zeros_like(x)
        for b in range(n):
            for i in range(l_out):
                r = b * l_out + i
                for p in range(c_in):
                    for j in range(q):
                        gx[b, p, i + j] += gcols[r, p * q + j]
        return gx, gw

    @_jit
    def maxpool_forward_nb(x, s):
        n, c, length = x.shape
        p = (length + s - 1) // s
        out = np.empty((n, c, p), dtype=x.dtype)
        idx = np.empty((n, c, p), dtype=np.int64)
        for b in range(n):
            for f in range(c):
                for k in range(p):
                    start = k * s
                    stop = min(start + s, length)
                    best = start
                    for i in range(start + 1, stop):
                        if x[b, f, i] > x[b, f, best]:
                            best = i
                    out[b, f, k] = x[b, f, best]
                    idx[b, f, k] = best
        return out, idx

    @_jit
    def maxpool_backward_nb(gout, idx, length):
        n, c, p = gout.shape
        gx = np.zeros((n, c, length), dtype=gout.dtype)
        for b in range(n):
            for f in range(c):
                for k in range(p):
                    gx[b, f, idx[b, f, k]] += gout[b, f, k]
        return gx


def _select():
    choice = os.environ.get("HRHN_KERNELS", "numba" if HAVE_NUMBA else "numpy").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"HRHN_KERNELS must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAVE_NUMBA:
        raise ImportError("HRHN_KERNELS=numba but numba is not installed")
    return choice


BACKEND = _select()

if BACKEND == "numba":
    conv1d_forward = conv1d_forward_nb
    conv1d_backward = conv1d_backward_nb
    maxpool_forward = maxpool_forward_nb
    maxpool_backward = maxpool_backward_nb
else:
    conv1d_forward = conv1d_forward_np
    conv1d_backward = conv1d_backward_np
    maxpool_forward = maxpool_forward_np
    maxpool_backward = maxpool_backward_np
