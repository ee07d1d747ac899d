"""Numba-compiled convolution kernels.

Same contract as numpy_ref.  Loops are kept sequential and fastmath stays
off so that summation order is fixed and results are reproducible bit for
bit across runs on the same machine.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _fwd(x, w, pad_left, n_out):
    b, c_in, n_in = x.shape
    c_out, _, m_taps = w.shape
    y = np.zeros((b, c_out, n_out), dtype=np.float64)
    for ib in range(b):
        for o in range(c_out):
            for t in range(n_out):
                acc = 0.0
                for m in range(m_taps):
                    s = t + m - pad_left
                    if 0 <= s < n_in:
                        for c in range(c_in):
                            acc += w[o, c, m] * x[ib, c, s]
                y[ib, o, t] = acc
    return y


@njit(cache=True)
def _gx(g, w, pad_left, n_in):
    b, c_out, n_out = g.shape
    _, c_in, m_taps = w.shape
    gx = np.zeros((b, c_in, n_in), dtype=np.float64)
    for ib in range(b):
        for c in range(c_in):
            for s in range(n_in):
                acc = 0.0
                for m in range(m_taps):
                    t = s + pad_left - m
                    if 0 <= t < n_out:
                        for o in range(c_out):
                            acc += g[ib, o, t] * w[o, c, m]
                gx[ib, c, s] = acc
    return gx


@njit(cache=True)
def _gw(g, x, pad_left, m_taps):
    b, c_out, n_out = g.shape
    _, c_in, n_in = x.shape
    gw = np.zeros((c_out, c_in, m_taps), dtype=np.float64)
    for o in range(c_out):
        for c in range(c_in):
            for m in range(m_taps):
                acc = 0.0
                for ib in range(b):
                    for t in range(n_out):
                        s = t + m - pad_left
                        if 0 <= s < n_in:
                            acc += g[ib, o, t] * x[ib, c, s]
                gw[o, c, m] = acc
    return gw


def conv1d_fwd(x: np.ndarray, w: np.ndarray, pad_left: int, pad_right: int) -> np.ndarray:
    from .numpy_ref import _check_shapes

    _, _, _, _, m_taps, n_out = _check_shapes(x, w, pad_left, pad_right)
    return _fwd(np.ascontiguousarray(x), np.ascontiguousarray(w), pad_left, n_out)


def conv1d_gx(g: np.ndarray, w: np.ndarray, pad_left: int, n_in: int) -> np.ndarray:
    if g.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: gradient has {g.shape[1]} channels, kernel produces {w.shape[0]}")
    return _gx(np.ascontiguousarray(g), np.ascontiguousarray(w), pad_left, n_in)


def conv1d_gw(g: np.ndarray, x: np.ndarray, pad_left: int, m_taps: int) -> np.ndarray:
    if g.shape[0] != x.shape[0]:
        raise ValueError(f"batch mismatch: gradient has {g.shape[0]}, input has {x.shape[0]}")
    return _gw(np.ascontiguousarray(g), np.ascontiguousarray(x), pad_left, m_taps)
