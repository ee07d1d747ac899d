"""Pure-numpy reference implementations of the convolution kernels.

These are the fallback path when numba is unavailable or disabled via
TFSEP_BACKEND=numpy.  They are the semantic ground truth: the jit kernels
must agree with these to near machine precision on every input.

Convention (shared by both backends):

    y[b, o, t] = sum_c sum_m  w[o, c, m] * xp[b, c, t + m]

where xp is x zero-padded with `pad_left` zeros before and `pad_right`
zeros after along the last axis.  Output length is

    n_out = n_in + pad_left + pad_right - m_taps + 1

which must be positive.  This is cross-correlation; callers wanting a
true convolution flip the kernel along its last axis first.
"""

from __future__ import annotations

import numpy as np


def _check_shapes(x: np.ndarray, w: np.ndarray, pad_left: int, pad_right: int) -> tuple[int, int, int, int, int, int]:
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and kernel, got x.ndim={x.ndim}, w.ndim={w.ndim}")
    b, c_in, n_in = x.shape
    c_out, c_k, m_taps = w.shape
    if c_k != c_in:
        raise ValueError(f"channel mismatch: input has {c_in} channels, kernel expects {c_k}")
    if pad_left < 0 or pad_right < 0:
        raise ValueError(f"padding must be non-negative, got ({pad_left}, {pad_right})")
    n_out = n_in + pad_left + pad_right - m_taps + 1
    if n_out < 1:
        raise ValueError(
            f"kernel of width {m_taps} does not fit input of length {n_in} with padding ({pad_left}, {pad_right})"
        )
    return b, c_in, n_in, c_out, m_taps, n_out


def conv1d_fwd(x: np.ndarray, w: np.ndarray, pad_left: int, pad_right: int) -> np.ndarray:
    """Batched multi-channel correlation of x (b, c_in, n) with w (c_out, c_in, m)."""
    b, c_in, n_in, c_out, m_taps, n_out = _check_shapes(x, w, pad_left, pad_right)
    xp = np.zeros((b, c_in, n_in + pad_left + pad_right), dtype=np.float64)
    xp[:, :, pad_left:pad_left + n_in] = x
    y = np.zeros((b, c_out, n_out), dtype=np.float64)
    for m in range(m_taps):
        # (c_out, c_in) x (b, c_in, n_out) contracted over c_in
        y += np.tensordot(w[:, :, m], xp[:, :, m:m + n_out], axes=([1], [1])).transpose(1, 0, 2)
    return y


def conv1d_gx(g: np.ndarray, w: np.ndarray, pad_left: int, n_in: int) -> np.ndarray:
    """Gradient of conv1d_fwd w.r.t. x, given upstream gradient g (b, c_out, n_out)."""
    if g.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d_gx expects 3-d gradient and kernel, got g.ndim={g.ndim}, w.ndim={w.ndim}")
    b, c_out, n_out = g.shape
    c_ko, c_in, m_taps = w.shape
    if c_ko != c_out:
        raise ValueError(f"channel mismatch: gradient has {c_out} channels, kernel produces {c_ko}")
    n_pad = n_out + m_taps - 1
    gxp = np.zeros((b, c_in, n_pad), dtype=np.float64)
    for m in range(m_taps):
        gxp[:, :, m:m + n_out] += np.tensordot(w[:, :, m], g, axes=([0], [1])).transpose(1, 0, 2)
    return np.ascontiguousarray(gxp[:, :, pad_left:pad_left + n_in])


def conv1d_gw(g: np.ndarray, x: np.ndarray, pad_left: int, m_taps: int) -> np.ndarray:
    """Gradient of conv1d_fwd w.r.t. w, given upstream gradient g (b, c_out, n_out)."""
    if g.ndim != 3 or x.ndim != 3:
        raise ValueError(f"conv1d_gw expects 3-d gradient and input, got g.ndim={g.ndim}, x.ndim={x.ndim}")
    b, c_out, n_out = g.shape
    bx, c_in, n_in = x.shape
    if bx != b:
        raise ValueError(f"batch mismatch: gradient has {b}, input has {bx}")
    pad_right = (n_out + m_taps - 1) - n_in - pad_left
    if pad_right < 0:
        raise ValueError(f"inconsistent geometry: n_out={n_out}, m_taps={m_taps}, n_in={n_in}, pad_left={pad_left}")
    xp = np.zeros((b, c_in, n_in + pad_left + pad_right), dtype=np.float64)
    xp[:, :, pad_left:pad_left + n_in] = x
    gw = np.zeros((c_out, c_in, m_taps), dtype=np.float64)
    for m in range(m_taps):
        gw[:, :, m] = np.tensordot(g, xp[:, :, m:m + n_out], axes=([0, 2], [0, 2]))
    return gw
