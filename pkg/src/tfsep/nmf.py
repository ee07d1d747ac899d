"""NMF and convolutive NMF (NMFD) with Euclidean multiplicative updates.

Both factorisations minimise ||A - A_hat||_F^2 with the classic
numerator/denominator update rules; a small constant in each denominator
guards against division by zero.  Zero-initialised entries stay zero, a
property the multiplicative form gives for free.

The convolutive model reconstructs

    A_hat[f, n] = sum_j sum_m w[j, f, m] * h[j, n - m]

(taps reaching before n=0 see zeros).  Reconstruction and both update
correlations are expressed through the shared conv1d kernels, so NMFD with
one tap runs the exact same arithmetic shape as plain NMF.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .checkpoint import load_arrays, save_arrays

EPS_DIV = 1e-12


@dataclass
class NmfModel:
    w: np.ndarray  # (f_bins, j_parts)
    h: np.ndarray  # (j_parts, n_frames)

    def reconstruct(self) -> np.ndarray:
        return self.w @ self.h


@dataclass
class NmfdModel:
    w: np.ndarray  # (j_parts, f_bins, m_taps)
    h: np.ndarray  # (j_parts, n_frames)

    def reconstruct(self) -> np.ndarray:
        return nmfd_reconstruct(self.w, self.h)


def _as_nonneg(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{what} must be 2-d, got shape {a.shape}")
    if a.size and a.min() < 0:
        raise ValueError(f"{what} must be non-negative")
    return a


def _objective(a: np.ndarray, a_hat: np.ndarray) -> float:
    d = a - a_hat
    return float(np.sum(d * d))


def _flip_wt(w: np.ndarray) -> np.ndarray:
    """(j, f, m) <-> (f, j, m) with taps reversed; its own inverse."""
    return np.ascontiguousarray(np.flip(np.transpose(w, (1, 0, 2)), axis=2))


def nmfd_reconstruct(w: np.ndarray, h: np.ndarray) -> np.ndarray:
    m_taps = w.shape[2]
    return kernels.conv1d_fwd(h[None], _flip_wt(w), m_taps - 1, 0)[0]


def nmf_fit(a: np.ndarray, j_parts: int, n_iters: int, seed: int = 0,
            init_w: np.ndarray | None = None, init_h: np.ndarray | None = None
            ) -> tuple[NmfModel, list[float]]:
    """Factor a >= 0 as w @ h.  Returns the model and the objective trace,
    one entry before iterating plus one per iteration."""
    a = _as_nonneg(a, "input matrix")
    f_bins, n_frames = a.shape
    if j_parts < 1:
        raise ValueError(f"need at least one part, got {j_parts}")
    if n_iters < 0:
        raise ValueError("iteration count must be non-negative")
    w, h = _init_factors(a, (f_bins, j_parts), (j_parts, n_frames), seed, init_w, init_h,
                         lambda w_, h_: w_ @ h_)
    trace = [_objective(a, w @ h)]
    for _ in range(n_iters):
        h *= (w.T @ a) / (w.T @ (w @ h) + EPS_DIV)
        w *= (a @ h.T) / (w @ (h @ h.T) + EPS_DIV)
        trace.append(_objective(a, w @ h))
    return NmfModel(w=w, h=h), trace


def nmfd_fit(a: np.ndarray, j_parts: int, m_taps: int, n_iters: int, seed: int = 0,
             init_w: np.ndarray | None = None, init_h: np.ndarray | None = None
             ) -> tuple[NmfdModel, list[float]]:
    """Convolutive factorisation of a >= 0 into per-part spectro-temporal
    templates w (j, f, m) and activations h (j, n)."""
    a = _as_nonneg(a, "input matrix")
    f_bins, n_frames = a.shape
    if j_parts < 1:
        raise ValueError(f"need at least one part, got {j_parts}")
    if not (1 <= m_taps <= n_frames):
        raise ValueError(f"tap count must be in [1, {n_frames}], got {m_taps}")
    w, h = _init_factors(a, (j_parts, f_bins, m_taps), (j_parts, n_frames), seed,
                         init_w, init_h, nmfd_reconstruct)
    pad = m_taps - 1
    trace = [_objective(a, nmfd_reconstruct(w, h))]
    for _ in range(n_iters):
        wt = _flip_wt(w)
        a_hat = kernels.conv1d_fwd(h[None], wt, pad, 0)
        num_h = kernels.conv1d_gx(a[None], wt, pad, n_frames)[0]
        den_h = kernels.conv1d_gx(a_hat, wt, pad, n_frames)[0]
        h *= num_h / (den_h + EPS_DIV)
        a_hat = kernels.conv1d_fwd(h[None], wt, pad, 0)
        num_w = _flip_wt(kernels.conv1d_gw(a[None], h[None], pad, m_taps))
        den_w = _flip_wt(kernels.conv1d_gw(a_hat, h[None], pad, m_taps))
        w *= num_w / (den_w + EPS_DIV)
        trace.append(_objective(a, nmfd_reconstruct(w, h)))
    return NmfdModel(w=w, h=h), trace


def _init_factors(a, w_shape, h_shape, seed, init_w, init_h, reconstruct):
    if init_w is not None:
        w = np.array(init_w, dtype=np.float64)
        if w.shape != w_shape:
            raise ValueError(f"init_w shape {w.shape}, expected {w_shape}")
        if w.min() < 0:
            raise ValueError("init_w must be non-negative")
    else:
        w = None
    if init_h is not None:
        h = np.array(init_h, dtype=np.float64)
        if h.shape != h_shape:
            raise ValueError(f"init_h shape {h.shape}, expected {h_shape}")
        if h.min() < 0:
            raise ValueError("init_h must be non-negative")
    else:
        h = None
    if w is None or h is None:
        rng = np.random.default_rng(seed)
        if w is None:
            w = rng.uniform(0.1, 1.0, size=w_shape)
        if h is None:
            h = rng.uniform(0.1, 1.0, size=h_shape)
        # scale so the initial reconstruction is at the data's level
        mean_hat = float(np.mean(reconstruct(w, h)))
        mean_a = float(np.mean(a))
        if mean_hat > 0 and mean_a > 0:
            s = np.sqrt(mean_a / mean_hat)
            w *= s
            h *= s
    return w, h


def wiener_masks_from_parts(parts: list[np.ndarray], mix: np.ndarray) -> list[np.ndarray]:
    """Per-source estimates (part_i / sum(parts)) * mix.

    The soft masks part_i / sum(parts) sum to ~1 wherever the parts carry
    any energy and are 0 where all parts are 0; mix may be complex (phase
    passes through untouched).
    """
    if not parts:
        raise ValueError("need at least one part")
    mix = np.asarray(mix)
    for p in parts:
        if p.shape != mix.shape:
            raise ValueError(f"part shape {p.shape} vs mix {mix.shape}")
        if p.min() < 0:
            raise ValueError("parts must be non-negative")
    denom = np.sum(parts, axis=0) + EPS_DIV
    return [(p / denom) * mix for p in parts]


def save_model(path: str | Path, model: NmfModel | NmfdModel) -> None:
    kind = "nmfd" if isinstance(model, NmfdModel) else "nmf"
    save_arrays(path, {"w": model.w, "h": model.h}, meta={"kind": kind})


def load_model(path: str | Path) -> NmfModel | NmfdModel:
    arrays, meta = load_arrays(path)
    if meta.get("kind") == "nmfd":
        return NmfdModel(w=arrays["w"], h=arrays["h"])
    if meta.get("kind") == "nmf":
        return NmfModel(w=arrays["w"], h=arrays["h"])
    raise ValueError(f"{path}: not an nmf/nmfd model (kind={meta.get('kind')!r})")


def write_trace_csv(path: str | Path, trace: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, val in enumerate(trace):
            writer.writerow([i, "%.17g" % val])
