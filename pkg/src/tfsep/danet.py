"""Attractor-based masking on top of the clustering embeddings.

Instead of clustering embeddings after training, each source gets an
attractor: the label-weighted mean of its bins' embeddings.  Sigmoid
similarity to the attractors yields soft masks, trained to match the true
Wiener masks under a mixture-magnitude weighting.

    a[i] = sum_k v[k] y[k, i] / (sum_k y[k, i] + 1e-8)
    m_hat[i, k] = sigmoid(a[i] . v[k])
    loss = mean over (i, f, n) of | X * (m - m_hat) |

Evaluation here keeps the oracle attractors (labels are available for the
synthetic mixtures); estimating attractors without labels is out of scope.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .dc import GatedConvConfig, GatedConvEncoder
from .signal import LabelMatrix

ATTRACTOR_EPS = 1e-8
WIENER_EPS = 1e-16


def compute_attractors(v: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    """Label-weighted embedding means, (I, D).  Rows of y that are all zero
    (silent bins) simply drop out of both numerator and denominator."""
    v = ad._lift(v)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or v.data.shape[0] != y.shape[0]:
        raise ValueError(f"embeddings {v.data.shape} and labels {y.shape} must share rows")
    num = ad.matmul(ad.transpose(ad.Tensor(y)), v)          # (I, D)
    den = y.sum(axis=0)[:, None] + ATTRACTOR_EPS            # (I, 1)
    return num / ad.Tensor(den)


def attractor_masks(v: ad.Tensor, attractors: ad.Tensor, f_bins: int) -> ad.Tensor:
    """Sigmoid similarity masks, (I, F, N), from embeddings in vectorised
    bin order."""
    k = v.data.shape[0]
    if k % f_bins != 0:
        raise ValueError(f"{k} embedding rows do not tile {f_bins} frequency bins")
    n = k // f_bins
    logits = ad.matmul(attractors, ad.transpose(v))         # (I, K)
    m = ad.sigmoid(logits)
    i = attractors.data.shape[0]
    return ad.transpose(ad.reshape(m, (i, n, f_bins)), (0, 2, 1))


def true_wiener_masks(source_mags: np.ndarray, mix_mag: np.ndarray) -> np.ndarray:
    """Power-ratio target masks s_i^2 / (x^2 + 1e-16), shape (I, F, N)."""
    source_mags = np.asarray(source_mags, dtype=np.float64)
    mix_mag = np.asarray(mix_mag, dtype=np.float64)
    if source_mags.ndim != 3 or source_mags.shape[1:] != mix_mag.shape:
        raise ValueError(f"sources {source_mags.shape} vs mixture {mix_mag.shape}")
    return source_mags ** 2 / (mix_mag ** 2 + WIENER_EPS)


def danet_loss(x_mag: np.ndarray, m_true: np.ndarray, m_hat: ad.Tensor) -> ad.Tensor:
    """Magnitude-weighted L1 between target and estimated masks."""
    x_mag = np.asarray(x_mag, dtype=np.float64)
    m_true = np.asarray(m_true, dtype=np.float64)
    if m_true.shape != m_hat.data.shape or m_true.shape[1:] != x_mag.shape:
        raise ValueError(f"mask shapes {m_true.shape} vs {m_hat.data.shape} vs mixture {x_mag.shape}")
    weighted = ad.Tensor(x_mag[None]) * (ad.Tensor(m_true) - m_hat)
    return ad.mean_(ad.absval(weighted))


class AttractorSeparator:
    """Gated-conv encoder trained with oracle attractors.

    The encoder is shared with the clustering separator but used without
    row normalisation: attractor logits are plain inner products, and the
    sigmoid can only reach hard 0/1 masks if embedding norms are free to
    grow.
    """

    def __init__(self, f_bins: int, cfg: GatedConvConfig | None = None, seed: int = 0):
        self.encoder = GatedConvEncoder(f_bins, cfg, seed=seed)
        self.f_bins = f_bins

    @property
    def params(self) -> dict[str, ad.Tensor]:
        return self.encoder.params

    def loss(self, x_log: np.ndarray, x_mag: np.ndarray, labels: LabelMatrix,
             m_true: np.ndarray) -> ad.Tensor:
        v = self.encoder.forward(x_log, normalize=False)
        a = compute_attractors(v, labels.y)
        m_hat = attractor_masks(v, a, self.f_bins)
        return danet_loss(x_mag, m_true, m_hat)

    def infer_masks(self, x_log: np.ndarray, labels: LabelMatrix) -> np.ndarray:
        """Soft masks (I, F, N) with attractors recomputed from the labels."""
        v = self.encoder.forward(x_log, normalize=False)
        a = compute_attractors(v, labels.y)
        return attractor_masks(v, a, self.f_bins).data
