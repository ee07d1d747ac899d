"""Deep clustering: embed time-frequency bins, pull same-source bins together.

The loss compares the Gram structure of the embeddings V (K, D) with that
of the one-hot dominant-source labels Y (K, I):

    L = ||V^T V||_F^2 - 2 ||V^T Y||_F^2 + ||Y^T Y||_F^2

which equals ||V V^T - Y Y^T||_F^2 but never materialises a K x K matrix.
Because Y enters only through Frobenius norms of small Gram products, and
those norms are order-independent sums, permuting the columns of Y (i.e.
renumbering the sources) leaves the loss bit-identical: the training
objective carries no source-ordering information at all.

Masks come out of the embeddings by k-means at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import autodiff as ad
from . import bss
from .kmeans import kmeans

ROW_NORM_EPS = 1e-12


def dc_loss(v, y) -> ad.Tensor:
    """Clustering loss from embeddings v (K, D) and labels y (K, I).

    v is a Tensor when training, any array-like otherwise; y is typically
    a constant label matrix.  Rows must correspond (non-silent bins only).
    """
    v = ad._lift(v)
    y = ad._lift(y)
    if v.data.ndim != 2 or y.data.ndim != 2 or v.data.shape[0] != y.data.shape[0]:
        raise ValueError(f"embeddings {v.data.shape} and labels {y.data.shape} must share rows")
    vt = ad.transpose(v)
    vtv = ad.matmul(vt, v)
    # gram keeps the two label-dependent terms bit-identical under any
    # permutation of y's columns; vtv never sees y so matmul is fine there.
    vty = ad.gram(v, y)
    yty = ad.gram(y, y)
    return ad.frob2(vtv) - 2.0 * ad.frob2(vty) + ad.frob2(yty)


def dc_loss_direct(v: np.ndarray, y: np.ndarray) -> float:
    """||V V^T - Y Y^T||_F^2 by brute force; O(K^2), for cross-checking only."""
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = v @ v.T - y @ y.T
    return float(np.sum(d * d))


LAYERS_PER_BLOCK = 3


@dataclass
class GatedConvConfig:
    embed_dim: int = 20
    channels: int = 16
    n_blocks: int = 1
    ksize: int = 3


class GatedConvEncoder:
    """Per-frame gated 1-d conv stack mapping a (F, N) spectrogram to one
    unit-norm D-dimensional embedding per time-frequency bin.

    Input is treated as an N-long sequence with F channels.  Each block
    stacks three gated conv layers; a layer is tanh-free gating:
    a = conv_a(x) + b_a, g = conv_g(x) + b_g, out = a * sigmoid(g).
    A width-1 head expands to D embedding values per frequency bin, and
    rows are L2-normalised.
    """

    def __init__(self, f_bins: int, cfg: GatedConvConfig | None = None, seed: int = 0):
        self.cfg = cfg or GatedConvConfig()
        self.f_bins = f_bins
        if self.cfg.ksize % 2 != 1:
            raise ValueError(f"ksize must be odd for same-length output, got {self.cfg.ksize}")
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Tensor] = {}
        c_in = f_bins
        for b in range(self.cfg.n_blocks):
            for layer in range(LAYERS_PER_BLOCK):
                for gate in ("a", "g"):
                    w = rng.normal(0.0, np.sqrt(2.0 / (c_in * self.cfg.ksize)),
                                   size=(self.cfg.channels, c_in, self.cfg.ksize))
                    self._add(f"block{b}.layer{layer}.w{gate}", w)
                    self._add(f"block{b}.layer{layer}.b{gate}", np.zeros(self.cfg.channels))
                c_in = self.cfg.channels
        d_out = self.cfg.embed_dim * f_bins
        w = rng.normal(0.0, np.sqrt(1.0 / c_in), size=(d_out, c_in, 1))
        self._add("head.w", w)
        self._add("head.b", np.zeros(d_out))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = ad.Tensor(value, requires_grad=True, name=name)

    def forward(self, x: np.ndarray, normalize: bool = True) -> ad.Tensor:
        """x is (F, N); returns embeddings (K, D), k = n*F + f.

        Rows are L2-normalised by default, which the clustering loss relies
        on.  normalize=False returns the raw head output for consumers that
        need unbounded inner products (the attractor masks saturate their
        sigmoids only if embedding magnitudes can grow).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.f_bins:
            raise ValueError(f"expected ({self.f_bins}, n) input, got {x.shape}")
        n = x.shape[1]
        pad = self.cfg.ksize // 2
        t = ad.Tensor(x[None])
        for b in range(self.cfg.n_blocks):
            for layer in range(LAYERS_PER_BLOCK):
                p = f"block{b}.layer{layer}"
                a = ad.conv1d(t, self.params[f"{p}.wa"], pad, pad)
                a = a + ad.reshape(self.params[f"{p}.ba"], (1, self.cfg.channels, 1))
                g = ad.conv1d(t, self.params[f"{p}.wg"], pad, pad)
                g = g + ad.reshape(self.params[f"{p}.bg"], (1, self.cfg.channels, 1))
                t = a * ad.sigmoid(g)
        h = ad.conv1d(t, self.params["head.w"], 0, 0)
        h = h + ad.reshape(self.params["head.b"], (1, self.cfg.embed_dim * self.f_bins, 1))
        # (1, D*F, N) -> (D, F, N) -> (N, F, D) -> (K, D)
        h = ad.reshape(h, (self.cfg.embed_dim, self.f_bins, n))
        h = ad.transpose(h, (2, 1, 0))
        v = ad.reshape(h, (n * self.f_bins, self.cfg.embed_dim))
        if not normalize:
            return v
        norms = ad.sqrt(ad.sum_(ad.square(v), axis=1, keepdims=True))
        return v / (norms + ROW_NORM_EPS)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Inference-path forward; no tape, returns a plain array."""
        return self.forward(x).data


def kmeans_masks(v: np.ndarray, silence: np.ndarray, f_bins: int, n_frames: int,
                 n_sources: int, seed: int = 0, iters: int = 100) -> np.ndarray:
    """Cluster non-silent embedding rows, paint binary masks (I, F, N).

    v holds embeddings for the non-silent bins only, in vectorised bin
    order; silent bins get mask 0 in every source.
    """
    v = np.asarray(v, dtype=np.float64)
    silence = np.asarray(silence, dtype=bool)
    keep = np.flatnonzero(~silence)
    if v.shape[0] != keep.size:
        raise ValueError(f"{v.shape[0]} embedding rows but {keep.size} non-silent bins")
    if keep.size < n_sources:
        raise ValueError(f"only {keep.size} active bins, cannot split into {n_sources} clusters")
    labels, _ = kmeans(v, n_sources, seed=seed, max_iters=iters)
    masks = np.zeros((n_sources, f_bins, n_frames), dtype=np.float64)
    f = keep % f_bins
    n = keep // f_bins
    masks[labels, f, n] = 1.0
    return masks


def write_assignments_csv(path, bin_indices: np.ndarray, cluster_ids: np.ndarray) -> None:
    """Dump cluster assignments as CSV rows of (bin_index, cluster_id).

    bin_indices are vectorised time-frequency indices (k = n*F + f) of the
    bins that were clustered; silent bins are simply absent.
    """
    bin_indices = np.asarray(bin_indices)
    cluster_ids = np.asarray(cluster_ids)
    if bin_indices.shape != cluster_ids.shape or bin_indices.ndim != 1:
        raise ValueError(
            f"need matching 1-d arrays, got {bin_indices.shape} and {cluster_ids.shape}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("bin_index,cluster_id\n")
        for k, c in zip(bin_indices, cluster_ids):
            fh.write(f"{int(k)},{int(c)}\n")


def best_permutation_align(ests: list[np.ndarray], refs: list[np.ndarray]) -> tuple[int, ...]:
    """Source order is arbitrary after clustering; find the assignment of
    estimates to references with the highest mean SDR.  Returns perm such
    that ests[i] is scored against refs[perm[i]]."""
    if len(ests) != len(refs):
        raise ValueError(f"{len(ests)} estimates vs {len(refs)} references")
    mat = np.stack([np.asarray(r, dtype=np.float64) for r in refs])
    best_perm = None
    best_mean = -np.inf
    for perm in permutations(range(len(refs))):
        total = 0.0
        for i, j in enumerate(perm):
            total += bss.score(np.asarray(ests[i], dtype=np.float64), mat, j).sdr_db
        mean = total / len(refs)
        if mean > best_mean:
            best_mean = mean
            best_perm = perm
    return best_perm
