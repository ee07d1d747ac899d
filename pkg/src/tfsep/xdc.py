"""Mask network whose output layer is a bank of convolutive templates.

An encoder turns the scaled mixture magnitude into non-negative
activations h (I, J, N): I source channels, each driving J shared
spectro-temporal templates.  Channel magnitudes are

    h_tilde[i, f, n] = sum_j sum_m w[j, f, m] * h[i, j, n - m]

with w = max(0, w_raw), i.e. every channel estimate is a non-negative
combination of template patches placed along time.  Masks are the channel
magnitudes under a square-root Wiener normalisation,

    v_tilde[i] = h_tilde[i] / (sqrt(sum_i h_tilde[i]^2) + eps)

and training pulls the mask vectors toward the dominant-source label
structure (clustering loss) while a small penalty keeps sum_i h_tilde
close to the mixture so the templates stay spectrally meaningful.

Because the clustering loss is permutation-free, nothing ties channel i to
a particular source; channels are matched to references only at
evaluation time, and surplus channels are dropped by energy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dc import dc_loss
from .signal import LabelMatrix, Spectrogram

MASK_NORM_EPS = 1e-5


@dataclass
class TemplateMaskConfig:
    n_channels: int = 2        # I: separation channels the model carries
    n_templates: int = 8       # J: templates shared across channels
    n_taps: int = 15           # M: template length in frames
    enc_channels: int = 24     # hidden width of the encoder
    enc_depth: int = 3         # conv layers including the output layer
    enc_ksize: int = 3
    lam: float = 1e-3          # weight of the reconstruction penalty
    eps: float = MASK_NORM_EPS

    def validate(self) -> None:
        if self.n_channels < 1 or self.n_templates < 1 or self.n_taps < 1:
            raise ValueError("channel, template, and tap counts must be positive")
        if self.enc_depth < 1:
            raise ValueError("encoder needs at least one layer")
        if self.enc_ksize % 2 != 1:
            raise ValueError(f"encoder ksize must be odd, got {self.enc_ksize}")
        if self.lam < 0 or self.eps <= 0:
            raise ValueError("lam must be >= 0 and eps > 0")


class TemplateMaskNet:
    def __init__(self, f_bins: int, cfg: TemplateMaskConfig | None = None, seed: int = 0):
        self.cfg = cfg or TemplateMaskConfig()
        self.cfg.validate()
        self.f_bins = f_bins
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Tensor] = {}
        q = self.cfg.n_channels * self.cfg.n_templates
        widths = [f_bins] + [self.cfg.enc_channels] * (self.cfg.enc_depth - 1) + [q]
        for layer in range(self.cfg.enc_depth):
            c_in, c_out = widths[layer], widths[layer + 1]
            w = rng.normal(0.0, np.sqrt(2.0 / (c_in * self.cfg.enc_ksize)),
                           size=(c_out, c_in, self.cfg.enc_ksize))
            self.params[f"enc{layer}.w"] = ad.Tensor(w, requires_grad=True, name=f"enc{layer}.w")
            self.params[f"enc{layer}.b"] = ad.Tensor(np.zeros(c_out), requires_grad=True,
                                                     name=f"enc{layer}.b")
        t = rng.uniform(0.0, 1.0 / (self.cfg.n_templates * self.cfg.n_taps),
                        size=(self.cfg.n_templates, f_bins, self.cfg.n_taps))
        self.params["templates"] = ad.Tensor(t, requires_grad=True, name="templates")

    def activations(self, x: np.ndarray | ad.Tensor) -> ad.Tensor:
        """Encoder: (F, N) -> non-negative activations (I, J, N)."""
        if isinstance(x, ad.Tensor):
            data = x.data
        else:
            data = np.asarray(x, dtype=np.float64)
            x = ad.Tensor(data)
        if data.ndim != 2 or data.shape[0] != self.f_bins:
            raise ValueError(f"expected ({self.f_bins}, n) input, got {data.shape}")
        n = data.shape[1]
        pad = self.cfg.enc_ksize // 2
        t = ad.reshape(x, (1, self.f_bins, n))
        for layer in range(self.cfg.enc_depth):
            t = ad.conv1d(t, self.params[f"enc{layer}.w"], pad, pad)
            bias = self.params[f"enc{layer}.b"]
            t = t + ad.reshape(bias, (1, bias.data.shape[0], 1))
            if layer < self.cfg.enc_depth - 1:
                t = ad.relu(t)
        t = ad.softplus(t)
        return ad.reshape(t, (self.cfg.n_channels, self.cfg.n_templates, n))

    def effective_templates(self) -> ad.Tensor:
        """Non-negative template bank actually applied: max(0, raw)."""
        return ad.relu(self.params["templates"])

    def forward(self, x: np.ndarray | ad.Tensor) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        """Returns (h, h_tilde, v_tilde): activations, channel magnitudes, masks."""
        h = self.activations(x)
        h_tilde = template_convolve(h, self.effective_templates())
        v_tilde = normalize_masks(h_tilde, self.cfg.eps)
        return h, h_tilde, v_tilde


def template_convolve(h: ad.Tensor, w_eff: ad.Tensor) -> ad.Tensor:
    """Causal placement of templates by their activations: (I, J, N) x
    (J, F, M) -> (I, F, N).  An impulse in h[i, j] at frame n lays down
    template j starting at frame n."""
    if h.data.ndim != 3 or w_eff.data.ndim != 3 or h.data.shape[1] != w_eff.data.shape[0]:
        raise ValueError(f"activation shape {h.data.shape} does not pair with "
                         f"template shape {w_eff.data.shape}")
    m_taps = w_eff.data.shape[2]
    wt = ad.flip(ad.transpose(w_eff, (1, 0, 2)), axis=2)
    return ad.conv1d(h, wt, pad_left=m_taps - 1, pad_right=0)


def normalize_masks(h_tilde: ad.Tensor, eps: float = MASK_NORM_EPS) -> ad.Tensor:
    """Square-root Wiener rule across channels.  With eps -> 0 the squared
    masks sum to 1 wherever any channel is active; the additive eps keeps
    all-zero bins at exactly zero mask."""
    if h_tilde.data.ndim != 3:
        raise ValueError(f"expected (i, f, n) magnitudes, got shape {h_tilde.data.shape}")
    total = ad.sum_(ad.square(h_tilde), axis=0, keepdims=True)
    return h_tilde / (ad.sqrt(total) + eps)


def masks_to_embeddings(v_tilde: ad.Tensor) -> ad.Tensor:
    """(I, F, N) masks -> (K, I) rows in vectorised bin order k = n*F + f."""
    i, f, n = v_tilde.data.shape
    return ad.reshape(ad.transpose(v_tilde, (2, 1, 0)), (n * f, i))


def recon_loss(x: np.ndarray, h_tilde: ad.Tensor, lam: float) -> ad.Tensor:
    """(lam / 4K) * ||x - sum_i h_tilde_i||_F^2 against the scaled mixture."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != h_tilde.data.shape[1:]:
        raise ValueError(f"mixture {x.shape} vs channel magnitudes {h_tilde.data.shape}")
    k = x.size
    diff = ad.Tensor(x) - ad.sum_(h_tilde, axis=0)
    return (lam / (4.0 * k)) * ad.frob2(diff)


def xdc_loss(model: TemplateMaskNet, x_scaled: np.ndarray, labels: LabelMatrix
             ) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """Total training loss on one mixture; returns (total, clustering, recon).

    The clustering term sees only non-silent bins; the reconstruction term
    sees every bin.
    """
    _, h_tilde, v_tilde = model.forward(x_scaled)
    v = masks_to_embeddings(v_tilde)
    keep = labels.nonsilent_indices
    cluster = dc_loss(ad.take_rows(v, keep), labels.y[keep])
    recon = recon_loss(x_scaled, h_tilde, model.cfg.lam)
    return cluster + recon, cluster, recon


def infer_masks(model: TemplateMaskNet, x_scaled: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference forward pass; returns plain arrays (v_tilde, h_tilde, h)."""
    h, h_tilde, v_tilde = model.forward(np.asarray(x_scaled, dtype=np.float64))
    return v_tilde.data, h_tilde.data, h.data


def select_masks(h_tilde: np.ndarray, n_wanted: int) -> list[int]:
    """Pick the n_wanted channels with the largest magnitude Frobenius norm,
    returned in ascending channel order.  Ties resolve to lower indices."""
    h_tilde = np.asarray(h_tilde)
    if h_tilde.ndim != 3:
        raise ValueError(f"expected (i, f, n) magnitudes, got shape {h_tilde.shape}")
    n_channels = h_tilde.shape[0]
    if not 1 <= n_wanted <= n_channels:
        raise ValueError(f"cannot select {n_wanted} of {n_channels} channels")
    norms = np.sqrt(np.sum(h_tilde * h_tilde, axis=(1, 2)))
    order = np.argsort(-norms, kind="stable")
    return sorted(int(i) for i in order[:n_wanted])


def apply_masks(v_tilde: np.ndarray, mixture: Spectrogram,
                channels: list[int] | None = None) -> list[Spectrogram]:
    """Power-domain masking of the complex mixture: estimate_i = v_i^2 * X.

    Squaring converts the square-root Wiener masks back to energy
    proportions, so the selected estimates sum to roughly the mixture.
    """
    if mixture.kind != "complex":
        raise ValueError("apply_masks needs the complex mixture spectrogram")
    if v_tilde.shape[1:] != mixture.values.shape:
        raise ValueError(f"mask grid {v_tilde.shape[1:]} vs mixture {mixture.values.shape}")
    if channels is None:
        channels = list(range(v_tilde.shape[0]))
    out = []
    for i in channels:
        est = (v_tilde[i] ** 2) * mixture.values
        out.append(Spectrogram(est, window=mixture.window, hop=mixture.hop,
                               sample_rate=mixture.sample_rate, kind="complex"))
    return out


def template_spectral_peaks(template: np.ndarray) -> list[int]:
    """Frequency bins where the tap-summed template profile has a strict
    local maximum (both neighbours lower).  Used to read off which
    harmonics a learned template latched onto."""
    template = np.asarray(template)
    if template.ndim != 2:
        raise ValueError(f"expected (f, m) template, got shape {template.shape}")
    profile = template.sum(axis=1)
    peaks = []
    for f in range(1, len(profile) - 1):
        if profile[f] > profile[f - 1] and profile[f] > profile[f + 1]:
            peaks.append(f)
    return peaks


CONTRAST_POWER = 0.2


def export_templates(w_eff: np.ndarray, out_dir: str | Path) -> list[Path]:
    """One CSV per template, (F, M) grid, full float precision; returns paths.

    Each template also gets a *_contrast.csv companion holding the grid
    raised elementwise to the 1/5 power, which compresses the dynamic
    range enough that faint harmonics survive plotting.  index.json
    records the shapes so the dump is self-describing.
    """
    w_eff = np.asarray(w_eff, dtype=np.float64)
    if w_eff.ndim != 3:
        raise ValueError(f"expected (j, f, m) templates, got shape {w_eff.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for j in range(w_eff.shape[0]):
        p = out_dir / f"template_{j:02d}.csv"
        _write_grid_csv(p, w_eff[j])
        paths.append(p)
        q = out_dir / f"template_{j:02d}_contrast.csv"
        _write_grid_csv(q, w_eff[j] ** CONTRAST_POWER)
        paths.append(q)
    index = {
        "n_templates": int(w_eff.shape[0]),
        "n_freq": int(w_eff.shape[1]),
        "n_taps": int(w_eff.shape[2]),
        "contrast_power": CONTRAST_POWER,
        "files": [p.name for p in paths],
    }
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n",
                          encoding="ascii")
    paths.append(index_path)
    return paths


def export_activations(h: np.ndarray, out_dir: str | Path) -> list[Path]:
    """One CSV per channel, (J, N) activation grid."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3:
        raise ValueError(f"expected (i, j, n) activations, got shape {h.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(h.shape[0]):
        p = out_dir / f"activations_ch{i}.csv"
        _write_grid_csv(p, h[i])
        paths.append(p)
    return paths


def _write_grid_csv(path: Path, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow(["%.17g" % v for v in row])


def load_grid_csv(path: str | Path) -> np.ndarray:
    """Read back a CSV written by the exporters; values round-trip exactly."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: empty grid")
    return np.array(rows, dtype=np.float64)
