"""Training loop and the adapters that give every model kind one interface.

An adapter owns the model parameters and knows three things: how to score
one example (training loss), how to produce complex source estimates for
one example, and what to stash in a checkpoint so evaluate can rebuild it.

The factorisation kinds (nmf, nmfd) fit per mixture at evaluation time;
"training" them just records the configuration, which keeps the CLI
uniform.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..checkpoint import load_arrays, save_arrays
from ..danet import AttractorSeparator, true_wiener_masks
from ..dc import GatedConvConfig, GatedConvEncoder, dc_loss, kmeans_masks
from ..kernels import BACKEND
from ..nmf import nmf_fit, nmfd_fit, nmfd_reconstruct, wiener_masks_from_parts
from ..optim import Adam
from ..signal import Spectrogram
from ..xdc import (TemplateMaskConfig, TemplateMaskNet, apply_masks, infer_masks,
                   select_masks, xdc_loss)
from .config import config_hash
from .data import LoadedExample, load_manifest, manifest_split, prepare_example
from .scoring import score_example

CKPT_BEST = "checkpoint_best.ckpt"
CKPT_LAST = "checkpoint_last.ckpt"


class DivergenceError(RuntimeError):
    pass


def _id_index(example_id: str) -> int:
    digits = "".join(ch for ch in example_id if ch.isdigit())
    return int(digits) if digits else 0


def _mask_specs(masks: np.ndarray, mixture: Spectrogram) -> list[Spectrogram]:
    out = []
    for m in masks:
        out.append(Spectrogram(m * mixture.values, window=mixture.window, hop=mixture.hop,
                               sample_rate=mixture.sample_rate, kind="complex"))
    return out


class XdcSeparator:
    kind = "xdc"

    def __init__(self, f_bins: int, model_cfg: dict, seed: int):
        self.model_cfg = dict(model_cfg)
        cfg = TemplateMaskConfig(
            n_channels=model_cfg["n_channels"], n_templates=model_cfg["n_templates"],
            n_taps=model_cfg["n_taps"], enc_channels=model_cfg["enc_channels"],
            enc_depth=model_cfg["enc_depth"], enc_ksize=model_cfg["enc_ksize"],
            lam=model_cfg["lam"], eps=model_cfg["eps"])
        self.net = TemplateMaskNet(f_bins, cfg, seed=seed)

    @property
    def params(self):
        return self.net.params

    def loss(self, ex: LoadedExample) -> ad.Tensor:
        total, _, _ = xdc_loss(self.net, ex.x_scaled, ex.labels)
        return total

    def estimate_specs(self, ex: LoadedExample) -> list[Spectrogram]:
        v_tilde, h_tilde, _ = infer_masks(self.net, ex.x_scaled)
        channels = select_masks(h_tilde, min(len(ex.sources), v_tilde.shape[0]))
        return apply_masks(v_tilde, ex.mixture, channels)


class DcSeparator:
    kind = "dc-gatedconv"

    def __init__(self, f_bins: int, model_cfg: dict, seed: int):
        self.model_cfg = dict(model_cfg)
        cfg = GatedConvConfig(embed_dim=model_cfg["embed_dim"], channels=model_cfg["channels"],
                              n_blocks=model_cfg["n_blocks"], ksize=model_cfg["ksize"])
        self.encoder = GatedConvEncoder(f_bins, cfg, seed=seed)
        self.f_bins = f_bins

    @property
    def params(self):
        return self.encoder.params

    def loss(self, ex: LoadedExample) -> ad.Tensor:
        v = self.encoder.forward(ex.x_log)
        keep = ex.labels.nonsilent_indices
        return dc_loss(ad.take_rows(v, keep), ex.labels.y[keep])

    def estimate_specs(self, ex: LoadedExample) -> list[Spectrogram]:
        v = self.encoder.embed(ex.x_log)
        keep = ex.labels.nonsilent_indices
        masks = kmeans_masks(v[keep], ex.labels.silence, self.f_bins, ex.mixture.n_frames,
                             n_sources=len(ex.sources), seed=_id_index(ex.example_id))
        return _mask_specs(masks, ex.mixture)


class DanetSeparator:
    kind = "danet"

    def __init__(self, f_bins: int, model_cfg: dict, seed: int):
        self.model_cfg = dict(model_cfg)
        cfg = GatedConvConfig(embed_dim=model_cfg["embed_dim"], channels=model_cfg["channels"],
                              n_blocks=model_cfg["n_blocks"], ksize=model_cfg["ksize"])
        self.sep = AttractorSeparator(f_bins, cfg, seed=seed)

    @property
    def params(self):
        return self.sep.params

    def loss(self, ex: LoadedExample) -> ad.Tensor:
        m_true = true_wiener_masks(np.stack([np.abs(s.values) for s in ex.sources]),
                                   np.abs(ex.mixture.values))
        return self.sep.loss(ex.x_log, ex.x_scaled, ex.labels, m_true)

    def estimate_specs(self, ex: LoadedExample) -> list[Spectrogram]:
        masks = self.sep.infer_masks(ex.x_log, ex.labels)
        return _mask_specs(masks, ex.mixture)


class NmfSeparator:
    """Per-mixture factorisation; carries no trained parameters."""

    def __init__(self, f_bins: int, model_cfg: dict, seed: int = 0):
        self.kind = model_cfg["kind"]
        self.model_cfg = dict(model_cfg)
        self.params: dict[str, ad.Tensor] = {}

    def loss(self, ex: LoadedExample) -> ad.Tensor:
        raise NotImplementedError(f"{self.kind} has no gradient training; it fits at evaluation")

    def estimate_specs(self, ex: LoadedExample) -> list[Spectrogram]:
        i_true = len(ex.sources)
        per = self.model_cfg["parts_per_source"]
        j_total = per * i_true
        a = ex.x_scaled
        seed = _id_index(ex.example_id)
        if self.kind == "nmf":
            model, _ = nmf_fit(a, j_total, self.model_cfg["n_iters"], seed=seed)
            parts = [model.w[:, i * per:(i + 1) * per] @ model.h[i * per:(i + 1) * per]
                     for i in range(i_true)]
        else:
            model, _ = nmfd_fit(a, j_total, self.model_cfg["n_taps"],
                                self.model_cfg["n_iters"], seed=seed)
            parts = [nmfd_reconstruct(model.w[i * per:(i + 1) * per],
                                      model.h[i * per:(i + 1) * per])
                     for i in range(i_true)]
        ests = wiener_masks_from_parts(parts, ex.mixture.values)
        return [Spectrogram(e, window=ex.mixture.window, hop=ex.mixture.hop,
                            sample_rate=ex.mixture.sample_rate, kind="complex")
                for e in ests]


_BUILDERS = {
    "xdc": XdcSeparator,
    "dc-gatedconv": DcSeparator,
    "danet": DanetSeparator,
    "nmf": NmfSeparator,
    "nmfd": NmfSeparator,
}


def build_model(cfg: dict, f_bins: int):
    kind = cfg["model"]["kind"]
    if kind not in _BUILDERS:
        raise ValueError(f"unknown model kind {kind!r}")
    return _BUILDERS[kind](f_bins, cfg["model"], seed=int(cfg["seed"]))


def save_checkpoint(path: str | Path, model, cfg: dict, epoch: int, val_sdr: float) -> None:
    arrays = {name: t.data for name, t in model.params.items()}
    meta = {
        "model": model.model_cfg,
        "stft": cfg["stft"],
        "f_bins": cfg["stft"]["window"] // 2 + 1,
        "seed": int(cfg["seed"]),
        "config_hash": config_hash(cfg),
        "epoch": epoch,
        "val_sdr_db": val_sdr if np.isfinite(val_sdr) else None,
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path: str | Path):
    """Rebuild the adapter recorded in a checkpoint; returns (model, meta)."""
    arrays, meta = load_arrays(path)
    model = _BUILDERS[meta["model"]["kind"]](meta["f_bins"], meta["model"],
                                             seed=int(meta.get("seed", 0)))
    for name, tensor in model.params.items():
        if name not in arrays:
            raise ValueError(f"{path}: checkpoint is missing parameter {name!r}")
        if arrays[name].shape != tensor.data.shape:
            raise ValueError(f"{path}: parameter {name!r} has shape {arrays[name].shape}, "
                             f"model expects {tensor.data.shape}")
        tensor.data = arrays[name]
    return model, meta


def train_run(cfg: dict, data_dir: str | Path, out_dir: str | Path, log=print) -> dict:
    """Train per config on the generated dataset; writes checkpoints, a
    training-log CSV, and report.json into out_dir.  Returns the report.

    The retained "best" checkpoint is the one with the highest mean
    validation SDR; checkpoint_last always holds the end of the most
    recent completed epoch, so a diverging run still leaves a usable
    model behind.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    stft_cfg = cfg["stft"]
    f_bins = stft_cfg["window"] // 2 + 1
    model = build_model(cfg, f_bins)

    rows = load_manifest(data_dir)
    report = {
        "status": "ok",
        "model_kind": model.kind,
        "config_hash": config_hash(cfg),
        "seed": int(cfg["seed"]),
        "backend": BACKEND,
        "epochs_run": 0,
        "steps_run": 0,
    }

    if model.kind in ("nmf", "nmfd"):
        # nothing to fit up front; the checkpoint just pins the configuration
        save_checkpoint(out_dir / CKPT_BEST, model, cfg, epoch=-1, val_sdr=float("nan"))
        save_checkpoint(out_dir / CKPT_LAST, model, cfg, epoch=-1, val_sdr=float("nan"))
        report["wall_time_s"] = time.monotonic() - t0
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        return report

    train_rows = manifest_split(rows, "train")
    val_rows = manifest_split(rows, "val")
    train_cfg = cfg["train"]
    opt = Adam(model.params, learning_rate=train_cfg["learning_rate"])
    seed = int(cfg["seed"])
    batch_size = train_cfg["batch_size"]

    best_val = -np.inf
    best_epoch = None
    train_trace: list[float] = []
    val_trace: list[float] = []
    log_lines = [("epoch", "train_loss", "val_sdr_db")]
    steps = 0
    save_checkpoint(out_dir / CKPT_LAST, model, cfg, epoch=-1, val_sdr=float("nan"))
    if train_cfg["epochs"] == 0:
        save_checkpoint(out_dir / CKPT_BEST, model, cfg, epoch=-1, val_sdr=float("nan"))
    try:
        for epoch in range(train_cfg["epochs"]):
            order = np.random.default_rng(seed * 10_000 + epoch).permutation(len(train_rows))
            epoch_losses = []
            for lo in range(0, len(order), batch_size):
                batch = [train_rows[i] for i in order[lo:lo + batch_size]]
                grad_sum: dict[str, np.ndarray] = {}
                for row in batch:
                    ex = prepare_example(row, data_dir, stft_cfg, epoch=epoch)
                    with ad.Tape():
                        loss = model.loss(ex)
                        grads = ad.backward(loss, model.params)
                    val = float(loss.data)
                    if not np.isfinite(val):
                        raise DivergenceError(
                            f"loss became {val} on {ex.example_id} at step {steps + 1}")
                    epoch_losses.append(val)
                    for name, g in grads.items():
                        if name in grad_sum:
                            grad_sum[name] += g
                        else:
                            grad_sum[name] = g.copy()
                opt.step({name: g / len(batch) for name, g in grad_sum.items()})
                steps += 1
            val_scores = []
            for row in val_rows:
                ex = prepare_example(row, data_dir, stft_cfg, epoch=None)
                val_scores.extend(r["sdr_db"] for r in score_example(model, ex, stft_cfg))
            train_loss = sum(epoch_losses) / len(epoch_losses)
            val_sdr = sum(val_scores) / len(val_scores)
            if not np.isfinite(val_sdr):
                raise DivergenceError(f"validation SDR became {val_sdr} after epoch {epoch}")
            train_trace.append(train_loss)
            val_trace.append(val_sdr)
            log_lines.append((str(epoch), "%.17g" % train_loss, "%.17g" % val_sdr))
            if val_sdr > best_val:
                best_val = val_sdr
                best_epoch = epoch
                save_checkpoint(out_dir / CKPT_BEST, model, cfg, epoch, val_sdr)
            save_checkpoint(out_dir / CKPT_LAST, model, cfg, epoch, val_sdr)
            report["epochs_run"] = epoch + 1
            report["steps_run"] = steps
            log(f"epoch {epoch}: train loss {train_loss:.6g}  val sdr {val_sdr:.4g} dB")
    except (DivergenceError, ad.GradientError) as exc:
        report["status"] = "diverged"
        report["error"] = str(exc)
        report["train_loss_trace"] = train_trace
        report["val_sdr_trace"] = val_trace
        _write_train_log(out_dir, cfg, log_lines)
        report["wall_time_s"] = time.monotonic() - t0
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        raise DivergenceError(str(exc)) from exc

    report["best_epoch"] = best_epoch
    report["best_val_sdr_db"] = best_val if best_epoch is not None else None
    report["train_loss_trace"] = train_trace
    report["val_sdr_trace"] = val_trace
    _write_train_log(out_dir, cfg, log_lines)
    report["wall_time_s"] = time.monotonic() - t0
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _write_train_log(out_dir: Path, cfg: dict, lines: list[tuple]) -> None:
    with open(out_dir / "train_log.csv", "w") as fh:
        fh.write(f"# config_hash={config_hash(cfg)} seed={int(cfg['seed'])}\n")
        for row in lines:
            fh.write(",".join(row) + "\n")
