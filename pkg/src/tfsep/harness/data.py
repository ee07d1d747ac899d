"""Dataset generation and loading for the synthetic-mixture pipeline.

gen_dataset writes one wav per source per example plus a line-delimited
JSON manifest.  Mixture weights are drawn at generation time and recorded
in the manifest verbatim (json round-trips Python floats exactly), so a
loaded example is fully determined by the manifest and the wavs.

Seeds are derived arithmetically so every example and source is
independent but reproducible:

    example_seed = base_seed * 1_000_000 + example_index
    source_seed  = example_seed * 10 + source_index
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..signal import (LabelMatrix, Spectrogram, Waveform, dominant_labels,
                      gen_harmonic_source, log_spectrogram, samples_for_frames,
                      scale_amplitude, silence_mask, synth_mixture)
from ..wavio import read_wav, write_wav
from .config import config_hash

MANIFEST_NAME = "manifest.jsonl"


@dataclass
class LoadedExample:
    example_id: str
    split: str
    mixture: Spectrogram              # complex
    sources: list[Spectrogram]        # complex, weighted
    source_waves: list[np.ndarray]    # weighted, cropped time domain
    weights: np.ndarray
    x_scaled: np.ndarray              # (F, N) peak-normalised magnitude
    x_log: np.ndarray                 # (F, N) log magnitude
    labels: LabelMatrix


def gen_dataset(cfg: dict, out_dir: str | Path) -> Path:
    """Write wavs and manifest under out_dir; returns the manifest path.

    Training examples always get per-example random mixing weights (the
    training crop already varies per epoch, and varied weights make the
    task scale-robust); data.weight_mode picks whether the held-out
    splits are mixed with unit weights or with random ones.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    data = cfg["data"]
    base_seed = int(cfg["seed"])
    rate = data["sample_rate_hz"]
    rows = []
    splits = [("train", data["n_train"], "random"),
              ("val", data["n_val"], data["weight_mode"]),
              ("test", data["n_test"], data["weight_mode"])]
    index = 0
    for split, count, weight_mode in splits:
        for _ in range(count):
            example_seed = base_seed * 1_000_000 + index
            example_id = f"mix_{index:04d}"
            paths = []
            for s, f0 in enumerate(data["f0_hz"]):
                wave = gen_harmonic_source(f0, data["n_partials"], data["duration_s"],
                                           rate, seed=example_seed * 10 + s)
                rel = f"wav/{example_id}_src{s}.wav"
                write_wav(out_dir / rel, wave)
                paths.append(rel)
            if weight_mode == "random":
                weights = np.random.default_rng(example_seed).uniform(0.0, 1.0,
                                                                      size=len(paths))
            else:
                weights = np.ones(len(paths))
            rows.append({
                "id": example_id,
                "split": split,
                "sources": paths,
                "f0_hz": list(data["f0_hz"]),
                "weights": [float(w) for w in weights],
                "crop_seed": example_seed,
            })
            index += 1
    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    meta = {
        "config_hash": config_hash(cfg),
        "seed": base_seed,
        "sample_rate_hz": rate,
        "n_train": data["n_train"],
        "n_val": data["n_val"],
        "n_test": data["n_test"],
        "weight_mode": data["weight_mode"],
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(data_dir: str | Path) -> list[dict]:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {data_dir}; run gen-data first")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
    return rows


def manifest_split(rows: list[dict], split: str) -> list[dict]:
    out = [r for r in rows if r["split"] == split]
    if not out:
        raise ValueError(f"manifest has no {split!r} examples")
    return out


def crop_offset(row: dict, stft_cfg: dict, n_samples: int, epoch: int | None) -> int:
    """Deterministic crop: frame 0 for evaluation, seeded-random per epoch
    for training so the model sees different windows of each example."""
    need = samples_for_frames(stft_cfg["n_frames"], stft_cfg["window"], stft_cfg["hop"])
    if n_samples < need:
        raise ValueError(f"example {row['id']} has {n_samples} samples, needs {need}")
    if epoch is None:
        return 0
    rng = np.random.default_rng(int(row["crop_seed"]) * 1000 + epoch)
    return int(rng.integers(0, n_samples - need + 1))


def prepare_example(row: dict, data_dir: str | Path, stft_cfg: dict,
                    epoch: int | None = None) -> LoadedExample:
    """Load, crop, weight, mix, and analyse one manifest row."""
    data_dir = Path(data_dir)
    waves = [read_wav(data_dir / rel) for rel in row["sources"]]
    need = samples_for_frames(stft_cfg["n_frames"], stft_cfg["window"], stft_cfg["hop"])
    offset = crop_offset(row, stft_cfg, len(waves[0]), epoch)
    cropped = [Waveform(w.samples[offset:offset + need], w.sample_rate) for w in waves]
    weights = np.asarray(row["weights"], dtype=np.float64)
    mix = synth_mixture(cropped, weights=weights,
                        window=stft_cfg["window"], hop=stft_cfg["hop"])
    silence = silence_mask(mix.mixture)
    labels = dominant_labels(mix.sources, silence)
    return LoadedExample(
        example_id=row["id"],
        split=row["split"],
        mixture=mix.mixture,
        sources=mix.sources,
        source_waves=mix.source_waves,
        weights=mix.weights,
        x_scaled=scale_amplitude(mix.mixture).values,
        x_log=log_spectrogram(mix.mixture).values,
        labels=labels,
    )
