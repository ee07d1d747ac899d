"""Run configuration: JSON in, validated dict out.

A config is a plain dict with four sections (seed, stft, data, model,
train).  Users supply any subset; the rest comes from defaults for the
chosen model kind.  Unknown keys are rejected rather than ignored, since
a typo that silently falls back to a default is the worst failure mode a
config system can have.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    pass


MODEL_DEFAULTS = {
    "xdc": {
        "kind": "xdc",
        "n_channels": 2,
        "n_templates": 8,
        "n_taps": 15,
        "enc_channels": 24,
        "enc_depth": 3,
        "enc_ksize": 3,
        "lam": 1e-3,
        "eps": 1e-5,
    },
    "dc-gatedconv": {
        "kind": "dc-gatedconv",
        "embed_dim": 20,
        "channels": 16,
        "n_blocks": 1,
        "ksize": 3,
    },
    "danet": {
        "kind": "danet",
        "embed_dim": 20,
        "channels": 16,
        "n_blocks": 1,
        "ksize": 3,
    },
    "nmf": {
        "kind": "nmf",
        "parts_per_source": 1,
        "n_iters": 200,
    },
    "nmfd": {
        "kind": "nmfd",
        "parts_per_source": 1,
        "n_taps": 5,
        "n_iters": 100,
    },
}


def default_config(kind: str = "xdc") -> dict:
    if kind not in MODEL_DEFAULTS:
        raise ConfigError(f"unknown model kind {kind!r}, expected one of {sorted(MODEL_DEFAULTS)}")
    return {
        "seed": 0,
        "stft": {
            "window": 254,
            "hop": 127,
            "n_frames": 100,
        },
        "data": {
            "n_train": 200,
            "n_val": 16,
            "n_test": 32,
            "f0_hz": [100.0, 160.0],
            "n_partials": 8,
            "duration_s": 2.0,
            "sample_rate_hz": 8000,
            "weight_mode": "deterministic",
        },
        "model": copy.deepcopy(MODEL_DEFAULTS[kind]),
        "train": {
            "learning_rate": 1e-2,
            "epochs": 40,
            "batch_size": 4,
        },
    }


def _check_keys(user: dict, reference: dict, path: str) -> None:
    for key, val in user.items():
        if key not in reference:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(reference[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path}{key!r} must be an object")
            _check_keys(val, reference[key], f"{path}{key}.")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(user: dict) -> dict:
    """Merge a partial config over the defaults for its model kind and validate."""
    if not isinstance(user, dict):
        raise ConfigError(f"config must be a JSON object, got {type(user).__name__}")
    kind = user.get("model", {}).get("kind", "xdc")
    base = default_config(kind)
    _check_keys(user, base, "")
    cfg = _deep_merge(base, user)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    stft = cfg["stft"]
    if stft["window"] < 2 or stft["window"] % 2 != 0:
        raise ConfigError(f"stft.window must be a positive even number, got {stft['window']}")
    if not 0 < stft["hop"] <= stft["window"]:
        raise ConfigError(f"stft.hop must be in (0, window], got {stft['hop']}")
    if stft["n_frames"] < 2:
        raise ConfigError(f"stft.n_frames must be at least 2, got {stft['n_frames']}")
    data = cfg["data"]
    for field in ("n_train", "n_val", "n_test"):
        if data[field] < 1:
            raise ConfigError(f"data.{field} must be positive, got {data[field]}")
    if len(data["f0_hz"]) < 2:
        raise ConfigError("data.f0_hz needs at least two sources")
    if any(f <= 0 for f in data["f0_hz"]):
        raise ConfigError(f"data.f0_hz must be positive, got {data['f0_hz']}")
    if data["weight_mode"] not in ("deterministic", "random"):
        raise ConfigError(f"data.weight_mode must be 'deterministic' or 'random', "
                          f"got {data['weight_mode']!r}")
    nyquist = data["sample_rate_hz"] / 2
    top = max(data["f0_hz"]) * data["n_partials"]
    if top >= nyquist:
        raise ConfigError(f"highest partial at {top} Hz reaches Nyquist ({nyquist} Hz); "
                          "lower f0_hz or n_partials")
    need = stft["window"] + (stft["n_frames"] - 1) * stft["hop"]
    have = int(round(data["duration_s"] * data["sample_rate_hz"]))
    if have < need:
        raise ConfigError(f"data.duration_s gives {have} samples but {need} are needed "
                          f"for {stft['n_frames']} frames")
    train = cfg["train"]
    if train["learning_rate"] <= 0:
        raise ConfigError(f"train.learning_rate must be positive, got {train['learning_rate']}")
    if train["epochs"] < 0:
        raise ConfigError(f"train.epochs must be non-negative, got {train['epochs']}")
    if train["batch_size"] < 1:
        raise ConfigError(f"train.batch_size must be positive, got {train['batch_size']}")
    model = cfg["model"]
    kind = model["kind"]
    if kind == "xdc":
        for field in ("n_channels", "n_templates", "n_taps", "enc_channels", "enc_depth"):
            if model[field] < 1:
                raise ConfigError(f"model.{field} must be positive, got {model[field]}")
        if model["n_taps"] > stft["n_frames"]:
            raise ConfigError(f"model.n_taps ({model['n_taps']}) exceeds stft.n_frames "
                              f"({stft['n_frames']})")
        if model["lam"] < 0:
            raise ConfigError(f"model.lam must be non-negative, got {model['lam']}")
        if model["eps"] <= 0:
            raise ConfigError(f"model.eps must be positive, got {model['eps']}")
        if model["enc_ksize"] < 1 or model["enc_ksize"] % 2 != 1:
            raise ConfigError(f"model.enc_ksize must be a positive odd number, "
                              f"got {model['enc_ksize']}")
    if kind in ("dc-gatedconv", "danet"):
        for field in ("embed_dim", "channels", "n_blocks"):
            if model[field] < 1:
                raise ConfigError(f"model.{field} must be positive, got {model[field]}")
        if model["ksize"] < 1 or model["ksize"] % 2 != 1:
            raise ConfigError(f"model.ksize must be a positive odd number, got {model['ksize']}")
    if kind in ("nmf", "nmfd"):
        if model["parts_per_source"] < 1 or model["n_iters"] < 1:
            raise ConfigError("model.parts_per_source and model.n_iters must be positive")
        if kind == "nmfd" and not 1 <= model["n_taps"] <= stft["n_frames"]:
            raise ConfigError(f"model.n_taps must be in [1, n_frames], got {model['n_taps']}")


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return resolve_config(user)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()
