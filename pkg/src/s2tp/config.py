"""Flat ``key = value`` configuration files.

One sectionless namespace covers the architecture, the training recipe
and the synthetic task. Unknown keys are rejected by name; the same
schema round-trips through checkpoints as the embedded config snapshot.
"""

from __future__ import annotations

from .errors import ConfigError


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA = {
    # architecture
    "family": (str, "perceiver"),
    "d": (int, 64),
    "heads": (int, 4),
    "self_attn_layers": (int, 4),
    "encoder_layers": (int, 5),  # transformer family only
    "decoder_layers": (int, 2),
    "ffn_hidden": (int, 256),
    "n_latents": (int, 64),
    "vocab": (int, 16),
    "freq_bins": (int, 16),
    "conv_channels": (int, 32),
    "conv_kernel": (int, 5),
    "conv_stride": (int, 1),
    "use_input_processor": (_parse_bool, True),
    "dropout": (float, 0.15),
    # training
    "train_latents": (int, 16),
    "lr": (float, 0.002),
    "warmup_steps": (int, 500),
    "batch_size": (int, 16),
    "max_epochs": (int, 10),
    "patience": (int, 15),
    "label_smoothing": (float, 0.1),
    "stop_accuracy": (float, 0.995),
    "seed": (int, 0),
    "train_examples": (int, 5000),
    "valid_examples": (int, 500),
    # synthetic task
    "t_min": (int, 5),
    "t_max": (int, 20),
    "frames_per_token": (int, 8),
    "noise_std": (float, 0.1),
    "task_mode": (str, "copy"),
    # inference
    "beam": (int, 1),
    "max_len": (int, 0),  # 0 = derive from t_max
    "k_prime": (int, 0),  # 0 = full inference
}


def defaults() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def _validate(cfg: dict) -> dict:
    if cfg["family"] not in ("perceiver", "transformer"):
        raise ConfigError(f"family must be perceiver or transformer, got {cfg['family']!r}")
    if cfg["task_mode"] not in ("copy", "reverse"):
        raise ConfigError(f"task_mode must be copy or reverse, got {cfg['task_mode']!r}")
    if cfg["conv_stride"] not in (1, 2):
        raise ConfigError("conv_stride must be 1 or 2")
    if cfg["d"] % cfg["heads"] != 0:
        raise ConfigError("d must be divisible by heads")
    if cfg["d"] % 2 != 0:
        raise ConfigError("d must be even (sinusoidal positions)")
    if not 1 <= cfg["train_latents"] <= cfg["n_latents"]:
        raise ConfigError("train_latents must satisfy 1 <= train_latents <= n_latents")
    if cfg["k_prime"] and not 1 <= cfg["k_prime"] <= cfg["n_latents"]:
        raise ConfigError("k_prime must satisfy 1 <= k_prime <= n_latents")
    if cfg["patience"] < 1:
        raise ConfigError("patience must be >= 1")
    if not 0.0 <= cfg["dropout"] < 1.0:
        raise ConfigError("dropout must be in [0, 1)")
    if not 0.0 <= cfg["label_smoothing"] < 1.0:
        raise ConfigError("label_smoothing must be in [0, 1)")
    if cfg["t_min"] < 1 or cfg["t_max"] < cfg["t_min"]:
        raise ConfigError("need 1 <= t_min <= t_max")
    for key in ("vocab", "freq_bins", "frames_per_token", "batch_size", "beam"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    return cfg


def parse_text(text: str, overrides: dict | None = None) -> dict:
    """Parse config text; unknown keys raise ConfigError naming the key."""
    cfg = defaults()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        parser, _ = SCHEMA[key]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key}: {exc}") from exc
    if overrides:
        for key, value in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key}")
            cfg[key] = value
    return _validate(cfg)


def load(path, overrides: dict | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_text(fh.read(), overrides)


def dump(cfg: dict) -> str:
    """Config as 'key = value' lines, in schema order."""
    lines = []
    for key in SCHEMA:
        value = cfg[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
