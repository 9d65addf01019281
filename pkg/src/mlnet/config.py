"""Flat ``key = value`` run configuration.

Recognised keys and defaults (desk scale, standard training values)::

    stage_channels = 8,16,32,64,64
    encode_channels = 8
    input_width = 64
    input_height = 48
    dropout_retain = 0.5
    channel_means = 0.5,0.5,0.5
    prior_width = auto          # auto -> max(1, floor(map_width / 10))
    prior_height = auto
    normalized_prior = true
    alpha = 1.1
    lambda = auto               # auto -> 1 / (prior_width * prior_height)
    batch_size = 10
    flow_through_max = true
    learning_rate = 0.001
    momentum = 0.9
    weight_decay = 0.0005
    max_grad_norm = 10          # none disables clipping
    blur_sigma = 0              # Gaussian blur (pixels) when maps are built from fixations
    n_splits = 100
    emd_max_bins = 1024
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .metrics import MetricConfig
from .network import ModelConfig
from .training import LossConfig, OptimizerState

DEFAULTS = {
    "stage_channels": "8,16,32,64,64",
    "encode_channels": "8",
    "input_width": "64",
    "input_height": "48",
    "dropout_retain": "0.5",
    "channel_means": "0.5,0.5,0.5",
    "prior_width": "auto",
    "prior_height": "auto",
    "normalized_prior": "true",
    "alpha": "1.1",
    "lambda": "auto",
    "batch_size": "10",
    "flow_through_max": "true",
    "learning_rate": "0.001",
    "momentum": "0.9",
    "weight_decay": "0.0005",
    "max_grad_norm": "10",
    "blur_sigma": "0",
    "n_splits": "100",
    "emd_max_bins": "1024",
}


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(","))


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(","))


def _opt_float(v: str) -> float | None:
    return None if v.strip().lower() in ("auto", "none") else float(v)


def parse_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: "
                              + ", ".join(sorted(DEFAULTS)))
        values[key] = value
    return values


@dataclass
class RunConfig:
    model: ModelConfig
    loss: LossConfig
    optimizer: OptimizerState
    metrics: MetricConfig
    blur_sigma: float = 0.0
    raw: dict[str, str] = field(default_factory=dict)


def build(values: dict[str, str] | None = None, seed: int = 0) -> RunConfig:
    v = dict(DEFAULTS)
    v.update(values or {})
    try:
        pw, ph = _opt_float(v["prior_width"]), _opt_float(v["prior_height"])
        prior = None if pw is None and ph is None else (int(pw or 1), int(ph or 1))
        model = ModelConfig(
            stage_channels=_ints(v["stage_channels"]),
            encode_channels=int(v["encode_channels"]),
            input_size=(int(v["input_width"]), int(v["input_height"])),
            dropout_retain=float(v["dropout_retain"]),
            seed=seed,
            channel_means=_floats(v["channel_means"]),
            prior_size=prior,
            normalized_prior=_bool(v["normalized_prior"]),
        )
        loss = LossConfig(alpha=float(v["alpha"]), lam=_opt_float(v["lambda"]),
                          batch_size=int(v["batch_size"]),
                          flow_through_max=_bool(v["flow_through_max"]))
        opt = OptimizerState(learning_rate=float(v["learning_rate"]),
                             momentum=float(v["momentum"]),
                             weight_decay=float(v["weight_decay"]),
                             max_grad_norm=_opt_float(v["max_grad_norm"]))
        metrics = MetricConfig(seed=seed, n_splits=int(v["n_splits"]),
                               emd_max_bins=int(v["emd_max_bins"]))
        return RunConfig(model, loss, opt, metrics, float(v["blur_sigma"]), v)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load(path: str | Path | None, seed: int = 0) -> RunConfig:
    values = parse_text(Path(path).read_text()) if path else {}
    return build(values, seed)


def model_config_text(cfg: ModelConfig) -> str:
    """Serialize a ModelConfig as config-file lines (used inside checkpoints)."""
    prior = cfg.prior_size
    lines = [
        f"stage_channels = {','.join(map(str, cfg.stage_channels))}",
        f"encode_channels = {cfg.encode_channels}",
        f"input_width = {cfg.input_size[0]}",
        f"input_height = {cfg.input_size[1]}",
        f"dropout_retain = {cfg.dropout_retain!r}",
        f"channel_means = {','.join(repr(m) for m in cfg.channel_means)}",
        f"prior_width = {'auto' if prior is None else prior[0]}",
        f"prior_height = {'auto' if prior is None else prior[1]}",
        f"normalized_prior = {'true' if cfg.normalized_prior else 'false'}",
    ]
    return "\n".join(lines) + "\n"
