"""Experiment configuration: schema, parsing, validation, round-trip dump.

Configs are flat ``key = value`` files with namespaced keys (``#`` starts a
comment); a JSON object with the same keys is accepted as an alternative.
Unknown keys are rejected. ``dump_config`` writes the fully resolved
configuration with round-trip float formatting so the echoed copy re-runs
bit-for-bit.
"""

import json
from dataclasses import dataclass, fields

from .errors import ConfigError

STRATEGIES = ("fedavg", "fedprox", "local_gc", "global_gc", "gc_fed")
AGGREGATIONS = ("uniform", "by_nk")
FAIL_POLICIES = ("continue", "abort")
DATA_KINDS = ("synthetic", "idx")
ARCH_KINDS = ("mlp", "linear", "cnn")


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(part) for part in str(text).split(",") if part.strip() != "")


@dataclass
class ExperimentConfig:
    """Every knob of a simulation run, with defaults for the standard recipe."""

    seed: int = 0
    rounds: int = 200
    num_clients: int = 50
    participating: int = 5
    local_epochs: int = 5
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 50
    alpha: float = 0.05
    strategy: str = "fedavg"
    gc_lambda: float = 0.75
    gc_axis_mode: str = "per_out"
    fedprox_mu: float = 0.01
    aggregation: str = "uniform"
    fail_policy: str = "continue"
    workers: int = 1
    smooth_window: int = 10
    discrepancy_every: int = 0
    cka_every: int = 0
    probe_samples: int = 512

    data_kind: str = "synthetic"
    # synthetic task
    data_classes: int = 10
    data_input_dim: int = 32
    data_separation: float = 3.0
    data_noise_sigma: float = 1.0
    data_samples_per_class: int = 400
    # idx files
    data_train_images: str = ""
    data_train_labels: str = ""
    data_test_images: str = ""
    data_test_labels: str = ""
    data_limit: int = 0

    arch_kind: str = "mlp"
    arch_widths: tuple = (32, 64, 10)
    arch_in_channels: int = 1
    arch_image_hw: tuple = (28, 28)
    arch_conv_channels: tuple = (32, 64)
    arch_kernel_size: int = 5
    arch_fc_widths: tuple = (512,)


# config key -> (attribute, parser)
_SCHEMA = {
    "seed": ("seed", int),
    "rounds": ("rounds", int),
    "clients.total": ("num_clients", int),
    "clients.participating": ("participating", int),
    "local.epochs": ("local_epochs", int),
    "local.lr": ("learning_rate", float),
    "local.momentum": ("momentum", float),
    "local.weight_decay": ("weight_decay", float),
    "local.batch_size": ("batch_size", int),
    "partition.alpha": ("alpha", float),
    "strategy": ("strategy", str),
    "gc.lambda": ("gc_lambda", float),
    "gc.axis_mode": ("gc_axis_mode", str),
    "fedprox.mu": ("fedprox_mu", float),
    "aggregation": ("aggregation", str),
    "fail_policy": ("fail_policy", str),
    "workers": ("workers", int),
    "eval.smooth_window": ("smooth_window", int),
    "measure.discrepancy_every": ("discrepancy_every", int),
    "measure.cka_every": ("cka_every", int),
    "measure.probe_samples": ("probe_samples", int),
    "data.kind": ("data_kind", str),
    "data.classes": ("data_classes", int),
    "data.input_dim": ("data_input_dim", int),
    "data.separation": ("data_separation", float),
    "data.noise_sigma": ("data_noise_sigma", float),
    "data.samples_per_class": ("data_samples_per_class", int),
    "data.train_images": ("data_train_images", str),
    "data.train_labels": ("data_train_labels", str),
    "data.test_images": ("data_test_images", str),
    "data.test_labels": ("data_test_labels", str),
    "data.limit": ("data_limit", int),
    "arch.kind": ("arch_kind", str),
    "arch.widths": ("arch_widths", _parse_ints),
    "arch.in_channels": ("arch_in_channels", int),
    "arch.image_hw": ("arch_image_hw", _parse_ints),
    "arch.conv_channels": ("arch_conv_channels", _parse_ints),
    "arch.kernel_size": ("arch_kernel_size", int),
    "arch.fc_widths": ("arch_fc_widths", _parse_ints),
}

# participation ratio is accepted as an alternative to an absolute count
_RATIO_KEY = "clients.ratio"

_ATTR_TO_KEY = {attr: key for key, (attr, _) in _SCHEMA.items()}


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Enforce the config invariants; returns the config for chaining."""
    if cfg.num_clients < 1:
        raise ConfigError("clients.total must be >= 1")
    if not 1 <= cfg.participating <= cfg.num_clients:
        raise ConfigError(
            f"clients.participating must lie in [1, {cfg.num_clients}], got {cfg.participating}"
        )
    if cfg.rounds < 0 or cfg.local_epochs < 0:
        raise ConfigError("rounds and local.epochs must be >= 0")
    if cfg.learning_rate <= 0:
        raise ConfigError("local.lr must be > 0")
    if cfg.momentum < 0 or cfg.weight_decay < 0:
        raise ConfigError("local.momentum and local.weight_decay must be >= 0")
    if cfg.batch_size < 1:
        raise ConfigError("local.batch_size must be >= 1")
    if cfg.alpha <= 0:
        raise ConfigError("partition.alpha must be > 0")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {cfg.strategy!r}")
    if not 0.0 <= cfg.gc_lambda <= 1.0:
        raise ConfigError("gc.lambda must lie in [0, 1]")
    if cfg.fedprox_mu < 0:
        raise ConfigError("fedprox.mu must be >= 0")
    if cfg.aggregation not in AGGREGATIONS:
        raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
    if cfg.fail_policy not in FAIL_POLICIES:
        raise ConfigError(f"fail_policy must be one of {FAIL_POLICIES}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.smooth_window < 1:
        raise ConfigError("eval.smooth_window must be >= 1")
    if cfg.discrepancy_every < 0 or cfg.cka_every < 0:
        raise ConfigError("measurement cadences must be >= 0 (0 disables)")
    if cfg.probe_samples < 2:
        raise ConfigError("measure.probe_samples must be >= 2")
    if cfg.data_kind not in DATA_KINDS:
        raise ConfigError(f"data.kind must be one of {DATA_KINDS}")
    if cfg.arch_kind not in ARCH_KINDS:
        raise ConfigError(f"arch.kind must be one of {ARCH_KINDS}")
    if cfg.data_kind == "synthetic":
        if cfg.data_classes < 2:
            raise ConfigError("data.classes must be >= 2")
        if cfg.data_noise_sigma <= 0:
            raise ConfigError("data.noise_sigma must be > 0")
        if cfg.data_samples_per_class < 1:
            raise ConfigError("data.samples_per_class must be >= 1")
    else:
        for keyed in ("data_train_images", "data_train_labels",
                      "data_test_images", "data_test_labels"):
            if not getattr(cfg, keyed):
                raise ConfigError(f"{_ATTR_TO_KEY[keyed]} is required for idx data")
    if len(cfg.arch_image_hw) != 2:
        raise ConfigError("arch.image_hw must be 'H,W'")
    return cfg


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    """Build a validated config from flat key/value pairs."""
    cfg = ExperimentConfig()
    ratio = None
    saw_participating = False
    for key, raw in mapping.items():
        if key == _RATIO_KEY:
            ratio = float(raw)
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parser = _SCHEMA[key]
        if attr == "participating":
            saw_participating = True
        try:
            setattr(cfg, attr, parser(raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
    if ratio is not None:
        if saw_participating:
            raise ConfigError("give either clients.participating or clients.ratio, not both")
        if not 0.0 < ratio <= 1.0:
            raise ConfigError("clients.ratio must lie in (0, 1]")
        cfg.participating = max(1, int(round(ratio * cfg.num_clients)))
    return validate_config(cfg)


def _parse_kv_text(text: str) -> dict:
    mapping = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in mapping:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value.strip()
    return mapping


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file (key=value or JSON)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if str(path).endswith(".json") or stripped.startswith("{"):
        try:
            mapping = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path}: JSON config must be an object")
    else:
        mapping = _parse_kv_text(text)
    try:
        return config_from_mapping(mapping)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    mapping = {}
    for f in fields(cfg):
        key = _ATTR_TO_KEY[f.name]
        mapping[key] = _format_value(getattr(cfg, f.name))
    return mapping


def dump_config(cfg: ExperimentConfig, path):
    """Write the resolved config; feeding it back reproduces the run."""
    lines = [f"{key} = {value}" for key, value in config_to_mapping(cfg).items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
