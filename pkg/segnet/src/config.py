"""Model, optimiser and loss-weight configuration.

Values are layered ``defaults <- profile <- file <- overrides`` and then
validated.  Files use a flat ``key = value`` format with ``#`` comments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import voluptuous as vol

logger = logging.getLogger(__name__)

CONFIG_ERROR = "CONFIG_ERROR"


class ConfigError(Exception):
    """Raised when a configuration value is missing, malformed or inconsistent."""

    def __init__(self, message: str, field_name: Optional[str] = None) -> None:
        super().__init__(message)
        self.field_name = field_name


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-4
    batch_size: int = 80
    grad_clip: float = 1.0
    lr_decay: float = 0.5
    patience: int = 5
    max_epochs: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.7
    beta: float = 0.5
    omega_selector: float = 0.7
    omega_extractor: float = 2.0


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 512
    n_layers: int = 6
    n_heads: int = 8
    d_k: int = 64
    d_v: int = 64
    d_ff: int = 2048
    char_filters: int = 512
    char_embed_dim: int = 32
    char_width: int = 3
    max_word_len: int = 20
    pos_tag_layer: int = 3
    selector_layers: int = 6
    relative_clip: int = 16
    vocab_size: int = 50000
    max_src_len: int = 200
    max_sentences: int = 256
    max_decode_len: int = 40
    dropout: float = 0.2
    maxout_pieces: int = 2
    threshold: float = 0.5
    extract_threshold: float = 0.5
    seed: int = 13
    precision: str = "float32"
    use_coverage: bool = True
    informed_copy: bool = True
    multitask: bool = True
    use_char_embedding: bool = True
    use_segment_embedding: bool = True
    use_pos_embedding: bool = True
    layerwise_coordination: bool = True
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def to_flat(self) -> Dict[str, Any]:
        """All values under their file keys, nested records flattened."""
        flat: Dict[str, Any] = {}
        for item in fields(self):
            if item.name in ("optim", "loss"):
                continue
            flat[item.name] = getattr(self, item.name)
        for record in (self.optim, self.loss):
            for item in fields(record):
                flat[item.name] = getattr(record, item.name)
        return flat

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "ModelConfig":
        return build_config(values)

    def replace(self, **changes: Any) -> "ModelConfig":
        values = self.to_flat()
        values.update(changes)
        return build_config(values)


# ── Field catalogue ─────────────────────────────────────────────────

_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig) if f.name not in ("optim", "loss")}
_OPTIM_FIELDS = {f.name: f for f in fields(OptimConfig)}
_LOSS_FIELDS = {f.name: f for f in fields(LossWeights)}
_ALL_FIELDS = {**_MODEL_FIELDS, **_OPTIM_FIELDS, **_LOSS_FIELDS}

# fields whose value follows from others unless set explicitly
DERIVED_FIELDS = ("d_k", "d_v", "char_filters", "pos_tag_layer", "selector_layers")

ALIASES = {
    "L": "n_layers",
    "h": "n_heads",
    "l": "pos_tag_layer",
    "k": "relative_clip",
    "lr": "learning_rate",
}

PROFILES: Dict[str, Dict[str, Any]] = {
    "full": {},
    "desk": {
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 2,
        "d_ff": 128,
        "vocab_size": 2000,
        "char_embed_dim": 16,
        "max_sentences": 64,
        "batch_size": 8,
        "learning_rate": 1e-3,
    },
}

_POSITIVE_INT = vol.All(int, vol.Range(min=1))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_UNIT = vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0))

CONFIG_SCHEMA = vol.Schema(
    {
        **{vol.Required(name): _POSITIVE_INT for name, f in _ALL_FIELDS.items() if f.type == "int"},
        **{vol.Required(name): bool for name, f in _ALL_FIELDS.items() if f.type == "bool"},
        vol.Required("dropout"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, max_included=False)
        ),
        vol.Required("threshold"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False)
        ),
        vol.Required("extract_threshold"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False)
        ),
        vol.Required("seed"): vol.All(int, vol.Range(min=0)),
        vol.Required("precision"): vol.In(["float32", "float64"]),
        vol.Required("learning_rate"): _POSITIVE_FLOAT,
        vol.Required("grad_clip"): _POSITIVE_FLOAT,
        vol.Required("lr_decay"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False)
        ),
        vol.Required("adam_beta1"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, max_included=False)
        ),
        vol.Required("adam_beta2"): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, max_included=False)
        ),
        vol.Required("adam_eps"): _POSITIVE_FLOAT,
        vol.Required("alpha"): _UNIT,
        vol.Required("beta"): _UNIT,
        vol.Required("omega_selector"): _POSITIVE_FLOAT,
        vol.Required("omega_extractor"): _POSITIVE_FLOAT,
    },
    extra=vol.PREVENT_EXTRA,
)


# ── Parsing ─────────────────────────────────────────────────────────


def _canonical_key(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key)
    if key not in _ALL_FIELDS:
        raise ConfigError(f"Unknown config field '{key}'", key)
    return key


def _coerce(key: str, value: Any) -> Any:
    """Turn file text into the field's type; non-strings pass through."""
    if not isinstance(value, str):
        return value
    kind = _ALL_FIELDS[key].type
    text = value.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(
            f"Invalid value for '{key}': expected {kind}, got {text!r}", key
        ) from exc
    return text


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines.

    Raises:
        ConfigError: On a malformed line or unknown key.
    """
    values: Dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        name = _canonical_key(key)
        values[name] = _coerce(name, value)
    return values


def parse_overrides(overrides: Union[Mapping[str, Any], Iterable[str], None]) -> Dict[str, Any]:
    if overrides is None:
        return {}
    if isinstance(overrides, Mapping):
        items = list(overrides.items())
    else:
        items = []
        for entry in overrides:
            if "=" not in entry:
                raise ConfigError(f"Override must look like key=value, got {entry!r}")
            key, value = entry.split("=", 1)
            items.append((key, value))
    values: Dict[str, Any] = {}
    for key, value in items:
        name = _canonical_key(key)
        values[name] = _coerce(name, value)
    return values


# ── Building and validation ─────────────────────────────────────────


def _derive(values: Dict[str, Any]) -> None:
    heads = values.get("n_heads") or 1
    d_model = values.get("d_model") or 0
    if values.get("d_k") is None:
        values["d_k"] = d_model // heads
    if values.get("d_v") is None:
        values["d_v"] = d_model // heads
    if values.get("char_filters") is None:
        values["char_filters"] = d_model
    if values.get("pos_tag_layer") is None:
        values["pos_tag_layer"] = math.ceil(values.get("n_layers", 1) / 2)
    if values.get("selector_layers") is None:
        values["selector_layers"] = values.get("n_layers")


def _check_relations(values: Mapping[str, Any]) -> None:
    if values["d_model"] != values["n_heads"] * values["d_k"]:
        raise ConfigError(
            f"Invalid value for 'd_k': d_model={values['d_model']} must equal "
            f"n_heads*d_k={values['n_heads']}*{values['d_k']}",
            "d_k",
        )
    if values["pos_tag_layer"] > values["n_layers"]:
        raise ConfigError(
            f"Invalid value for 'pos_tag_layer': {values['pos_tag_layer']} exceeds "
            f"n_layers={values['n_layers']}",
            "pos_tag_layer",
        )
    if values["char_filters"] != values["d_model"]:
        raise ConfigError(
            f"Invalid value for 'char_filters': {values['char_filters']} must equal "
            f"d_model={values['d_model']}",
            "char_filters",
        )
    if values["maxout_pieces"] < 2:
        raise ConfigError("Invalid value for 'maxout_pieces': needs at least 2", "maxout_pieces")


def build_config(values: Mapping[str, Any]) -> ModelConfig:
    """Fill derived fields, validate and build the config record.

    Raises:
        ConfigError: Naming the first offending field.
    """
    merged: Dict[str, Any] = {name: f.default for name, f in _ALL_FIELDS.items()}
    for name in DERIVED_FIELDS:
        merged[name] = None
    for key, value in values.items():
        merged[_canonical_key(key)] = value
    _derive(merged)
    try:
        checked = CONFIG_SCHEMA(merged)
    except vol.MultipleInvalid as exc:
        error = exc.errors[0]
        name = str(error.path[0]) if error.path else "?"
        logger.error("[%s] %s: %s", CONFIG_ERROR, name, error.msg)
        raise ConfigError(f"Invalid value for '{name}': {error.msg}", name) from exc
    _check_relations(checked)
    return ModelConfig(
        **{name: checked[name] for name in _MODEL_FIELDS},
        optim=OptimConfig(**{name: checked[name] for name in _OPTIM_FIELDS}),
        loss=LossWeights(**{name: checked[name] for name in _LOSS_FIELDS}),
    )


def profile_values(profile: str) -> Dict[str, Any]:
    if profile not in PROFILES:
        raise ConfigError(
            f"Unknown profile '{profile}' (expected one of {sorted(PROFILES)})", "profile"
        )
    return dict(PROFILES[profile])


def load_config(
    path: Optional[Path] = None,
    overrides: Union[Mapping[str, Any], Iterable[str], None] = None,
    profile: str = "full",
) -> ModelConfig:
    """Layer profile, file and overrides on top of the defaults.

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values.
    """
    values = profile_values(profile)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update(parse_overrides(overrides))
    config = build_config(values)
    logger.debug("Effective config: %s", config.to_flat())
    return config


def format_config(config: ModelConfig) -> str:
    lines = [f"{key} = {_format_value(value)}" for key, value in config.to_flat().items()]
    return "\n".join(lines) + "\n"


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def save_config(config: ModelConfig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(config), encoding="utf-8")
