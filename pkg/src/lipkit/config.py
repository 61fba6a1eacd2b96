"""Training config files: flat ``key = value`` sections mirroring the config records.

Three sections are recognized: ``[train]`` (TrainConfig scalars), ``[augment]``
(AugmentConfig) and ``[model]`` (ALNConfig). Keys are the dataclass field
names; unknown sections or keys are errors. List- and pair-valued fields use
comma-separated values (``stage_widths = 16, 32``); optional pair fields accept
``none`` to disable (``cutout = none``). The ``[model]`` dropblock setting is
overridden by ``[augment]`` dropblock at training time, which owns the recipe.
"""

from __future__ import annotations

import configparser
import io
import os
from pathlib import Path

from .augment import AugmentConfig
from .errors import FormatError
from .model import ALNConfig
from .training import TrainConfig


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in s.split(","))


def _parse_float_pair(s: str) -> tuple[float, float]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {s!r}")
    return float(parts[0]), float(parts[1])


def _parse_opt_int_pair(s: str) -> tuple[int, int] | None:
    if s.strip().lower() in ("none", "off", ""):
        return None
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values or 'none', got {s!r}")
    return int(parts[0]), int(parts[1])


def _parse_opt_dropblock(s: str) -> tuple[int, float] | None:
    if s.strip().lower() in ("none", "off", ""):
        return None
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'block_size, drop_rate' or 'none', got {s!r}")
    return int(parts[0]), float(parts[1])


def _parse_opt_float(s: str) -> float | None:
    if s.strip().lower() in ("none", "off", ""):
        return None
    return float(s)


def _parse_opt_int(s: str) -> int | None:
    if s.strip().lower() in ("none", ""):
        return None
    return int(s)


_TRAIN_FIELDS = {
    "lr_max": float,
    "lr_min": float,
    "batch_size": int,
    "epochs": int,
    "adam_betas": _parse_float_pair,
    "adam_eps": float,
    "seed": int,
    "schedule": str,
    "weight_decay": float,
    "grad_clip": float,
    "max_skip_fraction": float,
}

_AUGMENT_FIELDS = {
    "crop_size": int,
    "flip_prob": float,
    "cutout": _parse_opt_int_pair,
    "mixup_alpha": _parse_opt_float,
    "smoothing_eps": float,
    "dropblock": _parse_opt_dropblock,
    "mixup_per_sample": _parse_bool,
}

_MODEL_FIELDS = {
    "num_classes": _parse_opt_int,
    "input_size": int,
    "frontend_channels": int,
    "stage_widths": _parse_int_tuple,
    "blocks_per_stage": _parse_int_tuple,
    "radix": int,
    "cardinality": int,
    "rnn_hidden": int,
    "rnn_layers": int,
    "bidirectional": _parse_bool,
    "dropblock": _parse_opt_dropblock,
    "frontend_time_kernel": int,
    "frontend_space_kernel": int,
    "frontend_space_stride": int,
}

_SECTIONS = {"train": _TRAIN_FIELDS, "augment": _AUGMENT_FIELDS, "model": _MODEL_FIELDS}


def parse_train_config(text: str, source: str = "<config>") -> TrainConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise FormatError(f"{source}: {exc}") from None
    sections: dict[str, dict] = {"train": {}, "augment": {}, "model": {}}
    for section in parser.sections():
        fields = _SECTIONS.get(section)
        if fields is None:
            raise FormatError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            parse = fields.get(key)
            if parse is None:
                raise FormatError(f"{source}: unknown key {key!r} in section [{section}]")
            try:
                sections[section][key] = parse(raw)
            except ValueError as exc:
                raise FormatError(f"{source}: bad value for {section}.{key}: {exc}") from None
    try:
        config = TrainConfig(
            augment=AugmentConfig(**sections["augment"]),
            model=ALNConfig(**sections["model"]),
            **sections["train"],
        )
        config.validate()
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None
    return config


def load_train_config(path: str | os.PathLike) -> TrainConfig:
    path = Path(path)
    return parse_train_config(path.read_text(encoding="utf-8"), source=str(path))


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return str(value)


def dump_train_config(config: TrainConfig) -> str:
    """Render a config back to the file format (parse . dump is the identity)."""
    out = io.StringIO()
    groups = (
        ("train", _TRAIN_FIELDS, config),
        ("augment", _AUGMENT_FIELDS, config.augment),
        ("model", _MODEL_FIELDS, config.model),
    )
    for section, fields, obj in groups:
        out.write(f"[{section}]\n")
        for key in fields:
            out.write(f"{key} = {_format_value(getattr(obj, key))}\n")
        out.write("\n")
    return out.getvalue()
