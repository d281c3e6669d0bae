"""Flat key-value run configuration.

Keys are namespaced by module (io.*, period.*, model.*, loss.*, train.*).
A run is configured from built-in defaults, then an optional JSON file of
flat keys, then repeated --set key=value overrides.  Unknown keys are
rejected.  Every command writes the fully resolved configuration next to
its outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .loss import LossConfig
from .model import Ablation, WindowConfig
from .periodicity import PeriodicityConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(parser):
    def inner(text):
        if text is None or str(text).strip().lower() in ("", "none", "null"):
            return None
        return parser(text)
    return inner


def _split_fractions(text) -> tuple[float, float, float]:
    if isinstance(text, (list, tuple)):
        parts = [float(p) for p in text]
    else:
        parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise ValueError("split needs three comma-separated fractions")
    if any(p < 0.0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
        raise ValueError("split fractions must be nonnegative and sum to 1")
    return tuple(parts)


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(p) for p in text)
    return tuple(int(p) for p in str(text).split(","))


def _loss_mode(text: str) -> str:
    LossConfig.from_string(str(text))  # validate eagerly
    return str(text).strip()


def _ablation(text: str) -> str:
    Ablation(str(text).strip())
    return str(text).strip()


def _schema_name(text: str) -> str:
    from .traceio import SCHEMAS
    name = str(text).strip()
    if name not in SCHEMAS:
        raise ValueError(f"unknown schema {name!r}; choose from {sorted(SCHEMAS)}")
    return name


# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    "io.schema": (_schema_name, "generic", "CSV column preset (generic/alibaba2018/dinda/smd)"),
    "io.tick": (_opt(float), None, "sampling interval seconds; default from the schema preset"),
    "io.allow_gaps": (_bool, False, "forward-fill timestamp gaps instead of rejecting them"),
    "period.threshold": (float, 0.5, "ACF peak threshold for the periodic verdict"),
    "period.k_min": (int, 2, "smallest candidate period"),
    "period.k_max": (_opt(int), None, "largest candidate period; default half the series"),
    "period.distance": (str, "mse", "template matching distance: mse or dtw"),
    "period.dtw_band": (_opt(int), None, "Sakoe-Chiba band for dtw matching"),
    "period.gmm_components": (int, 3, "mixture components for threshold fitting"),
    "model.i": (int, 50, "recent window length fed to the encoder"),
    "model.m": (int, 100, "long-context window length"),
    "model.j": (int, 2, "forecast horizon"),
    "model.hidden": (int, 80, "recurrent hidden size"),
    "model.layers": (int, 2, "encoder depth"),
    "model.ds_step": (int, 20, "long-context downsampling stride"),
    "model.ds_window": (int, 100, "trailing slice of the long context kept for downsampling"),
    "loss.mode": (_loss_mode, "limit", "limit, mse, or gamma:<float>"),
    "train.epochs": (int, 50, "training epochs"),
    "train.batch_size": (int, 100, "windows per optimizer step"),
    "train.lr": (float, 0.001, "learning rate"),
    "train.optimizer": (str, "adam", "adam or sgd"),
    "train.seed": (int, 0, "seed for init and shuffling"),
    "train.grad_clip": (_opt(float), None, "global gradient-norm clip; unset = off"),
    "train.patience": (int, 10, "early-stop patience on validation MSE"),
    "train.ablation": (_ablation, "full", "full, no_period, mse_loss or neither"),
    "train.split": (_split_fractions, (0.7, 0.1, 0.2), "chronological train/val/test fractions"),
    "train.ablation_seeds": (_int_list, (1, 2, 3), "seeds for the ablate command"),
}


class RunConfig:
    """Resolved flat configuration with typed accessors."""

    def __init__(self, values: dict, explicit: set[str] | None = None):
        self.values = values
        self.explicit = explicit if explicit is not None else set()

    @classmethod
    def resolve(cls, config_path: str | None = None, overrides: list[str] | None = None) -> "RunConfig":
        values = {key: default for key, (_, default, _) in KEYS.items()}
        explicit: set[str] = set()
        if config_path:
            try:
                raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config file must hold a JSON object of key: value pairs")
            for key, value in raw.items():
                values[key] = cls._parse(key, value)
                explicit.add(key)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"--set needs key=value, got {item!r}")
            key, _, value = item.partition("=")
            values[key.strip()] = cls._parse(key.strip(), value)
            explicit.add(key.strip())
        return cls(values, explicit)

    @staticmethod
    def _parse(key: str, value):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        parser = KEYS[key][0]
        try:
            return parser(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc

    def __getitem__(self, key: str):
        return self.values[key]

    def window_config(self) -> WindowConfig:
        try:
            return WindowConfig(
                i=self["model.i"], m=self["model.m"], j=self["model.j"],
                hidden=self["model.hidden"], layers=self["model.layers"],
                ds_step=self["model.ds_step"], ds_window=self["model.ds_window"],
            )
        except ValueError as exc:
            raise ConfigError(f"bad model config: {exc}") from exc

    def periodicity_config(self) -> PeriodicityConfig:
        try:
            return PeriodicityConfig(
                threshold=self["period.threshold"], k_min=self["period.k_min"],
                k_max=self["period.k_max"], distance=self["period.distance"],
                dtw_band=self["period.dtw_band"],
            )
        except ValueError as exc:
            raise ConfigError(f"bad period config: {exc}") from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self["train.epochs"], batch_size=self["train.batch_size"],
                learning_rate=self["train.lr"], optimizer=self["train.optimizer"],
                seed=self["train.seed"], grad_clip=self["train.grad_clip"],
                patience=self["train.patience"],
                ablation=Ablation(self["train.ablation"]),
                loss=LossConfig.from_string(self["loss.mode"]),
            )
        except ValueError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc

    def schema(self):
        from .traceio import SCHEMAS
        schema = SCHEMAS[self["io.schema"]]
        if self["io.tick"] is not None:
            from dataclasses import replace
            schema = replace(schema, tick=self["io.tick"])
        return schema

    def write(self, path: str | Path, extra: dict | None = None) -> None:
        """Serialise the resolved configuration (plus run metadata extras)."""
        out = {}
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = list(value)
            out[key] = value
        if extra:
            out.update(extra)
        Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def key_help() -> str:
    """One line per recognised config key, for --help epilogs."""
    lines = ["config keys (defaults in brackets):"]
    for key in sorted(KEYS):
        _, default, text = KEYS[key]
        lines.append(f"  {key:<24} {text} [{default}]")
    return "\n".join(lines)
