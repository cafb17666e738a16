"""Experiment configuration files.

Grammar, one setting per line::

    # comment (also allowed after a value)
    key = value

Keys are dotted names from :data:`SCHEMA`; anything else is rejected. Values
are bare tokens: integers, decimals (``1e-3`` is fine), ``true``/``false``,
or preset names. Blank lines are ignored, a key may appear only once, and
unset keys take the defaults listed in the schema. ``pif.*`` keys, when
given, override the PIF layer of ``model.pif``.

Example::

    model.baseline = baseline-a-desk
    model.pif = pif-a-desk
    train.lr = 0.001
    train.repeats = 10
    augment.mode = translate
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, FormatError
from .model import ModelSpec
from .presets import get_preset
from .training import TrainConfig

_BOOLS = {"true": True, "false": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOLS[text.lower()]
    except KeyError:
        raise ValueError(f"expected true or false, got {text!r}") from None


# key -> (type parser, default); None means "keep what the preset says"
SCHEMA: dict[str, tuple] = {
    "model.baseline": (str, "baseline-a-desk"),
    "model.pif": (str, "pif-a-desk"),
    "pif.patch_size": (int, None),
    "pif.filters": (int, None),
    "pif.kernel_size": (int, None),
    "pif.overlap": (_parse_bool, None),
    "train.lr": (float, 1e-3),
    "train.weight_decay": (float, 1e-4),
    "train.batch_size": (int, 8),
    "train.patience": (int, 8),
    "train.max_epochs": (int, 50),
    "train.seed": (int, 0),
    "train.repeats": (int, 10),
    "augment.mode": (str, "none"),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def baseline(self) -> ModelSpec:
        return get_preset(self["model.baseline"])

    @property
    def pif(self) -> ModelSpec:
        spec = get_preset(self["model.pif"])
        overrides = {name: self[f"pif.{key}"] for key, name in
                     (("patch_size", "patch_size"), ("filters", "out_channels"),
                      ("kernel_size", "kernel_size"), ("overlap", "overlap"))
                     if self[f"pif.{key}"] is not None}
        if not overrides:
            return spec
        if not spec.has_pif:
            raise ConfigError(f"pif.* keys given but {spec.name} has no PIF layer")
        layers = tuple(dataclasses.replace(l, **overrides) if l.kind == "pif" else l for l in spec.layers)
        return ModelSpec(spec.name, spec.input_shape, layers)

    @property
    def train(self) -> TrainConfig:
        cfg = TrainConfig(lr=self["train.lr"], weight_decay=self["train.weight_decay"],
                          batch_size=self["train.batch_size"], max_epochs=self["train.max_epochs"],
                          patience=self["train.patience"], seed=self["train.seed"],
                          repeats=self["train.repeats"], augment=self["augment.mode"])
        cfg.validate()
        return cfg

    def render(self) -> str:
        """Every key with its resolved value, in a form :func:`parse_config` reads back."""
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if v is None:
                lines.append(f"# {key} = (preset)")
            elif isinstance(v, bool):
                lines.append(f"{key} = {str(v).lower()}")
            else:
                lines.append(f"{key} = {v!r}" if isinstance(v, float) else f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key or not value:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        kind = SCHEMA[key][0]
        try:
            cfg.values[key] = kind(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
