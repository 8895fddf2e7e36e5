"""YAML run configuration: schema, validation with line numbers, and
conversion to library objects.

Unknown keys are rejected. Every error names the dotted field path and the
line it was found on.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import DEFAULT_MAGNITUDES, IMAGE_POOL, VECTOR_POOL, AugmentPolicy
from .data import SplitSpec
from .losses import LossWeights
from .trainer import MODES, TrainConfig, config_digest

SCHEMA_VERSION = 1

DEFAULT_COMPARE_MODES = [
    "supervised", "ft:0.5", "ft:0.8", "ft:0.95",
    "ada-cm-no-contrastive", "contrastive-only", "ada-cm",
]

REQUIRED = object()

# leaf: (accepted types, default); a nested dict is a sub-section
SCHEMA = {
    "schema_version": ((int,), REQUIRED),
    "output": ((str,), "runs/default"),
    "seeds": ((list,), [0]),
    "checkpoint_every": ((int,), 0),
    "dataset": {
        "source": ((str,), "synth"),
        "path": ((str, type(None)), None),
        "n_classes": ((int, type(None)), None),
        "standardize": ((bool,), True),
        "synth": {
            "seed": ((int,), 0),
            "n_classes": ((int,), 4),
            "per_class": ((int,), 600),
            "dim": ((int,), 16),
            "difficulty": ((float, int), 0.6),
        },
    },
    "split": {
        "n_labeled": ((int,), REQUIRED),
        "seed": ((int,), 0),
        "balanced": ((bool,), True),
        "test_fraction": ((float, int), 0.1),
    },
    "train": {
        "mode": ((str,), "ada-cm"),
        "threshold": ((float, int, type(None)), None),
        "epochs": ((int,), 20),
        "labeled_batch": ((int,), 16),
        "unlabeled_batch": ((int,), 16),
        "lr": ((float, int), 5e-4),
        "beta1": ((float, int), 0.9),
        "beta2": ((float, int), 0.999),
        "eps": ((float, int), 1e-8),
        "lam1": ((float, int), 0.5),
        "lam2": ((float, int), 1.0),
        "lam3": ((float, int), 0.1),
        "tau": ((float, int), 0.1),
        "B": ((float, int), 0.97),
        "gamma": ((float, int), math.e),
        "initial_margin": ((float, int), 0.8),
        "hidden": ((int,), 64),
        "embed_dim": ((int,), 32),
        "activation": ((str,), "tanh"),
        "conv_channels": ((list,), []),
        "update": ((str,), "combined"),
    },
    "augment": {
        "weak": {
            "jitter": ((float, int), 0.05),
            "pad": ((int,), 2),
            "flip": ((bool,), True),
        },
        "strong": {
            "jitter": ((float, int), 0.25),
            "pool": ((list,), list(VECTOR_POOL + IMAGE_POOL)),
            "n_ops": ((int,), 2),
            "magnitudes": ((dict,), {k: list(v) for k, v in DEFAULT_MAGNITUDES.items()}),
        },
    },
    "compare": {
        "modes": ((list,), list(DEFAULT_COMPARE_MODES)),
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the field and line."""


def _line(node) -> int:
    return node.start_mark.line + 1


def _validate(node, schema: dict, path: str, out: dict) -> None:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"line {_line(node)}: {path or 'config'} must be a mapping")
    seen = {}
    for key_node, value_node in node.value:
        key = key_node.value
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"line {_line(key_node)}: unknown field {where}")
        if key in seen:
            raise ConfigError(f"line {_line(key_node)}: duplicate field {where}")
        seen[key] = value_node
    for key, spec in schema.items():
        where = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            sub = {}
            if key in seen:
                _validate(seen[key], spec, where, sub)
            else:
                _fill_defaults(spec, where, sub)
            out[key] = sub
            continue
        types, default = spec
        if key not in seen:
            if default is REQUIRED:
                raise ConfigError(f"missing required field {where}")
            out[key] = copy.deepcopy(default)
            continue
        value = yaml.safe_load(yaml.serialize(seen[key]))
        if float in types and isinstance(value, str):
            # YAML 1.1 reads "5e-4" as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) and bool not in types:
            ok = False
        else:
            ok = isinstance(value, types)
        if not ok:
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"line {_line(seen[key])}: field {where} expects {names}, got {value!r}")
        out[key] = value


def _fill_defaults(schema: dict, path: str, out: dict) -> None:
    for key, spec in schema.items():
        where = f"{path}.{key}"
        if isinstance(spec, dict):
            out[key] = {}
            _fill_defaults(spec, where, out[key])
        elif spec[1] is REQUIRED:
            raise ConfigError(f"missing required field {where}")
        else:
            out[key] = copy.deepcopy(spec[1])


@dataclass
class RunConfig:
    resolved: dict
    split: SplitSpec
    train: TrainConfig
    output: Path
    seeds: list[int]
    modes: list[str] = field(default_factory=list)
    checkpoint_every: int = 0

    @property
    def dataset(self) -> dict:
        return self.resolved["dataset"]

    @property
    def digest(self) -> str:
        return config_digest(self.resolved)

    def dump(self) -> str:
        return yaml.safe_dump(self.resolved, sort_keys=True)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        raise ConfigError("empty config")
    resolved: dict = {}
    _validate(root, SCHEMA, "", resolved)
    if resolved["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"field schema_version: unsupported version {resolved['schema_version']}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            resolved["seeds"] = [int(value)]
        elif key == "mode":
            resolved["train"]["mode"], _, thr = value.replace("=", ":").partition(":")
            if resolved["train"]["mode"] == "ft":
                resolved["train"]["mode"] = "fixed-threshold"
            if thr:
                resolved["train"]["threshold"] = float(thr)
        elif key == "out":
            resolved["output"] = str(value)
        elif key == "epochs":
            resolved["train"]["epochs"] = int(value)
        else:
            raise ConfigError(f"override --{key} is not supported")
    return build(resolved)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def build(resolved: dict) -> RunConfig:
    """Turn a validated dict into library objects (semantic checks happen here)."""
    d, s, t, a = resolved["dataset"], resolved["split"], resolved["train"], resolved["augment"]
    if d["source"] not in ("synth", "idx", "raster", "text"):
        raise ConfigError(f"field dataset.source: unknown source {d['source']!r}")
    if d["source"] != "synth" and not d["path"]:
        raise ConfigError("field dataset.path: required when dataset.source is not synth")
    if not all(isinstance(x, int) and not isinstance(x, bool) for x in resolved["seeds"]) or not resolved["seeds"]:
        raise ConfigError("field seeds: expects a non-empty list of integers")
    if t["mode"] not in MODES:
        raise ConfigError(f"field train.mode: unknown mode {t['mode']!r}")
    try:
        weights = LossWeights(float(t["lam1"]), float(t["lam2"]), float(t["lam3"]), float(t["tau"]))
        weak = AugmentPolicy("weak", jitter=float(a["weak"]["jitter"]), pad=a["weak"]["pad"], flip=a["weak"]["flip"])
        strong = AugmentPolicy(
            "strong", jitter=float(a["strong"]["jitter"]), pool=tuple(a["strong"]["pool"]),
            n_ops=a["strong"]["n_ops"],
            magnitudes={k: tuple(float(x) for x in v) for k, v in a["strong"]["magnitudes"].items()},
        )
        train = TrainConfig(
            mode=t["mode"],
            threshold=None if t["threshold"] is None else float(t["threshold"]),
            epochs=t["epochs"], labeled_batch=t["labeled_batch"], unlabeled_batch=t["unlabeled_batch"],
            lr=float(t["lr"]), beta1=float(t["beta1"]), beta2=float(t["beta2"]), eps=float(t["eps"]),
            weights=weights, B=float(t["B"]), gamma=float(t["gamma"]),
            initial_margin=float(t["initial_margin"]), seed=resolved["seeds"][0],
            hidden=t["hidden"], embed_dim=t["embed_dim"], activation=t["activation"],
            conv_channels=tuple(int(c) for c in t["conv_channels"]), update=t["update"],
            weak=weak, strong=strong,
        )
        split = SplitSpec(s["n_labeled"], s["seed"], s["balanced"], float(s["test_fraction"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid setting: {exc}") from None
    return RunConfig(
        resolved=resolved,
        split=split,
        train=train,
        output=Path(resolved["output"]),
        seeds=list(resolved["seeds"]),
        modes=list(resolved["compare"]["modes"]),
        checkpoint_every=resolved["checkpoint_every"],
    )


def default_config_text(n_labeled: int = 40, output: str = "runs/default") -> str:
    """The reference synthetic-benchmark config as YAML text."""
    return (
        f"schema_version: {SCHEMA_VERSION}\n"
        f"output: {output}\n"
        "seeds: [0, 1, 2, 3, 4]\n"
        "dataset:\n  source: synth\n  synth: {seed: 0, n_classes: 4, per_class: 600, dim: 16, difficulty: 0.6}\n"
        f"split:\n  n_labeled: {n_labeled}\n  seed: 0\n  balanced: true\n  test_fraction: 0.1\n"
        "train:\n  mode: ada-cm\n  epochs: 20\n"
    )
