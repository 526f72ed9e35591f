"""Flat ``key = value`` experiment files.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected and
every value is range-checked. Relative paths resolve against the config
file's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError, ConfigParseError, MissingKey, RangeError, UnknownKey
from .trainer import METHODS, RunConfig
from .stream import SCENARIOS


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.split(","))


def _fmt_list(v) -> str:
    return ",".join(str(x) for x in v)


def _positive(v) -> bool:
    return v > 0


def _at_least_one(v) -> bool:
    return v >= 1


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    check: Callable[[Any], bool] | None = None
    fmt: Callable[[Any], str] = str
    required: bool = False
    numeric: bool = False


SCHEMA: dict[str, Key] = {
    "scenario": Key(str, required=True, check=lambda v: v in SCENARIOS),
    "method": Key(str, required=True, check=lambda v: v in METHODS),
    "data": Key(str, required=True, check=lambda v: bool(v)),
    "taxonomy": Key(str, ""),
    "test_data": Key(str, ""),
    "synth_level_sizes": Key(_int_list, (5, 20), lambda v: len(v) >= 1 and all(x >= 1 for x in v), _fmt_list),
    "synth_feature_dim": Key(int, 32, _at_least_one, numeric=True),
    "synth_samples_per_leaf": Key(int, 200, _at_least_one, numeric=True),
    "synth_parent_spread": Key(float, 4.0, _positive, numeric=True),
    "synth_child_spread": Key(float, 1.0, _positive, numeric=True),
    "synth_noise": Key(float, 0.3, lambda v: v >= 0, numeric=True),
    "data_seed": Key(int, 0, lambda v: v >= 0, numeric=True),
    "test_fraction": Key(float, 0.25, lambda v: 0 < v < 1, numeric=True),
    "stream_batch_size": Key(int, 16, _at_least_one, numeric=True),
    "updates_per_stream_batch": Key(float, 3.0, _positive, numeric=True),
    "memory_size": Key(int, 200, _at_least_one, numeric=True),
    "ramp_T": Key(int, 5000, _at_least_one, numeric=True),
    "learning_rate": Key(float, 0.05, _positive, numeric=True),
    "eval_every": Key(int, 100, _at_least_one, numeric=True),
    "hidden_layers": Key(_int_list, (64,), lambda v: all(x >= 1 for x in v), _fmt_list),
    "tasks_after_first": Key(int, 2, _at_least_one, numeric=True),
    "first_task_fraction": Key(float, 0.5, lambda v: 0 < v < 1, numeric=True),
    "num_tasks": Key(int, 5, _at_least_one, numeric=True),
    "importance_mode": Key(str, "ema", lambda v: v in ("ema", "exact")),
    "importance_alpha": Key(float, 0.1, lambda v: 0 < v <= 1, numeric=True),
    "seeds": Key(_int_list, (0,), lambda v: len(v) >= 1 and all(x >= 0 for x in v), _fmt_list),
    "out_dir": Key(str, "runs"),
}

SWEEPABLE = tuple(k for k, spec in SCHEMA.items() if spec.numeric)

RUN_KEYS = (
    "scenario", "method", "stream_batch_size", "updates_per_stream_batch", "memory_size", "ramp_T",
    "learning_rate", "eval_every", "hidden_layers", "tasks_after_first", "first_task_fraction",
    "num_tasks", "importance_mode", "importance_alpha",
)


@dataclass
class ExperimentFile:
    values: dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key):
        return self.values[key]

    def run_config(self, seed: int) -> RunConfig:
        kw = {k: self.values[k] for k in RUN_KEYS}
        return RunConfig(seed=seed, **kw).validate()

    def path(self, key: str) -> Path | None:
        v = self.values[key]
        if not v or v == "synthetic":
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def with_value(self, key: str, raw: str) -> "ExperimentFile":
        values = dict(self.values)
        values[key] = _coerce(key, raw, None)
        return ExperimentFile(values, self.base_dir)

    def serialize(self) -> str:
        return "".join(f"{k} = {SCHEMA[k].fmt(self.values[k])}\n" for k in SCHEMA)


def _coerce(key: str, raw: str, lineno: int | None):
    spec = SCHEMA.get(key)
    if spec is None:
        raise UnknownKey(f"unknown key {key!r}", lineno)
    try:
        value = spec.parse(raw.strip())
    except ValueError:
        raise RangeError(f"bad value {raw!r} for {key}", lineno) from None
    if spec.check is not None and not spec.check(value):
        raise RangeError(f"value {raw!r} out of range for {key}", lineno)
    return value


def parse_config_text(text: str, base_dir: Path | None = None) -> ExperimentFile:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigParseError(f"expected key = value, got {raw!r}", lineno)
        key = key.strip()
        if key in values:
            raise ConfigParseError(f"duplicate key {key!r}", lineno)
        values[key] = _coerce(key, value, lineno)
    for key, spec in SCHEMA.items():
        if key not in values:
            if spec.required:
                raise MissingKey(f"missing required key {key!r}")
            values[key] = spec.default
    exp = ExperimentFile(values, base_dir or Path.cwd())
    if exp["data"] != "synthetic" and not exp["taxonomy"]:
        raise MissingKey("a data file needs a taxonomy file")
    return exp


def parse_config(path: str | Path) -> ExperimentFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, path.parent)

