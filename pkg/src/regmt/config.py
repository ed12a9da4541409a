"""Experiment configuration: defaults < TOML file < command-line flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field, fields

import tomli


class ConfigError(ValueError):
    pass


SOLVERS = ("ridge", "fsr")
SELECTORS = ("dice", "random", "overlap")


@dataclass
class ExperimentConfig:
    output_dir: str = "regmt-out"
    corpus_source: str | None = None
    corpus_target: str | None = None

    synth: bool = False
    synth_vocab: int = 200
    synth_count: int = 2400
    synth_window: int = 1
    synth_reorder_prob: float = 0.2
    synth_min_len: int = 5
    synth_max_len: int = 12
    synth_zipf: float = 1.0

    len_min: int = 10
    len_max: int = 20
    cov_lo: float = 0.6
    cov_hi: float = 1.0
    per_bucket: int = 20

    order: int = 2
    weighted: bool = True
    selector: str = "dice"
    m_list: list[int] = field(default_factory=lambda: [100])
    selection_order: int = 2
    dice_denominator: str = "product"

    solvers: list[str] = field(default_factory=lambda: ["ridge", "fsr"])
    ridge_lambdas: list[float] = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    fsr_eps: float = 0.01
    fsr_iters: list[int] = field(default_factory=lambda: [50, 100, 200, 400])
    fsr_tol: float = 0.0

    dev_limit: int = 0
    test_limit: int = 0

    decode: bool = True
    decode_order: int = 2
    beam: int = 8
    alpha: float = 1.0
    lm_order: int = 3
    multiplicity: str = "round"
    restarts: bool = True
    decode_scales: list[float] = field(default_factory=lambda: [1.0, 0.5, 0.25])
    tune_rounds: int = 1
    weight_grid: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.3, 1.0, 3.0, 10.0])
    trace: bool = False

    export_pt: bool = False
    ttable_limit: int = 20

    seed: int = 0
    workers: int = 0

    def validate(self) -> "ExperimentConfig":
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        need(self.synth or (self.corpus_source and self.corpus_target), "corpus_source",
             "corpus_source and corpus_target are required unless synth = true")
        if not self.synth:
            for name in ("corpus_source", "corpus_target"):
                need(os.path.exists(getattr(self, name)), name,
                     f"file not found: {getattr(self, name)}")
        need(self.synth_vocab >= 2, "synth_vocab", "must be >= 2")
        need(self.synth_count >= 1, "synth_count", "must be >= 1")
        need(1 <= self.synth_min_len <= self.synth_max_len, "synth_min_len",
             "need 1 <= synth_min_len <= synth_max_len")
        need(0 <= self.cov_lo < self.cov_hi <= 1, "cov_lo", "need 0 <= cov_lo < cov_hi <= 1")
        need(self.len_min <= self.len_max, "len_min", "must be <= len_max")
        need(self.per_bucket >= 1, "per_bucket", "must be >= 1")
        need(self.order >= 1, "order", "must be >= 1")
        need(self.selector in SELECTORS, "selector", f"one of {SELECTORS}")
        need(self.m_list and all(m >= 1 for m in self.m_list), "m_list", "positive integers")
        need(self.dice_denominator in ("product", "sum"), "dice_denominator", "product or sum")
        need(self.solvers and all(s in SOLVERS for s in self.solvers), "solvers",
             f"subset of {SOLVERS}")
        need(self.ridge_lambdas and all(x > 0 for x in self.ridge_lambdas), "ridge_lambdas",
             "positive values")
        need(self.fsr_eps > 0, "fsr_eps", "must be > 0")
        need(self.fsr_iters and all(x >= 0 for x in self.fsr_iters), "fsr_iters",
             "non-negative integers")
        need(self.decode_order >= 2, "decode_order", "must be >= 2")
        need(not self.decode or self.decode_order <= self.order, "decode_order",
             "cannot exceed the feature order")
        need(self.beam >= 1, "beam", "must be >= 1")
        need(self.lm_order >= 1, "lm_order", "must be >= 1")
        need(self.multiplicity in ("round", "binary"), "multiplicity", "round or binary")
        need(self.decode_scales and all(x >= 0 for x in self.decode_scales), "decode_scales",
             "non-negative multipliers of the F1 threshold")
        need(self.tune_rounds >= 0, "tune_rounds", "must be >= 0")
        need(self.workers >= 0, "workers", "must be >= 0")
        return self

    def resolved_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_HINTS = typing.get_type_hints(ExperimentConfig)


def _kind(name: str):
    hint = _HINTS[name]
    args = typing.get_args(hint)
    if typing.get_origin(hint) is list:
        return list, args[0]
    if type(None) in args:
        return [a for a in args if a is not type(None)][0], None
    return hint, None


def coerce(name: str, value):
    """Convert a file or flag value to the field's type."""
    if name not in _HINTS:
        raise ConfigError(f"unknown config key {name!r}")
    kind, item = _kind(name)
    try:
        if kind is list:
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return [item(v) for v in value]
        if kind is bool:
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {_HINTS[name]}") from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        with open(path, "rb") as f:
            try:
                raw = tomli.load(f)
            except tomli.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}") from None
        for k, v in raw.items():
            values[k] = coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    return ExperimentConfig(**values).validate()


def field_names() -> list[str]:
    return [f.name for f in fields(ExperimentConfig)]
