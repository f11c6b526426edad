"""Flat key/value run configuration shared by every CLI command.

One RunConfig covers all commands; each command reads the keys it needs.
The on-disk format is `key = value` lines with `#` comments.  Unknown
keys are rejected so typos fail loudly, and every command echoes its
fully resolved configuration back into the output directory, which can
be fed straight back via --config to reproduce a run byte for byte.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError


@dataclass
class RunConfig:
    # general
    seed: Optional[int] = None          # required for synth/train
    out_dir: str = "out"
    threads: int = 0                    # 0 = one worker per cpu
    plots: bool = True
    # input paths
    prices: Optional[str] = None
    checkpoint: Optional[str] = None
    # synthetic market
    n_signal: int = 10
    n_noise: int = 10
    n_days: int = 400
    signal_strength: float = 1.0
    noise_sigma: float = 0.008
    # windowing and discretization
    t_i: int = 16
    t_o: int = 5
    th_l: float = -0.03
    th_u: float = 0.03
    sample_start: Optional[int] = None
    sample_end: Optional[int] = None
    sample_stride: int = 1
    # training
    lr_d: float = 2e-5
    lr_g: float = 1e-5
    beta1: float = 0.0
    beta2: float = 0.9
    lambda_cg: float = 32.0
    lambda_cd: float = 1.0
    batch_size: int = 16
    epochs: int = 128
    noise_dim: int = 128
    g_hidden: int = 1024
    d_hidden: str = "2048,2048"
    condition_gain: float = 1.0
    # prediction and selection
    i_samples: int = 101
    th_p: float = 0.1
    th_r: float = -30.0
    predict_time: Optional[int] = None
    # backtest
    rebalance_stride: int = 21
    train_end: Optional[int] = None
    eval_start: Optional[int] = None
    eval_end: Optional[int] = None
    benchmark: str = "universe"
    thr_grid: str = ""
    thp_grid: str = ""

    def d_hidden_tuple(self) -> tuple:
        return tuple(parse_int_list(self.d_hidden, "d_hidden"))

    def thr_grid_list(self) -> list:
        return parse_float_list(self.thr_grid, "thr_grid")

    def thp_grid_list(self) -> list:
        return parse_float_list(self.thp_grid, "thp_grid")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

_OPTIONAL_INT = {"seed", "sample_start", "sample_end", "train_end",
                 "eval_start", "eval_end", "predict_time"}
_OPTIONAL_STR = {"prices", "checkpoint"}


def parse_int_list(text: str, key: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}")


def parse_float_list(text: str, key: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}")


def coerce_value(key: str, raw: str):
    field = _FIELDS[key]
    raw = raw.strip()
    if key in _OPTIONAL_INT:
        return None if raw == "" else int(raw)
    if key in _OPTIONAL_STR:
        return None if raw == "" else raw
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    return raw


def load_config_file(path) -> dict:
    """Parse a config file into {key: coerced value}; unknown keys fail."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path} line {line_no}: expected key = value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigError(f"{path} line {line_no}: unknown key {key!r}")
            try:
                values[key] = coerce_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path} line {line_no}: {key}: {exc}")
    return values


def _serialize(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config_file(path, config: RunConfig) -> None:
    """Write every key, sorted, so the echo is a complete reproduction recipe."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# resolved run configuration\n")
        for key in sorted(_FIELDS):
            fh.write(f"{key} = {_serialize(getattr(config, key))}\n")


def merge_config(file_values: dict, flag_values: dict) -> RunConfig:
    """defaults < config file < explicit command-line flags."""
    merged = {}
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    unknown = set(merged) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)
