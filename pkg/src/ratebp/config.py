"""Experiment configuration: a flat, diff-able key-value text format.

One `key = value` line per field; types come from the dataclass declaration.
CLI flags override file values, file values override defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

METHODS = ("bptt", "rate_m", "rate_s")


@dataclass
class ExperimentConfig:
    method: str = "bptt"
    hidden: tuple[int, ...] = (256, 256)
    bn: str = "none"  # none | tdbn | spatial
    bias: bool = False
    T: int = 4
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    dataset: str = "synthetic"  # synthetic | idx
    train_n: int = 10000
    test_n: int = 2000
    features: int = 784
    classes: int = 10
    separation: float = 0.5
    noise: float = 0.1
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    spatial_bn_rate: str = "exact"  # exact | diagonal (rate_s with spatial bn)
    check_traces: bool = False  # debug: assert e_T == exact spike mean each step
    out_dir: str = "runs/default"

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.bn not in ("none", "tdbn", "spatial"):
            raise ValueError(f"unknown bn mode {self.bn!r}")
        if self.method == "rate_m" and self.bn == "spatial":
            raise ValueError("spatial bn requires method rate_s (or bptt)")
        if self.method == "rate_s" and self.bn == "tdbn":
            raise ValueError("tdbn requires method rate_m (or bptt)")
        if self.dataset not in ("synthetic", "idx"):
            raise ValueError(f"unknown dataset selector {self.dataset!r}")
        if self.spatial_bn_rate not in ("exact", "diagonal"):
            raise ValueError(f"unknown spatial bn handling {self.spatial_bn_rate!r}")
        if self.T < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("T, epochs and batch_size must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr must be >= 0 and momentum in [0, 1)")
        return self


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(text: str, py_type):
    text = text.strip()
    if py_type is bool:
        if text not in ("True", "False", "true", "false"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text in ("True", "true")
    if py_type is int:
        return int(text)
    if py_type is float:
        return float(text)
    if py_type is str:
        return text
    # tuple[int, ...]
    if text == "":
        return ()
    return tuple(int(v) for v in text.split(","))


def format_config(cfg: ExperimentConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    types = {"method": str, "bn": str, "dataset": str}
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in by_name:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        fld = by_name[key]
        py_type = types.get(key)
        if py_type is None:
            default = fld.default
            py_type = type(default) if default is not None else str
        values[key] = _parse_value(raw, py_type)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        f.write(format_config(cfg))
