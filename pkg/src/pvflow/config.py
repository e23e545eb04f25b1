"""Pipeline configuration: defaults, validation, and `key = value` files."""

from dataclasses import dataclass, fields, replace

import numpy as np


@dataclass
class Config:
    seed: int = 42
    deterministic: bool = True
    k_usfe: int = 9
    k_sc: int = 16
    r: int = 16
    w: int = 4
    h: int = 4
    d: int = 128
    d_s: int = 32
    epsilon: float = 0.03
    lambda_smooth: float = 10.0
    lambda_c: float = 1.0
    step_size: float = 0.05
    sinkhorn_iters: int = 30
    refine_steps: int = 150
    tol_marg: float = 1e-6
    mode: str = "f32"
    widths: tuple = (64, 128, 128)

    def __post_init__(self):
        if isinstance(self.widths, list):
            self.widths = tuple(self.widths)
        self.validate()

    def validate(self):
        positive = (
            "k_usfe", "k_sc", "r", "w", "h", "d", "d_s",
            "epsilon", "step_size", "sinkhorn_iters", "refine_steps", "tol_marg",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_smooth < 0 or self.lambda_c < 0:
            raise ValueError("lambda weights must be non-negative")
        if self.w > self.r:
            raise ValueError(f"window {self.w} must not exceed resolution {self.r}")
        if self.mode not in ("f32", "f64"):
            raise ValueError(f"mode must be f32 or f64, got {self.mode!r}")
        if len(self.widths) != 3:
            raise ValueError("widths must list the three layer widths")
        if self.widths[2] != self.d:
            raise ValueError("the last layer width must equal d")
        for c in self.widths:
            if c % self.h != 0:
                raise ValueError(f"layer width {c} not divisible by {self.h} heads")

    @property
    def dtype(self):
        return np.float64 if self.mode == "f64" else np.float32


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _parse_value(name, text, kind):
    if kind is bool:
        try:
            return _BOOL[text.lower()]
        except KeyError:
            raise ValueError(f"{name}: expected true/false, got {text!r}") from None
    if kind is tuple:
        return tuple(int(p) for p in text.split(","))
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_config(text, base=None):
    """Parse `key = value` lines ('#' comments allowed) over ``base`` defaults."""
    cfg = base if base is not None else Config()
    kinds = {f.name: type(getattr(cfg, f.name)) for f in fields(Config)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _parse_value(key, value.strip(), kinds[key])
    return replace(cfg, **updates)


def serialize_config(cfg):
    lines = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base)
