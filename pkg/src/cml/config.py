"""Experiment configuration: TOML files with flat keys, resolved and validated."""

from __future__ import annotations

import re
import sys
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ._rational import to_fraction
from .map_core import MapParams, Profile, validate_params

DEFAULTS = {"eta": Fraction(1, 5), "delta": Fraction(1, 50), "gamma": Fraction(1, 1000)}
RATIONAL_KEYS = ("eta", "delta", "gamma")


class ParseError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        loc = []
        if key is not None:
            loc.append(f"key {key!r}")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    eta: Fraction = DEFAULTS["eta"]
    delta: Fraction = DEFAULTS["delta"]
    gamma: Fraction = DEFAULTS["gamma"]
    profile: str = Profile.THEOREM1.value
    k: int | None = None
    module: str = "run"
    seed: int = 0
    # lattice sweep
    eps_grid: list = field(default_factory=lambda: [0.19])
    L: int = 64
    steps: int = 20000
    replicas: int = 8
    boundary: str = "periodic"
    ordering: str = "T"
    init: str = "lambda_plus"
    fixed_value: float = 0.0
    snapshots: bool = False
    # pca
    p: float = 0.01
    # smooth
    sigma: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    n_max: int = 8
    out: str | None = None

    @property
    def params(self) -> MapParams:
        return validate_params(self.eta, self.delta, self.gamma)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in RATIONAL_KEYS:
            d[key] = str(d[key])
        return {k: v for k, v in d.items() if v is not None}

    def to_toml(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            lines.append(f"{key} = {_toml_value(val)}")
        return "\n".join(lines) + "\n"


KEYS = {f.name for f in fields(ExperimentConfig)}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {v!r}")


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for n, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return n
    return None


def _coerce(key: str, val, text: str):
    line = _line_of(text, key)
    try:
        if key in RATIONAL_KEYS:
            return to_fraction(val)
        if key == "profile":
            return Profile(val).value
        if key in ("k",):
            return None if val is None else int(val)
        if key in ("seed", "L", "steps", "replicas", "n_max"):
            if isinstance(val, bool) or int(val) != val:
                raise ValueError("expected an integer")
            return int(val)
        if key in ("p", "fixed_value"):
            return float(val)
        if key in ("eps_grid", "sigma"):
            vals = val if isinstance(val, list) else [val]
            return [float(to_fraction(x)) for x in vals]
        if key == "snapshots":
            if not isinstance(val, bool):
                raise ValueError("expected true or false")
            return val
        return str(val)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad value {val!r}: {exc}", key, line) from None


def from_mapping(raw: dict, text: str = "") -> ExperimentConfig:
    """Build a config from parsed keys; unknown keys are an error."""
    kw = {}
    for key, val in raw.items():
        if key not in KEYS:
            raise ParseError("unknown key", key, _line_of(text, key))
        kw[key] = _coerce(key, val, text)
    cfg = ExperimentConfig(**kw)
    cfg.params  # validation errors from map_core propagate unchanged
    return cfg


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"invalid TOML: {exc}", None, int(m.group(1)) if m else None) from None
    return from_mapping(raw, text)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text)
