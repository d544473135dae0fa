"""Run configuration: flat ``key = value`` lines with optional ``[section]`` headers.

Keys may be written at the top of the file without a header, or inside the
section they belong to.  Lists are bracketed and comma separated.  Unknown
keys, and known keys under the wrong section, are errors.

    system = harmonic
    [params]
    stiffness = 2.0
    [scheme]
    h = 0.1
    gamma = 0.5
    [run]
    steps = 10
    q0 = [1]
    v0 = [0]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

from .errors import ConfigError

# key -> (section, kind, default); kind in {"str", "float", "int", "vector", "intlist"}
_SCHEMA = {
    "system": ("system", "str", None),
    "gamma": ("scheme", "float", 0.5),
    "segment": ("scheme", "str", "linear"),
    "field": ("scheme", "str", "lagrangian"),
    "method": ("scheme", "str", "rk4"),
    "substeps": ("scheme", "int", 4),
    "quadrature": ("scheme", "str", "midpoint"),
    "sigma": ("scheme", "str", "exact"),
    "placement": ("scheme", "str", "anchor"),
    "h": ("scheme", "float", None),
    "steps": ("run", "int", None),
    "T": ("run", "float", None),
    "q0": ("run", "vector", None),
    "v0": ("run", "vector", None),
    "generators": ("run", "intlist", None),
    "seed": ("run", "int", 0),
    "newton_tol": ("solver", "float", 1e-12),
    "newton_max_iter": ("solver", "int", 50),
    "fd_step_scale": ("solver", "float", 1.0),
    "output": ("output", "str", None),
    "format": ("output", "str", "csv"),
}
_REQUIRED = ("system", "h", "steps", "q0", "v0")
_CHOICES = {
    "segment": ("linear", "flow"),
    "field": ("lagrangian", "zero"),
    "method": ("rk4", "midpoint"),
    "quadrature": ("midpoint", "trapezoid", "gauss2"),
    "sigma": ("exact", "pulled_back"),
    "placement": ("anchor", "quadrature"),
    "format": ("csv",),
}
SECTIONS = sorted({sec for sec, _, _ in _SCHEMA.values()} | {"params"})


@dataclass(frozen=True)
class RunConfig:
    system: str
    h: float
    steps: int
    q0: Tuple[float, ...]
    v0: Tuple[float, ...]
    params: dict = field(default_factory=dict)
    gamma: float = 0.5
    segment: str = "linear"
    field: str = "lagrangian"
    method: str = "rk4"
    substeps: int = 4
    quadrature: str = "midpoint"
    sigma: str = "exact"
    placement: str = "anchor"
    T: Optional[float] = None
    generators: Optional[Tuple[int, ...]] = None
    seed: int = 0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fd_step_scale: float = 1.0
    output: Optional[str] = None
    format: str = "csv"

    @property
    def final_time(self):
        return self.T if self.T is not None else self.steps * self.h

    def replace(self, **changes):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return RunConfig(**data)


def _number(text, kind, key, lineno):
    try:
        return int(text) if kind == "int" else float(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key!r} expects {'an integer' if kind == 'int' else 'a number'}, got {text!r}",
                          key=key, line=lineno) from None


def _value(raw, kind, key, lineno):
    if kind == "str":
        return raw
    if kind in ("float", "int"):
        return _number(raw, kind, key, lineno)
    if not (raw.startswith("[") and raw.endswith("]")):
        raise ConfigError(f"line {lineno}: {key!r} expects a bracketed list, got {raw!r}", key=key, line=lineno)
    body = raw[1:-1].strip()
    items = [x.strip() for x in body.split(",")] if body else []
    sub = "int" if kind == "intlist" else "float"
    return tuple(_number(x, sub, key, lineno) for x in items)


def _param_value(raw, key, lineno):
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    raise ConfigError(f"line {lineno}: parameter {key!r} must be numeric, got {raw!r}", key=key, line=lineno)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration."""
    values, params = {}, {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]") and "=" not in stripped:
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]", key=section, line=lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}", line=lineno)
        key, raw = (x.strip() for x in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key", line=lineno)
        if section == "params":
            params[key] = _param_value(raw, key, lineno)
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key=key, line=lineno)
        home, kind, _ = _SCHEMA[key]
        if section is not None and section != home:
            raise ConfigError(f"line {lineno}: key {key!r} belongs in [{home}], not [{section}]", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key=key, line=lineno)
        values[key] = _value(raw, kind, key, lineno)
    return validate(values, params)


def validate(values: dict, params: Optional[dict] = None) -> RunConfig:
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}", key=key)
    data = {k: d for k, (_, _, d) in _SCHEMA.items() if d is not None}
    data.update(values)
    for key, allowed in _CHOICES.items():
        if data[key] not in allowed:
            raise ConfigError(f"{key!r} must be one of {', '.join(allowed)}, got {data[key]!r}", key=key)
    checks = [
        ("h", data["h"] > 0, "must be positive"),
        ("steps", data["steps"] >= 1, "must be at least 1"),
        ("gamma", 0.0 <= data["gamma"] <= 1.0, "must lie in [0, 1]"),
        ("substeps", data["substeps"] >= 1, "must be at least 1"),
        ("newton_tol", data["newton_tol"] > 0, "must be positive"),
        ("newton_max_iter", data["newton_max_iter"] >= 1, "must be at least 1"),
        ("fd_step_scale", data["fd_step_scale"] > 0, "must be positive"),
        ("seed", data["seed"] >= 0, "must be non-negative"),
    ]
    if "T" in data:
        checks.append(("T", data["T"] > 0, "must be positive"))
    for key, ok, why in checks:
        if not ok:
            raise ConfigError(f"{key!r} {why}", key=key)
    if len(data["q0"]) != len(data["v0"]):
        raise ConfigError("'q0' and 'v0' must have the same length", key="v0")
    return RunConfig(params=dict(params or {}), **data)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
