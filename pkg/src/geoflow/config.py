"""Run configuration: dotted keys, optional ``[section]`` grouping, strict validation.

Config files are line-based ``key = value`` with ``#`` comments.  A header line
``[kernel]`` prefixes the following bare keys, so ``sigma = 2.0`` under it means
``kernel.sigma = 2.0``; fully dotted keys are always accepted verbatim.  Unknown
keys, duplicate keys, malformed numbers, and out-of-range values are all
rejected with the offending line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated settings for every subcommand, with documented defaults."""

    seed: int = 0
    kernel_sigma: float = 2.0
    flow_steps: int = 32
    svf_squarings: int = 0
    match_weight: float = 100.0
    optimizer_tol: float = 1e-6
    optimizer_max_iters: int = 500
    optimizer_step0: float = 1.0
    ep_xi: float = 1e-3
    ep_relax_tol: float = 1e-8
    ep_relax_step: float = 0.1
    ep_relax_max_iters: int = 10000
    unitary_q: float = 100.0
    unitary_samples: int = 500
    unitary_restarts: int = 4
    unitary_steps: int = 64


@dataclass(frozen=True)
class _Key:
    name: str
    kind: str  # "int" | "float"
    bounds: str
    check: object

    @property
    def attr(self) -> str:
        return self.name.replace(".", "_")


_SCHEMA = (
    _Key("seed", "int", "must be >= 0", lambda v: v >= 0),
    _Key("kernel.sigma", "float", "must be > 0", lambda v: v > 0),
    _Key("flow.steps", "int", "must be >= 1", lambda v: v >= 1),
    _Key("svf.squarings", "int", "must be >= 0 (0 selects automatically)", lambda v: v >= 0),
    _Key("match.weight", "float", "must be > 0", lambda v: v > 0),
    _Key("optimizer.tol", "float", "must be > 0", lambda v: v > 0),
    _Key("optimizer.max_iters", "int", "must be >= 1", lambda v: v >= 1),
    _Key("optimizer.step0", "float", "must be > 0", lambda v: v > 0),
    _Key("ep.xi", "float", "must be nonzero", lambda v: v != 0),
    _Key("ep.relax_tol", "float", "must be > 0", lambda v: v > 0),
    _Key("ep.relax_step", "float", "must be > 0", lambda v: v > 0),
    _Key("ep.relax_max_iters", "int", "must be >= 1", lambda v: v >= 1),
    _Key("unitary.q", "float", "must be >= 1", lambda v: v >= 1),
    _Key("unitary.samples", "int", "must be >= 100", lambda v: v >= 100),
    _Key("unitary.restarts", "int", "must be >= 1", lambda v: v >= 1),
    _Key("unitary.steps", "int", "must be >= 2", lambda v: v >= 2),
)

_BY_KEY = {spec.name: spec for spec in _SCHEMA}


def _parse_value(spec: _Key, text: str, line_no: int):
    if spec.kind == "int":
        try:
            return int(text, 10)
        except ValueError:
            raise ConfigError(
                f"line {line_no}: malformed integer for {spec.name!r}: {text!r}"
            ) from None
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(
            f"line {line_no}: malformed number for {spec.name!r}: {text!r}"
        ) from None
    if not math.isfinite(value):
        raise ConfigError(f"line {line_no}: non-finite value for {spec.name!r}: {text!r}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; absent keys take their defaults."""
    values = {}
    first_line = {}
    section = ""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"line {line_no}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
        lhs, rhs = line.split("=", 1)
        name = lhs.strip()
        value_text = rhs.strip()
        if not name or not value_text:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
        key = name if ("." in name or not section) else f"{section}.{name}"
        spec = _BY_KEY.get(key)
        if spec is None:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in first_line:
            raise ConfigError(
                f"line {line_no}: duplicate key {key!r} (first set on line {first_line[key]})"
            )
        first_line[key] = line_no
        value = _parse_value(spec, value_text, line_no)
        if not spec.check(value):
            raise ConfigError(
                f"line {line_no}: {key} = {value_text} out of range ({spec.bounds})"
            )
        values[spec.attr] = value
    return ExperimentConfig(**values)


def render_config(config: ExperimentConfig) -> str:
    """Canonical flat rendering; ``parse_config(render_config(c))`` reproduces ``c``."""
    lines = []
    for spec in _SCHEMA:
        value = getattr(config, spec.attr)
        lines.append(f"{spec.name} = {value!r}")
    return "\n".join(lines) + "\n"
