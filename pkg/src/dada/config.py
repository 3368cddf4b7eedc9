"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment.  Keys are the loss weights
(``lambda_*``, ``eps_vat``), every :class:`HyperParams` field and every
:class:`ShiftSpec` field; the dataset seed is spelled ``data_seed`` so it does
not clash with the training ``seed``.  Unknown keys are rejected and the
resolved values are validated before anything runs.
"""

import dataclasses
import math

from .data import ShiftSpec
from .errors import ConfigError, ParseError
from .losses import LossWeights
from .trainer import HyperParams

_HP_FIELDS = {f.name: f for f in dataclasses.fields(HyperParams) if f.name != "weights"}
_WEIGHT_FIELDS = {f.name: f for f in dataclasses.fields(LossWeights)}
_SPEC_FIELDS = {("data_seed" if f.name == "seed" else f.name): f for f in dataclasses.fields(ShiftSpec)}


def _weight_key(name):
    return name if name == "eps_vat" else f"lambda_{name}"


# key -> (section, attribute, type)
SCHEMA = {}
for _n, _f in _WEIGHT_FIELDS.items():
    SCHEMA[_weight_key(_n)] = ("weights", _n, float)
for _n, _f in _HP_FIELDS.items():
    SCHEMA[_n] = ("hp", _n, _f.type)
for _n, _f in _SPEC_FIELDS.items():
    SCHEMA[_n] = ("spec", _f.name, _f.type)

# fields whose default is None but whose values have a concrete type
_OPTIONAL_TYPES = {"warmup_epochs": int, "vat_xi": float}


def _parse_value(key, raw, line):
    kind = SCHEMA[key][2]
    kind = _OPTIONAL_TYPES.get(key, kind)
    text = raw.strip()
    try:
        if key in _OPTIONAL_TYPES and text.lower() == "none":
            return None
        if kind in (tuple, "tuple"):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            conv = float if key == "mean_offset" else int
            return tuple(conv(p) for p in parts)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(f"non-finite value {text!r}")
            return v
        return text
    except ValueError as exc:
        raise ParseError(f"bad value for {key}: {exc}", line=line) from None


def parse(text):
    """Parse config text into a ``{key: value}`` dict (only keys present)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r}", line=lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        out[key] = _parse_value(key, value, lineno)
    return out


def read(path):
    with open(path) as fh:
        return parse(fh.read())


def resolve(values=None, **overrides):
    """Build validated ``(HyperParams, ShiftSpec)`` from parsed values plus overrides."""
    merged = {**(values or {}), **overrides}
    unknown = set(merged) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    parts = {"weights": {}, "hp": {}, "spec": {}}
    for key, value in merged.items():
        section, attr, _ = SCHEMA[key]
        parts[section][attr] = value
    try:
        weights = LossWeights(**parts["weights"])
        hp = HyperParams(weights=weights, **parts["hp"])
        spec = ShiftSpec(**parts["spec"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return hp, spec


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_dict(hp, spec):
    d = {}
    for name in _WEIGHT_FIELDS:
        d[_weight_key(name)] = getattr(hp.weights, name)
    for name in _HP_FIELDS:
        d[name] = getattr(hp, name)
    for key, f in _SPEC_FIELDS.items():
        d[key] = getattr(spec, f.name)
    return d


def dump(hp, spec):
    """Fully resolved config text; ``parse(dump(...))`` resolves to the same objects."""
    lines = ["# resolved configuration (defaults filled in)"]
    lines += [f"{k} = {_format(v)}" for k, v in to_dict(hp, spec).items()]
    return "\n".join(lines) + "\n"


def defaults_help():
    hp, spec = HyperParams(), ShiftSpec()
    return "config keys and defaults:\n" + "\n".join(
        f"  {k} = {_format(v)}" for k, v in to_dict(hp, spec).items())
