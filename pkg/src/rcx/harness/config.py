"""Flat key-value experiment configuration.

Grammar (one entry per line, ``#`` starts a comment):

    key = value

Values are parsed as, in order: quoted string, boolean (true/false), integer,
real, integer list (comma-separated), real list, bare string.  Keys are
lower_snake_case.  The parser is dependency-free by design; every experiment
kind declares a schema and validation errors name the offending key.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["ConfigError", "parse_config", "format_config", "validate_config", "SCHEMAS"]


class ConfigError(ValueError):
    """Malformed or schema-violating configuration; names the offending key."""


def _parse_scalar(tok: str):
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def _parse_value(raw: str):
    raw = raw.strip()
    if not raw:
        return ""
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if "," in raw:
        items = [_parse_scalar(t.strip()) for t in raw.split(",") if t.strip()]
        if all(isinstance(v, int) for v in items):
            return items
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in items):
            return [float(v) for v in items]
        raise ConfigError(f"mixed-type list {raw!r}")
    return _parse_scalar(raw)


def parse_config(text: str) -> dict:
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key or not all(c.isalnum() or c == "_" for c in key):
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(raw)
    return out


def format_config(cfg: dict) -> str:
    """Inverse of parse_config; round-trips every supported value type."""
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if isinstance(v, bool):
            lines.append(f"{key} = {'true' if v else 'false'}")
        elif isinstance(v, (int, float)):
            lines.append(f"{key} = {v!r}")
        elif isinstance(v, str):
            lines.append(f'{key} = "{v}"')
        elif isinstance(v, (list, tuple)):
            lines.append(f"{key} = {', '.join(repr(x) for x in v)}")
        else:
            raise ConfigError(f"unsupported value type for key {key!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class _Key:
    types: tuple
    required: bool = False
    default: object = None
    check: object = None          # predicate(value) -> bool
    what: str = ""


def _real_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)


_COMMON = {
    "experiment": _Key((str,), required=True),
    "out_dir": _Key((str,), default="out"),
    "seed": _Key((int,), default=0),
    "threads": _Key((int,), default=1, check=lambda v: v >= 1, what=">= 1"),
    "grid_n": _Key((int,), default=128, check=lambda v: v >= 8 and (v & (v - 1)) == 0,
                   what="a power of two >= 8"),
}

SCHEMAS: dict[str, dict[str, _Key]] = {
    "advdiff_rate": {
        **_COMMON,
        "eta_list": _Key((list,), required=True, check=_real_list, what="a real list"),
        "flow": _Key((str,), default="kolmogorov",
                     check=lambda v: v in ("kolmogorov", "none"), what="kolmogorov|none"),
        "amplitude": _Key((float, int), default=1.0),
        "wavenumber": _Key((int,), default=1),
        "dt": _Key((float, int), default=0.0),
        "cadence": _Key((int,), default=10),
    },
    "hs_constant": {
        **_COMMON,
        "eta_list": _Key((list,), required=True, check=_real_list, what="a real list"),
        "s_list": _Key((list,), required=True, check=_real_list, what="a real list"),
        "horizon_factor": _Key((float, int), default=2.0),
        "dt": _Key((float, int), default=0.0),
    },
    "reconnect_shear": {
        **_COMMON,
        "eta_list": _Key((list,), required=True, check=_real_list, what="a real list"),
        "m_mean": _Key((float, int), default=1.0, check=lambda v: v > 0, what="> 0"),
        "eps": _Key((float, int), default=0.01, check=lambda v: v > 0, what="> 0"),
        "x_star": _Key((list,), default=None, check=_real_list, what="a real triple"),
        "mode": _Key((str,), default="reduced",
                     check=lambda v: v in ("reduced", "full"), what="reduced|full"),
        "grid_n3": _Key((int,), default=32),
        "dt": _Key((float, int), default=0.0),
        "persistence_horizon": _Key((float, int), default=0.1),
        "slack": _Key((float, int), default=0.0),
    },
    "reconnect_stochastic": {
        **_COMMON,
        "eta_list": _Key((list,), required=True, check=_real_list, what="a real list"),
        "m_mean": _Key((float, int), default=1.0, check=lambda v: v > 0, what="> 0"),
        "alpha": _Key((float, int), default=6.0, check=lambda v: v > 5, what="> 5"),
        "amplitude": _Key((float, int), default=0.3),
        "horizon": _Key((float, int), default=900.0),
        "dt": _Key((float, int), default=0.02),
    },
    "sns_energy": {
        **_COMMON,
        "paths": _Key((int,), default=128, check=lambda v: v >= 2, what=">= 2"),
        "t_final": _Key((float, int), default=1.0),
        "alpha": _Key((float, int), default=6.0, check=lambda v: v > 5, what="> 5"),
        "amplitude": _Key((float, int), default=1.0),
        "dt": _Key((float, int), default=1e-3),
    },
}


def validate_config(cfg: dict) -> dict:
    """Schema-check and fill defaults; returns the resolved config."""
    kind = cfg.get("experiment")
    if kind is None:
        raise ConfigError("missing key 'experiment'")
    if kind not in SCHEMAS:
        raise ConfigError(f"key 'experiment': unknown kind {kind!r} "
                          f"(expected one of {sorted(SCHEMAS)})")
    schema = SCHEMAS[kind]
    resolved = {}
    for key, spec in schema.items():
        if key in cfg:
            v = cfg[key]
            if isinstance(v, bool) and bool not in spec.types:
                raise ConfigError(f"key {key!r}: unexpected boolean")
            if isinstance(v, int) and not isinstance(v, bool) and spec.types[0] is float:
                v = float(v)
            if not isinstance(v, spec.types):
                raise ConfigError(
                    f"key {key!r}: expected {'/'.join(t.__name__ for t in spec.types)}, "
                    f"got {type(v).__name__}")
            if spec.check is not None and not spec.check(v):
                raise ConfigError(f"key {key!r}: must be {spec.what}, got {v!r}")
            resolved[key] = v
        elif spec.required:
            raise ConfigError(f"missing required key {key!r}")
        else:
            resolved[key] = spec.default
    for key in cfg:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment {kind!r}")
    # eta sweeps must be log-uniform-ish so leverage is balanced in log fits
    etas = resolved.get("eta_list")
    if etas and len(etas) >= 3:
        import math
        logs = sorted(math.log10(e) for e in etas)
        gaps = [b - a for a, b in zip(logs, logs[1:])]
        if max(gaps) > 3.0 * min(gaps) + 1e-9:
            raise ConfigError("key 'eta_list': values must be close to log-uniform")
    return resolved
