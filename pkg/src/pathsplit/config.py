"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored.  Keys prefixed with ``model.``
are model parameters and keys prefixed with ``tol.`` are tolerance
overrides.  Every other key mirrors a command-line flag with dashes replaced
by underscores, e.g. ``fine_factor = 16``.
"""

import re

from .errors import ConfigurationError
from .harness import ExperimentConfig

__all__ = ["parse_config_text", "load_config", "parse_n_list", "experiment_from_values"]

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_") if not key.strip().startswith(("model.", "tol.")) else key.strip()
        if not sep or not _KEY.match(key):
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = val.strip()
    return values


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path)


def _pow_or_int(tok):
    tok = tok.strip()
    if "^" in tok:
        base, exp = tok.split("^", 1)
        return int(base) ** int(exp)
    return int(tok)


def parse_n_list(spec):
    """'8,16,32' or a doubling range '2^3..2^8' / '8..256'."""
    if isinstance(spec, (list, tuple)):
        return [int(n) for n in spec]
    spec = str(spec).strip()
    try:
        if ".." in spec:
            lo, hi = (_pow_or_int(t) for t in spec.split("..", 1))
            if lo < 1 or hi < lo:
                raise ValueError
            out = []
            n = lo
            while n <= hi:
                out.append(n)
                n *= 2
            return out
        return [_pow_or_int(t) for t in spec.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse step counts {spec!r}") from None


def _floats(v):
    return [float(x) for x in str(v).split(",") if x.strip()]


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {v!r}")


_CONVERT = {
    "model": str, "scheme": str, "scheme_b": str, "path_kind": str, "path_kind_b": str,
    "T": float, "N": parse_n_list, "fine_factor": int, "paths": lambda v: int(float(v)),
    "seed": int, "batch_size": int, "threads": int, "y0": _floats, "out": str, "format": str,
    "test_mode": _bool, "debug": _bool,
}


def experiment_from_values(values):
    """Build an ExperimentConfig from merged string (or already typed) values.

    Unrecognised keys are ignored so that verify-* settings can share a file.
    """
    cfg = ExperimentConfig()
    for key, val in values.items():
        if val is None:
            continue
        if key.startswith("model."):
            cfg.model_params[key[6:]] = val
        elif key.startswith("tol."):
            cfg.tolerances[key[4:]] = float(val)
        elif key in _CONVERT:
            try:
                setattr(cfg, key, _CONVERT[key](val) if isinstance(val, str) else val)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {val!r} ({exc})") from None
    if cfg.format not in ("csv", "json"):
        raise ConfigurationError(f"format must be csv or json, got {cfg.format!r}")
    return cfg
