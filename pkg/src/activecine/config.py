"""
Flat ``key = value`` run configuration, mirrored one-to-one by CLI flags.

Keys use the flag spelling with dashes or underscores (``qc1-threshold``
and ``qc1_threshold`` are the same key). ``#`` starts a comment. Flags given
on the command line override values from the file.

Example file::

    recon = nufft,cascade-tv
    qc1 = oracle
    qc1-threshold = 0.85
    schedule = 1:30:1
    seed = 0
"""

from __future__ import annotations

from pathlib import Path

from activecine.engine import RECON_METHODS, SessionConfig, parse_schedule


class ConfigError(ValueError):
    """Invalid configuration (maps to CLI exit status 2)."""


def parse_methods(text):
    methods = tuple(m.strip() for m in str(text).split(",") if m.strip())
    bad = [m for m in methods if m not in RECON_METHODS]
    if not methods or bad:
        raise ValueError(f"recon must be a comma list of {RECON_METHODS}, got {text!r}")
    return methods


def _opt_float(text):
    return None if str(text).lower() in ("", "none", "default") else float(text)


# key -> parser; SessionConfig field name is the key itself unless remapped
KEYS = {
    "seed": int,
    "recon": parse_methods,
    "weights": str,
    "qc1": str,
    "qc1_threshold": _opt_float,
    "qc1_weights": str,
    "qc2": str,
    "qc2_threshold": _opt_float,
    "qc2_weights": str,
    "tr_ms": float,
    "frames": int,
    "schedule": parse_schedule,
    "full_spokes": float,
    "scheme": str,
    "noise_psnr_db": float,
    "dcf": str,
    "out": str,
    "workers": int,
}
SESSION_FIELDS = {"frames": "nt"}
NON_SESSION = ("recon", "out", "workers")


def normalize_key(key):
    return key.strip().lstrip("-").replace("-", "_")


def parse_value(key, raw):
    key = normalize_key(key)
    if key not in KEYS:
        raise ConfigError(f"unknown configuration key {key!r}; known keys: {', '.join(sorted(KEYS))}")
    try:
        return KEYS[key](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def parse_text(text, source="<config>"):
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[normalize_key(key)] = parse_value(key, raw)
    return values


def load_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(), str(path))


def merge(file_values, flag_values):
    """Flags (non-None entries) override file values."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def session_kwargs(values):
    """SessionConfig keyword arguments from merged values (recon excluded)."""
    kw = {}
    for key, value in values.items():
        if key in NON_SESSION:
            continue
        kw[SESSION_FIELDS.get(key, key)] = value
    return kw


def build_session_config(values, recon, **source):
    """SessionConfig for one method and one source; ConfigError on failure.

    Weight files are checked up front so a missing file fails before any
    subject is processed.
    """
    kw = session_kwargs(values)
    for key in ("weights", "qc1_weights", "qc2_weights"):
        if kw.get(key) is not None and not Path(kw[key]).exists():
            raise ConfigError(f"{key.replace('_', '-')} file not found: {kw[key]}")
    if recon != "cascade-conv":
        kw.pop("weights", None)
    try:
        return SessionConfig(recon=recon, **source, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
