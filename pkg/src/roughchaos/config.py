"""Flat ``key = value`` experiment configuration (schema 1).

Lines are ``key = value``; ``#`` starts a comment. Lists are comma separated.
Every key must be known to the experiment; missing keys take the defaults
below, and the resolved configuration is what reports embed.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

SCHEMA = 1


class ConfigError(ValueError):
    pass


_COMMON = {
    "seed": 0,
    "threads": 1,
    "T": 1.0,
    "alpha": 0.4,
}

DEFAULTS = {
    "poc": {
        "b": "linear", "theta": 0.5, "d": 1, "k": 2, "law": "gaussian", "law_std": 1.0,
        "m": 32, "r": 4, "n_list": [8, 32, 128, 512], "tuples": 1000,
        "ref_particles": 4000, "fp_tol": 1e-3, "bootstrap": 40,
        "path_w1_atoms": 100, "path_w1_max_n": 32,
    },
    "rde-flow": {
        "b": "linear", "theta": 0.5, "d": 1, "k": 2, "law": "gaussian", "law_std": 1.0,
        "m": 32, "r": 4, "n_list": [8, 32, 128, 512], "tuples": 1000,
        "ref_particles": 4000, "fp_tol": 1e-3, "bootstrap": 40,
        "field": "trig", "y0": 0.5,
    },
    "klayer-rde": {
        "b": "zero", "theta": 0.0, "d": 1, "k": 2, "law": "dirac", "law_std": 1.0,
        "m": 32, "r": 4, "n_list": [8, 32, 128], "tuples": 500,
        "ref_particles": 1000, "fp_tol": 1e-3, "bootstrap": 40,
        "field": "linear", "coeffs": [0.5, -0.3], "y0": 1.0, "oracle_tol": 0.05,
    },
    "girsanov-check": {
        "b": "linear", "theta": 0.5, "law": "gaussian", "law_std": 1.0,
        "n": 2, "samples": 10000, "m": 64, "r": 1,
    },
    "sanov-decay": {
        "delta": 0.5, "n_list": [16, 32, 64, 128, 256], "samples": 20000, "m": 8,
        "direct_max_n": 32, "direct_samples": 100000, "rel_tol": 0.15, "abs_tol": 0.01,
    },
    "lift-approx": {
        "d": 2, "m_list": [8, 32, 128], "target": 128, "r": 16, "samples": 1000,
        "c": 0.1, "eta": 0.05, "moment_ratio": 1.5,
    },
}

EXPERIMENTS = tuple(DEFAULTS)


def _parse_value(raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return [kind(s) if kind is not int else int(s) for s in items]
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, experiment: str) -> dict:
    """Parse config text for ``experiment`` into a resolved, validated dict."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {list(EXPERIMENTS)}")
    defaults = {**_COMMON, **DEFAULTS[experiment]}
    cfg = dict(defaults)
    schema = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "schema":
            schema = raw
            continue
        if key == "experiment":
            if raw != experiment:
                raise ConfigError(f"config is for {raw!r}, not {experiment!r}")
            continue
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r} for {experiment}")
        cfg[key] = _parse_value(raw, defaults[key])
    if schema != str(SCHEMA):
        raise ConfigError(f"config must declare schema = {SCHEMA}")
    cfg["experiment"] = experiment
    validate(cfg)
    return cfg


def load_config(path, experiment: str, overrides: dict | None = None) -> dict:
    cfg = parse_config(Path(path).read_text(), experiment)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    a = cfg["alpha"]
    if not (1 / 3 < a < 1 / 2):
        raise ConfigError(f"alpha must lie in (1/3, 1/2), got {a}")
    if cfg["T"] <= 0:
        raise ConfigError("T must be positive")
    if not (0 <= cfg["seed"] < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    for key in ("n_list", "m_list"):
        if key in cfg:
            vals = cfg[key]
            if not vals or any(v <= 0 for v in vals) or sorted(set(vals)) != vals:
                raise ConfigError(f"{key} must be a strictly increasing list of positive integers")
    if "k" in cfg and "n_list" in cfg and min(cfg["n_list"]) < cfg["k"]:
        raise ConfigError("every n must be at least k")
    if "eta" in cfg and not (0 < cfg["eta"] < 0.5 - a):
        raise ConfigError("eta must lie in (0, 1/2 - alpha)")
    if cfg.get("experiment") == "klayer-rde" and cfg["field"] == "linear" \
            and len(cfg["coeffs"]) != cfg["k"]:
        raise ConfigError("linear klayer-rde needs one coefficient per layer")
    for key in ("m", "r", "tuples", "samples", "bootstrap", "ref_particles", "target"):
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"{key} must be positive")


def content_hash(cfg: dict) -> str:
    """Git blob hash of the canonical JSON form of the resolved config."""
    body = json.dumps({k: v for k, v in cfg.items() if k != "threads"},
                      sort_keys=True).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def render_config(cfg: dict) -> str:
    """Inverse of :func:`parse_config` for the resolved dict."""
    lines = [f"schema = {SCHEMA}", f"experiment = {cfg['experiment']}"]
    for key in sorted(cfg):
        if key == "experiment":
            continue
        v = cfg[key]
        lines.append(f"{key} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
    return "\n".join(lines) + "\n"
