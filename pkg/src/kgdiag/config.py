"""Run configuration: TOML ingestion, defaults and validation.

A configuration names a preset scenario and the numerical parameters of a
run. Every rule is checked at load time; all violations are reported
together.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .geometry import PRESET_DEFAULTS, PRESETS, make_scenario

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config", "validate_config", "MAX_POINTS"]

MAX_POINTS = 256
RESOLUTION_LIMIT = 0.1
CACHE_POLICIES = ("off", "read", "write", "readwrite")
EXTRA_PARAMS = {"mass_floor", "kappa", "mu_prime"}

DEFAULT_TOLERANCES = {
    "identity": 1e-8,
    "idempotency": 1e-6,
    "psd": 1e-8,
    "symplectic": 1e-8,
    "cross_validation": 1e-7,
    "moller_inverse": 1e-7,
    "kernel_equation": 1e-6,
    "hadamard_fraction": 0.99,
    "fourier_tail": 1e-6,
    "boundary": 1e-6,
    "rate_relative": 0.3,
    "svd_relative": 1e-6,
    "compact_threshold": 1e-6,
    "decay_orders": 4.0,
    "weight_factor": 5.0,
}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violated rule."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "static"
    params: dict = field(default_factory=dict)
    n_points: int = 64
    length: float = 2 * math.pi
    horizon: float = 20.0
    time_step: float = 0.05
    riccati_order: int = 3
    gap_floor: float = 0.5
    first_horizon: float = 5.0
    horizon_ratio: float = 2.0
    kernel_samples: int = 512
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str = "kgdiag-out"
    cache_policy: str = "off"
    seed: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the numerically relevant fields (output and cache settings excluded)."""
        d = self.as_dict()
        for k in ("output_dir", "cache_policy"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()

    def scenario_params(self) -> dict:
        p = dict(PRESET_DEFAULTS)
        p["length"] = self.length
        p.update(self.params)
        return p


_SECTIONS = {
    "scenario": {"name": "scenario", "params": "params"},
    "grid": {"n_points": "n_points", "length": "length"},
    "time": {"horizon": "horizon", "step": "time_step"},
    "riccati": {"order": "riccati_order", "gap_floor": "gap_floor"},
    "scattering": {"first_horizon": "first_horizon", "ratio": "horizon_ratio"},
    "kernels": {"samples": "kernel_samples"},
    "output": {"directory": "output_dir"},
    "cache": {"policy": "cache_policy"},
    "run": {"seed": "seed"},
}


def parse_config(data: dict) -> RunConfig:
    """Map the TOML tables onto ``RunConfig`` fields, then validate."""
    problems = []
    kw = {}
    for section, body in data.items():
        if section == "tolerances":
            if not isinstance(body, dict):
                problems.append("[tolerances] must be a table")
                continue
            unknown = sorted(set(body) - set(DEFAULT_TOLERANCES))
            if unknown:
                problems.append(f"unknown tolerance keys {unknown}; known: {sorted(DEFAULT_TOLERANCES)}")
            tol = dict(DEFAULT_TOLERANCES)
            tol.update({k: float(v) for k, v in body.items() if k in DEFAULT_TOLERANCES})
            kw["tolerances"] = tol
            continue
        if section not in _SECTIONS:
            problems.append(f"unknown section [{section}]; known: {sorted(list(_SECTIONS) + ['tolerances'])}")
            continue
        if not isinstance(body, dict):
            problems.append(f"[{section}] must be a table")
            continue
        for key, value in body.items():
            if key not in _SECTIONS[section]:
                problems.append(f"unknown key '{key}' in [{section}]; known: {sorted(_SECTIONS[section])}")
                continue
            kw[_SECTIONS[section][key]] = value
    if problems:
        raise ConfigError(problems)
    try:
        cfg = RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError([str(exc)]) from exc
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a TOML configuration file.

    Parse errors carry the line and column reported by the TOML reader.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {path} does not exist"])
    try:
        data = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"parse error in {path}: {exc}"]) from exc
    return parse_config(data)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _max_metric_rate(cfg: RunConfig, scenario) -> float:
    """``max |d_t h|`` over the sampled window (analytic when provided, central differences otherwise)."""
    x = (np.arange(cfg.n_points) + 0.5) * cfg.length / cfg.n_points
    ts = np.linspace(-cfg.horizon, cfg.horizon, 401)
    if scenario.dh_dt is not None:
        return float(max(np.max(np.abs(scenario.dh_dt(t, x))) for t in ts))
    e = 1e-4
    return float(max(np.max(np.abs(scenario.h(t + e, x) - scenario.h(t - e, x))) / (2 * e) for t in ts))


def validate_config(cfg: RunConfig) -> None:
    problems = []
    if cfg.scenario not in PRESETS:
        problems.append(f"unknown scenario '{cfg.scenario}'; available presets: {', '.join(sorted(PRESETS))}")
    if not isinstance(cfg.params, dict):
        problems.append("[scenario.params] must be a table")
    else:
        bad = sorted(set(cfg.params) - set(PRESET_DEFAULTS) - EXTRA_PARAMS)
        if bad:
            problems.append(f"unknown scenario parameters {bad}; known: {sorted(set(PRESET_DEFAULTS) | EXTRA_PARAMS)}")
        if "length" in cfg.params:
            problems.append("set the window length in [grid] length, not in [scenario.params]")
    if not _is_int(cfg.n_points) or not 8 <= cfg.n_points <= MAX_POINTS or cfg.n_points & (cfg.n_points - 1):
        problems.append(f"grid n_points must be a power of two in [8, {MAX_POINTS}] (got {cfg.n_points!r})")
    if not cfg.length > 0:
        problems.append(f"grid length must be positive (got {cfg.length!r})")
    if not cfg.horizon > 0:
        problems.append(f"time horizon must be positive (got {cfg.horizon!r})")
    if not cfg.time_step > 0:
        problems.append(f"time step must be positive (got {cfg.time_step!r})")
    elif cfg.horizon > 0:
        ratio = cfg.horizon / cfg.time_step
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            problems.append(f"time horizon {cfg.horizon} must be a whole number of steps {cfg.time_step}")
    if not _is_int(cfg.riccati_order) or cfg.riccati_order < 0:
        problems.append(f"riccati order must be a non-negative integer (got {cfg.riccati_order!r})")
    if not cfg.gap_floor > 0:
        problems.append(f"riccati gap_floor must be positive (got {cfg.gap_floor!r})")
    if not cfg.first_horizon > 0 or cfg.first_horizon > cfg.horizon:
        problems.append(f"scattering first_horizon must lie in (0, horizon] (got {cfg.first_horizon!r})")
    if not cfg.horizon_ratio > 1:
        problems.append(f"scattering ratio must exceed 1 (got {cfg.horizon_ratio!r})")
    if not _is_int(cfg.kernel_samples) or cfg.kernel_samples < 64:
        problems.append(f"kernels samples must be an integer >= 64 (got {cfg.kernel_samples!r})")
    if cfg.cache_policy not in CACHE_POLICIES:
        problems.append(f"cache policy must be one of {CACHE_POLICIES} (got {cfg.cache_policy!r})")
    if not _is_int(cfg.seed):
        problems.append(f"run seed must be an integer (got {cfg.seed!r})")
    for k, v in cfg.tolerances.items():
        if not v > 0:
            problems.append(f"tolerance {k} must be positive (got {v!r})")
    if not problems:
        try:
            scenario = make_scenario(cfg.scenario, **cfg.scenario_params())
        except (ValueError, KeyError) as exc:
            problems.append(f"scenario construction failed: {exc}")
        else:
            rate = _max_metric_rate(cfg, scenario)
            if rate * cfg.time_step > RESOLUTION_LIMIT:
                problems.append(
                    f"generator resolution rule violated: max|d_t h|*dt = {rate * cfg.time_step:.4g} > "
                    f"{RESOLUTION_LIMIT}; reduce [time] step below {RESOLUTION_LIMIT / rate:.4g}")
    if problems:
        raise ConfigError(problems)
