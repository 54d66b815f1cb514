"""Experiment configuration files.

A configuration is a TOML file with flat sections: ``[run]`` (seed, threads,
output directory), ``[drift]`` (a symbolic drift tag and its parameters),
``[bounds]`` (overrides of the bound constants) and one section named after
the experiment kind.  Values are scalars or arrays of scalars.  Unknown
sections and keys are rejected.

Example::

    [run]
    seed = 7

    [drift]
    tag = "sinusoidal"
    amp = 0.1

    [variance]
    H = 0.3
    eps = 0.02
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import tomli

from ..bounds import BoundParams, default_eta
from ..errors import ConfigError, ValidationError
from ..fbm import HurstIndex
from ..slowfast import NonlinearDrift
from ..spectral import PotentialDrift
from ..variance import LinearDrift

KINDS = ("variance", "sde-exit", "spde-exit", "schauder", "calibrate-k0", "slope-fit")

REQUIRED = object()
FLOATS = "floats"

_RUN = {"seed": (int, 0), "threads": (int, 1), "out": (str, "fracstrip-out")}

_DRIFT = {"tag": (str, "constant"), "value": (float, -1.0), "base": (float, 1.0),
          "amp": (float, 0.1), "T": (float, 1.0), "d": (float, 0.5)}

_BOUNDS = {"K0": (float, 1.0), "K0_file": (str, ""), "K0_H": (float, 0.5), "r1": (float, 0.0),
           "r2": (float, 0.0), "eta": (float, 0.0), "c_mode": (float, (2 * math.pi) ** 2),
           "nu": (float, 0.0)}

SCHEMAS: Dict[str, Dict[str, tuple]] = {
    "variance": {
        "H": (float, REQUIRED), "eps": (float, REQUIRED), "sigma": (float, 1.0),
        "n_times": (int, 20), "replicas": (int, 10000), "steps_per_eps": (float, 40.0),
        "tol": (float, 1e-8), "level": (float, 0.99),
        "r1_eps": (FLOATS, [0.005, 0.01, 0.02, 0.04, 0.08]),
    },
    "sde-exit": {
        "H": (float, REQUIRED), "eps": (float, REQUIRED), "sigma": (float, REQUIRED),
        "N": (int, 4096), "h_over_sigma": (FLOATS, [2.5, 2.75, 3.0, 3.25, 3.5, 3.75, 4.0]),
        "replicas": (int, 10000), "level": (float, 0.95), "x_guess": (float, -1.0),
    },
    "slope-fit": {
        "H": (float, REQUIRED), "eps": (float, REQUIRED), "sigma": (float, REQUIRED),
        "N": (int, 4096), "h_over_sigma": (FLOATS, [2.5, 2.75, 3.0, 3.25, 3.5, 3.75, 4.0]),
        "replicas": (int, 10000), "level": (float, 0.95),
    },
    "spde-exit": {
        "H": (float, REQUIRED), "eps": (float, REQUIRED), "sigma": (float, REQUIRED),
        "s": (float, REQUIRED), "K": (int, 64), "N": (int, 2048),
        "h_over_sigma": (FLOATS, [2.0, 3.0, 4.0]), "replicas": (int, 10000),
        "level": (float, 0.95), "x_guess": (float, -1.0),
        "q": (float, 0.0), "r": (float, 0.0),
    },
    "schauder": {
        "pairs_q": (FLOATS, [0.7, 1.4, 1.9]), "pairs_r": (FLOATS, [0.2, 0.4, 0.4]),
        "K": (int, 4096), "t_min": (float, 1e-4), "t_max": (float, 1.0), "n_t": (int, 81),
        "flank_min": (float, 1e-6), "flank_max": (float, 1e-4),
    },
    "calibrate-k0": {
        "H": (float, 0.5), "eps": (float, 0.01), "sigma": (float, 0.05), "N": (int, 4096),
        "burn": (float, 0.2), "thresholds": (FLOATS, [2.0, 2.5, 3.0, 3.5, 4.0]),
        "replicas": (int, 20000), "level": (float, 0.95), "ratio": (float, 2 ** 0.25),
    },
}

SDE_TAGS = ("constant", "sinusoidal", "cubic")


@dataclass
class ExperimentConfig:
    kind: str
    run: Dict[str, Any]
    drift: Dict[str, Any]
    params: Dict[str, Any]
    bounds: Dict[str, Any]
    source: Optional[str] = None
    explicit_bounds: tuple = ()

    @property
    def seed(self) -> int:
        return self.run["seed"]

    @property
    def threads(self) -> int:
        return self.run["threads"]

    @property
    def out(self) -> Path:
        return Path(self.run["out"])

    def echo(self) -> dict:
        return {"kind": self.kind, "run": dict(self.run), "drift": dict(self.drift),
                self.kind: dict(self.params), "bounds": dict(self.bounds)}

    def bound_params(self) -> BoundParams:
        b = self.bounds
        K0 = b["K0"]
        if b["K0_file"]:
            K0 = load_k0(b["K0_file"], b["K0_H"])
        return BoundParams(K0=K0, r1=b["r1"], r2=b["r2"], eta=b["eta"] or None,
                           c_mode=b["c_mode"], nu=b["nu"] or None)

    def linear_drift(self) -> LinearDrift:
        d = self.drift
        if d["tag"] == "constant":
            return LinearDrift.constant(d["value"], d["T"])
        if d["tag"] == "sinusoidal":
            return LinearDrift.sinusoidal(d["base"], d["amp"], d["T"])
        raise ValidationError(f"drift tag {d['tag']!r} is not linear")

    def make_drift(self):
        """The configured drift: linear, or the cubic reaction (scalar or potential form)."""
        d = self.drift
        if d["tag"] == "cubic":
            if self.kind == "spde-exit":
                return PotentialDrift.cubic(d["amp"], d["T"], d["d"])
            return NonlinearDrift.cubic(d["amp"], d["T"], d["d"])
        return self.linear_drift()


def load_k0(path: str, H: float) -> float:
    """Calibrated ``K0`` for ``(H, gamma = 2H)`` from a calibration file."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read K0 file {path}: {exc}") from exc
    for entry in data.get("entries", []):
        if abs(entry["H"] - H) < 1e-12:
            return float(entry["K0"])
    raise ConfigError(f"K0 file {path} has no entry for H={H}")


def _coerce(section: str, key: str, kind, value):
    where = f"[{section}] {key}"
    if kind is FLOATS:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected an array of numbers")
        return [float(v) for v in value]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


def _fill(section: str, schema: dict, given: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in [{section}]")
    out = {}
    for key, (kind, default) in schema.items():
        if key in given:
            out[key] = _coerce(section, key, kind, given[key])
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        else:
            out[key] = list(default) if isinstance(default, list) else default
    return out


def parse_config(text: str, kind: str, source: Optional[str] = None) -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source or '<config>'}: parse error: {exc}") from exc
    allowed = {"run", "drift", "bounds", kind}
    for name in data:
        if name not in allowed:
            if name in KINDS:
                raise ConfigError(f"section [{name}] does not belong to kind {kind!r}")
            raise ConfigError(f"unknown section or key {name!r}")
    cfg = ExperimentConfig(
        kind=kind,
        run=_fill("run", _RUN, data.get("run", {})),
        drift=_fill("drift", _DRIFT, data.get("drift", {})),
        params=_fill(kind, SCHEMAS[kind], data.get(kind, {})),
        bounds=_fill("bounds", _BOUNDS, data.get("bounds", {})),
        source=source,
        explicit_bounds=tuple(sorted(data.get("bounds", {}))),
    )
    validate(cfg)
    return cfg


def load_config(path, kind: str) -> ExperimentConfig:
    """Read and validate ``path`` for experiment ``kind``."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, kind, str(p))


def _positive(section, params, *keys):
    for k in keys:
        if not params[k] > 0:
            raise ConfigError(f"[{section}] {k} must be positive, got {params[k]}")


def validate(cfg: ExperimentConfig) -> None:
    """Check every parameter against the kind's constraints before any computation."""
    p, kind = cfg.params, cfg.kind
    if cfg.run["threads"] < 1:
        raise ConfigError("[run] threads must be >= 1")
    if cfg.drift["tag"] not in SDE_TAGS:
        raise ConfigError(f"[drift] tag must be one of {', '.join(SDE_TAGS)}")
    if "H" in p:
        try:
            H = HurstIndex(p["H"]).value
        except ValidationError as exc:
            raise ConfigError(f"[{kind}] {exc}") from exc
    for key in ("eps", "sigma"):
        if key in p:
            _positive(kind, p, key)
    for key in ("replicas", "N", "K", "n_times", "n_t"):
        if key in p and not p[key] >= 1:
            raise ConfigError(f"[{kind}] {key} must be >= 1")
    if "level" in p and not 0 < p["level"] < 1:
        raise ConfigError(f"[{kind}] level must lie in (0, 1)")
    if kind in ("variance", "slope-fit", "calibrate-k0") and cfg.drift["tag"] == "cubic":
        raise ConfigError(f"kind {kind!r} needs a linear drift tag")
    if kind == "spde-exit":
        if H <= 0.25:
            raise ConfigError(f"[spde-exit] H={H} must exceed 1/4 for cylindrical noise")
        if not 0 < p["s"] < 2 * H - 0.5:
            raise ConfigError(f"[spde-exit] s={p['s']} violates 0 < s < 2H-1/2={2 * H - 0.5:g}")
        if cfg.drift["tag"] == "cubic":
            q, r = p["q"], p["r"]
            if not 0 < r < 2 * H - 0.5:
                raise ConfigError(f"[spde-exit] r={r} violates 0 < r < 2H-1/2={2 * H - 0.5:g}")
            if not r <= q < r + 2:
                raise ConfigError(f"[spde-exit] need r <= q < r+2, got q={q}, r={r}")
        eta = cfg.bounds["eta"] or default_eta(H, p["s"])
        if 4 * H - 2 * p["s"] - eta <= 1:
            raise ConfigError("[bounds] eta too large: 4H - 2s - eta must exceed 1")
    if kind == "schauder":
        if len(p["pairs_q"]) != len(p["pairs_r"]):
            raise ConfigError("[schauder] pairs_q and pairs_r must have equal length")
        for q, r in zip(p["pairs_q"], p["pairs_r"]):
            if not r <= q < r + 2:
                raise ConfigError(f"[schauder] need r <= q < r+2, got q={q}, r={r}")
        if not 0 < p["t_min"] < p["t_max"]:
            raise ConfigError("[schauder] need 0 < t_min < t_max")
    if kind == "calibrate-k0":
        if len(p["thresholds"]) < 1:
            raise ConfigError("[calibrate-k0] thresholds must not be empty")
        if not 0 <= p["burn"] < cfg.drift["T"]:
            raise ConfigError("[calibrate-k0] burn must lie in [0, T)")
        if not p["ratio"] > 1:
            raise ConfigError("[calibrate-k0] ratio must exceed 1")
    if "h_over_sigma" in p and (not p["h_over_sigma"] or min(p["h_over_sigma"]) < 0):
        raise ConfigError(f"[{kind}] h_over_sigma must be a non-empty list of numbers >= 0")
    for key in ("K0", "c_mode"):
        if not cfg.bounds[key] > 0:
            raise ConfigError(f"[bounds] {key} must be positive")
    for key in ("r1", "r2", "eta", "nu"):
        if cfg.bounds[key] < 0:
            raise ConfigError(f"[bounds] {key} must be non-negative")
    # drift parameters are checked by constructing the drift
    try:
        cfg.make_drift()
    except ValidationError as exc:
        raise ConfigError(f"[drift] {exc}") from exc
