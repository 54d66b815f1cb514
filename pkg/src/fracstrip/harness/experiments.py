"""Experiment runners.

Each kind writes three files into the configured output directory:
``results.csv`` (one row per result, every row carrying the seed),
``report.json`` (configuration echo, version, calibrated constants,
summaries, wall-clock) and ``plot.txt`` (a declarative plot description).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from scipy import special

from .. import __version__
from ..bounds import (BoundParams, gaussian_sup_tail, kappa, psi1_constant, q_of_s,
                      schauder_constant, sde_bound, sde_bound_nonlinear, smallest_dominating_k0,
                      spde_bound, spde_bound_nonlinear)
from ..errors import FracstripError, HTooLargeError
from ..fbm import TimeGrid, derive_seed, sample_fbm_matrix
from ..parallel import map_chunks
from ..schemes import integrate_linear, linear_step_factors
from ..slowfast import SdeSetup, exit_probability, sup_deviations
from ..spectral import (SpdeSetup, SpectralField, bracket, heat_norm, schauder_ratio,
                        spde_exit_probability, spde_sup_norms, storage_wavenumbers)
from ..stats import fit_log_slope, proportion_estimate
from ..variance import (QuadratureSpec, calibrate_r1, mc_variance, variance_asymptotic,
                        variance_bound_quadrature, variance_exact_double_integral)
from .config import ExperimentConfig

CSV_SCHEMA_VERSION = 1

HEADERS: Dict[str, List[str]] = {
    "variance": ["seed", "t", "mc_var", "ci_lo", "ci_hi", "exact_quad", "integral_bound",
                 "asymptotic_bound", "chain_ok"],
    "sde-exit": ["seed", "h", "p_hat", "ci_lo", "ci_hi", "bound_linear", "bound_nonlinear",
                 "bound_linear_raw", "bound_nonlinear_raw"],
    "slope-fit": ["seed", "h", "z", "p_hat", "ci_lo", "ci_hi", "count"],
    "spde-exit": ["seed", "h", "p_hat", "ci_lo", "ci_hi", "p_hat_standard", "bound", "bound_raw"],
    "schauder": ["seed", "q", "r", "t", "rho", "heat_norm"],
    "calibrate-k0": ["seed", "c", "p_hat", "ci_lo", "ci_hi", "count", "unit_bound",
                     "calibrated_bound"],
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class _CsvWriter:
    """Row-at-a-time writer so partial results survive a failure."""

    def __init__(self, path: Path, header: List[str]):
        self.header = header
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(header)
        self.rows: List[dict] = []

    def row(self, **values):
        if set(values) != set(self.header):
            raise KeyError(f"row keys {sorted(values)} do not match header {self.header}")
        self._w.writerow([_fmt(values[k]) for k in self.header])
        self._fh.flush()
        self.rows.append(values)

    def close(self):
        self._fh.close()


@dataclass
class RunReport:
    config: dict
    version: str
    constants: Dict[str, Any] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    rows: List[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    status: str = "ok"
    files: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"config": self.config, "version": self.version,
                "csv_schema_version": CSV_SCHEMA_VERSION, "constants": self.constants,
                "summary": self.summary, "rows": len(self.rows), "wall_clock_s": self.wall_clock,
                "status": self.status, "files": self.files}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_plot(path: Path, title: str, x: tuple, y: tuple, series: List[str]):
    lines = ["# fracstrip plot description v1", f"title: {title}", "data: results.csv",
             f"x: {x[0]} ({x[1]})", f"y: {y[0]} ({y[1]})"]
    lines += series
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run(cfg: ExperimentConfig) -> RunReport:
    """Execute ``cfg`` and write its outputs; deterministic given (config, seed)."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.echo(), __version__)
    report.files = {"csv": str(out / "results.csv"), "report": str(out / "report.json"),
                    "plot": str(out / "plot.txt")}
    writer = _CsvWriter(out / "results.csv", HEADERS[cfg.kind])
    start = time.perf_counter()
    try:
        _RUNNERS[cfg.kind](cfg, writer, report, out)
    except FracstripError as exc:
        report.status = f"failed: {type(exc).__name__}: {exc}"
        raise
    finally:
        writer.close()
        report.rows = writer.rows
        report.wall_clock = time.perf_counter() - start
        (out / "report.json").write_text(
            json.dumps(report.to_json(), indent=2, sort_keys=True, default=_json_default) + "\n",
            encoding="utf-8")
    return report


# --- variance -------------------------------------------------------------

def _run_variance(cfg, w: _CsvWriter, report: RunReport, out: Path):
    p = cfg.params
    drift = cfg.linear_drift()
    H, eps, sigma = p["H"], p["eps"], p["sigma"]
    q = QuadratureSpec(tol=p["tol"])
    times = [drift.T * i / p["n_times"] for i in range(1, p["n_times"] + 1)]
    if "r1" in cfg.explicit_bounds:
        r1 = cfg.bounds["r1"]
    else:
        r1 = calibrate_r1(drift, H, sorted(set(p["r1_eps"]) | {eps}), times, q)
    report.constants["r1"] = r1
    mc = mc_variance(drift, H, sigma, eps, times, p["replicas"], cfg.seed, level=p["level"],
                     threads=cfg.threads, steps_per_eps=p["steps_per_eps"])
    ok_all = True
    for t, est in zip(times, mc):
        exact = variance_exact_double_integral(drift, H, sigma, eps, t, q)
        l31 = variance_bound_quadrature(drift, H, sigma, eps, t, q)
        l32 = variance_asymptotic(drift, H, sigma, eps, t, r1)
        tol = p["tol"]
        ok = est.ci_low <= exact + tol and exact <= l31 + tol and l31 <= l32 + tol
        ok_all &= ok
        w.row(seed=cfg.seed, t=t, mc_var=est.value, ci_lo=est.ci_low, ci_hi=est.ci_high,
              exact_quad=exact, integral_bound=l31, asymptotic_bound=l32, chain_ok=ok)
    report.summary["chain_ok"] = ok_all
    _write_plot(out / "plot.txt", f"variance H={H} eps={eps}", ("t", "linear"),
                ("variance", "linear"),
                ["series: mc_var | column=mc_var | error=ci_lo,ci_hi | style=points",
                 "series: exact_quad | column=exact_quad | style=line",
                 "reference: integral_bound | column=integral_bound | style=dashed",
                 "reference: asymptotic_bound | column=asymptotic_bound | style=dotted"])


# --- SDE exits ------------------------------------------------------------

def _slope_summary(hs, sigma, est, replicas, H):
    z = np.asarray(hs) ** 2 / (2 * sigma ** 2)
    p_hat = np.array([e.p_hat for e in est])
    counts = np.array([e.count for e in est])
    slope, se, used = fit_log_slope(z, p_hat, counts, replicas)
    k0 = kappa(0.0, H)
    return {"slope": slope, "stderr": se, "kappa0": k0, "ratio_to_kappa0": slope / k0,
            "points_used": int(np.sum(used))}


def _run_sde_exit(cfg, w: _CsvWriter, report: RunReport, out: Path):
    p = cfg.params
    drift = cfg.make_drift()
    params = cfg.bound_params()
    setup = SdeSetup(drift, p["H"], p["eps"], p["sigma"], p["N"], p["x_guess"])
    slow = setup.slow()
    a0 = drift.a0 if setup.linear else slow.a_bar0
    M = 0.0 if setup.linear else drift.M
    report.constants.update(K0=params.K0, r2=params.r2, a0=a0, M=M)
    sups = sup_deviations(setup, p["replicas"], cfg.seed, cfg.threads)
    hs = [r * p["sigma"] for r in p["h_over_sigma"]]
    est = exit_probability(setup, hs, p["replicas"], cfg.seed, p["level"], sups=sups)
    for h, e in zip(hs, est):
        lin = sde_bound(drift.T, h, p["sigma"], a0, p["eps"], p["H"], params)
        try:
            nl = sde_bound_nonlinear(drift.T, h, p["sigma"], a0, p["eps"], p["H"], M, params)
            nl_val, nl_raw = nl.bound_value, nl.raw
        except HTooLargeError:
            nl_val = nl_raw = math.nan
        w.row(seed=cfg.seed, h=h, p_hat=e.p_hat, ci_lo=e.ci_low, ci_hi=e.ci_high,
              bound_linear=lin.bound_value, bound_nonlinear=nl_val,
              bound_linear_raw=lin.raw, bound_nonlinear_raw=nl_raw)
    try:
        s = _slope_summary(hs, p["sigma"], est, p["replicas"], p["H"])
        report.summary["slope_fit"] = s
        w.row(seed=cfg.seed, h="slope", p_hat=s["slope"], ci_lo=s["slope"] - 1.96 * s["stderr"],
              ci_hi=s["slope"] + 1.96 * s["stderr"], bound_linear=s["kappa0"],
              bound_nonlinear=None, bound_linear_raw=None, bound_nonlinear_raw=None)
    except FracstripError as exc:
        report.summary["slope_fit"] = f"unavailable: {exc}"
    _write_plot(out / "plot.txt", f"strip exit H={p['H']} eps={p['eps']}", ("h", "linear"),
                ("probability", "log"),
                ["series: p_hat | column=p_hat | error=ci_lo,ci_hi | style=points",
                 "reference: bound_linear | column=bound_linear | style=line",
                 "reference: bound_nonlinear | column=bound_nonlinear | style=dashed"])


def _run_slope_fit(cfg, w: _CsvWriter, report: RunReport, out: Path):
    p = cfg.params
    drift = cfg.linear_drift()
    setup = SdeSetup(drift, p["H"], p["eps"], p["sigma"], p["N"])
    sups = sup_deviations(setup, p["replicas"], cfg.seed, cfg.threads)
    hs = [r * p["sigma"] for r in p["h_over_sigma"]]
    est = exit_probability(setup, hs, p["replicas"], cfg.seed, p["level"], sups=sups)
    for h, e in zip(hs, est):
        w.row(seed=cfg.seed, h=h, z=h * h / (2 * p["sigma"] ** 2), p_hat=e.p_hat,
              ci_lo=e.ci_low, ci_hi=e.ci_high, count=e.count)
    s = _slope_summary(hs, p["sigma"], est, p["replicas"], p["H"])
    H = p["H"]
    s["ratio_to_true_stationary_rate"] = s["slope"] * H * special.gamma(2 * H)
    report.summary["slope_fit"] = s
    w.row(seed=cfg.seed, h="slope", z=None, p_hat=s["slope"],
          ci_lo=s["slope"] - 1.96 * s["stderr"], ci_hi=s["slope"] + 1.96 * s["stderr"],
          count=s["points_used"])
    _write_plot(out / "plot.txt", f"exponent fit H={H}", ("z = h^2/(2 sigma^2)", "linear"),
                ("-log p_hat", "linear"),
                ["series: p_hat | column=p_hat | transform=-log | style=points",
                 f"reference: kappa0 | slope={s['kappa0']!r} | style=line"])


# --- SPDE exits -----------------------------------------------------------

def _run_spde_exit(cfg, w: _CsvWriter, report: RunReport, out: Path):
    p = cfg.params
    drift = cfg.make_drift()
    params = cfg.bound_params()
    setup = SpdeSetup(drift, p["H"], p["eps"], p["sigma"], p["K"], p["N"], p["s"], p["x_guess"])
    slow = setup.slow()
    a0 = drift.a0 if setup.linear else slow.a_bar0
    Q = q_of_s(p["H"], p["s"], params.eta)
    report.constants.update(K0=params.K0, r2=params.r2, a0=a0, Q=Q)
    if not setup.linear:
        cprime = psi1_constant(p["q"], p["r"], drift.T)
        report.constants.update(cprime=cprime, nu=1 - (p["q"] - p["r"]) / 2, M=drift.M)
    sups = spde_sup_norms(setup, p["replicas"], cfg.seed, cfg.threads)
    hs = [r * p["sigma"] for r in p["h_over_sigma"]]
    est = spde_exit_probability(setup, hs, p["replicas"], cfg.seed, p["level"], sups=sups)
    est_std = spde_exit_probability(setup, hs, p["replicas"], cfg.seed, p["level"],
                                    norm="standard", sups=sups)
    for h, e, es in zip(hs, est, est_std):
        try:
            if setup.linear:
                b = spde_bound(drift.T, h, p["sigma"], p["s"], a0, p["eps"], p["H"], params)
            else:
                b = spde_bound_nonlinear(drift.T, h, p["sigma"], p["s"], p["eps"], p["H"],
                                         drift.M, cprime, p["q"], p["r"], params, a0=a0)
            bv, braw = b.bound_value, b.raw
        except HTooLargeError:
            bv = braw = math.nan
        w.row(seed=cfg.seed, h=h, p_hat=e.p_hat, ci_lo=e.ci_low, ci_hi=e.ci_high,
              p_hat_standard=es.p_hat, bound=bv, bound_raw=braw)
    _write_plot(out / "plot.txt", f"SPDE strip exit H={p['H']} s={p['s']}", ("h", "linear"),
                ("probability", "log"),
                ["series: p_hat | column=p_hat | error=ci_lo,ci_hi | style=points",
                 "series: p_hat_standard | column=p_hat_standard | style=points",
                 "reference: bound | column=bound | style=line"])


# --- Schauder -------------------------------------------------------------

def random_hr_field(r: float, K: int, seed) -> SpectralField:
    """Field with coefficients ``<k>^{-r-1/2-0.01}`` times independent standard normals."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 0)))
    k = storage_wavenumbers(K)
    return SpectralField(K, bracket(k) ** (-r - 0.51) * rng.standard_normal(2 * K + 1))


def flank_slope(field: SpectralField, q: float, t_lo: float, t_hi: float, n: int = 21) -> float:
    """Least-squares slope of ``log ||e^{t Delta} f||_{H^q}`` against ``log t``."""
    t = np.geomspace(t_lo, t_hi, n)
    return float(np.polyfit(np.log(t), np.log(heat_norm(field, q, t)), 1)[0])


def _run_schauder(cfg, w: _CsvWriter, report: RunReport, out: Path):
    p = cfg.params
    times = np.geomspace(p["t_min"], p["t_max"], p["n_t"])
    pairs = []
    for i, (q, r) in enumerate(zip(p["pairs_q"], p["pairs_r"])):
        f = random_hr_field(r, p["K"], derive_seed(cfg.seed, i))
        rho = schauder_ratio(f, q, r, times)
        norms = heat_norm(f, q, times)
        for t, rv, nv in zip(times, rho, norms):
            w.row(seed=cfg.seed, q=q, r=r, t=t, rho=rv, heat_norm=nv)
        slope = flank_slope(f, q, p["flank_min"], p["flank_max"])
        pairs.append({"q": q, "r": r, "sup_rho": float(rho.max()), "flank_slope": slope,
                      "expected_slope": -(q - r) / 2, "c_qr": schauder_constant(q, r, p["t_max"])})
    report.summary["pairs"] = pairs
    _write_plot(out / "plot.txt", "heat semigroup smoothing", ("t", "log"), ("rho", "log"),
                ["series: rho | column=rho | group=q,r | style=line"])


# --- K0 calibration -------------------------------------------------------

def reference_sups(cfg: ExperimentConfig):
    """One-sided grid suprema of the stationary reference process over the window."""
    p = cfg.params
    drift = cfg.linear_drift()
    H, eps, sigma = p["H"], p["eps"], p["sigma"]
    grid = TimeGrid(drift.T, p["N"])
    t = grid.nodes
    E, wgt = linear_step_factors(drift.alpha(t[1:], t[:-1]) / eps)
    window = t >= p["burn"]

    def chunk(a, b):
        W = sample_fbm_matrix(H, grid, [derive_seed(cfg.seed, r) for r in range(a, b)])
        x = integrate_linear(E, wgt, sigma / eps ** H, np.diff(W, axis=1))
        return np.max(x[:, window], axis=1)

    sups = np.concatenate(map_chunks(chunk, p["replicas"], threads=cfg.threads))
    probe = np.linspace(max(p["burn"], t[1]), drift.T, 5)
    var_sup = max(variance_exact_double_integral(drift, H, sigma, eps, ti) for ti in probe)
    return sups, var_sup


def calibrate_k0(cfg: ExperimentConfig, writer: Optional[_CsvWriter] = None) -> float:
    """Smallest ``K0`` on a geometric grid for which the Gaussian supremum tail bound
    dominates the reference exceedance frequencies at every threshold."""
    p = cfg.params
    drift = cfg.linear_drift()
    H, eps, sigma = p["H"], p["eps"], p["sigma"]
    sups, var_sup = reference_sups(cfg)
    G = sigma ** 2 / eps ** (2 * H)
    cs = [m * math.sqrt(var_sup) for m in p["thresholds"]]
    est = [proportion_estimate(int(np.count_nonzero(sups > c)), p["replicas"], p["level"],
                               cfg.seed) for c in cs]
    unit = [gaussian_sup_tail(1.0, 2 * H, G, drift.T, c, var_sup) for c in cs]
    K0 = smallest_dominating_k0(unit, [e.p_hat for e in est],
                                [(e.ci_low, e.ci_high) for e in est], p["ratio"])
    if writer is not None:
        for c, e, u in zip(cs, est, unit):
            writer.row(seed=cfg.seed, c=c, p_hat=e.p_hat, ci_lo=e.ci_low, ci_hi=e.ci_high,
                       count=e.count, unit_bound=u, calibrated_bound=K0 * u)
    return K0


def _run_calibrate(cfg, w: _CsvWriter, report: RunReport, out: Path):
    p = cfg.params
    K0 = calibrate_k0(cfg, w)
    entry = {"H": p["H"], "gamma": 2 * p["H"], "K0": K0, "seed": cfg.seed,
             "replicas": p["replicas"], "eps": p["eps"], "sigma": p["sigma"]}
    report.constants["K0"] = K0
    (out / "calibration.json").write_text(json.dumps({"entries": [entry]}, indent=2) + "\n",
                                          encoding="utf-8")
    report.files["calibration"] = str(out / "calibration.json")
    _write_plot(out / "plot.txt", "K0 calibration", ("c", "linear"), ("probability", "log"),
                ["series: p_hat | column=p_hat | error=ci_lo,ci_hi | style=points",
                 "reference: calibrated_bound | column=calibrated_bound | style=line"])


_RUNNERS = {
    "variance": _run_variance,
    "sde-exit": _run_sde_exit,
    "slope-fit": _run_slope_fit,
    "spde-exit": _run_spde_exit,
    "schauder": _run_schauder,
    "calibrate-k0": _run_calibrate,
}
