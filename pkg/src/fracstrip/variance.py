"""Variance of the slowly time-dependent fractional Ornstein-Uhlenbeck process.

The process solves ``dx = a(t) x / eps dt + sigma / eps^H dW^H`` with ``x_0 = 0``.
This module evaluates, by quadrature,

* the exact variance, written as a single and a double integral against the
  fBm covariance;
* the single-integral upper bound obtained by discarding the negative
  ``|u - v|^{2H}`` part of the double integral;
* the closed-form small-``eps`` bound ``sigma^2 2H Gamma(2H) / |a(t)|^{2H} (1 + r1 eps)``;

and estimates the same variance by Monte Carlo.

Quadrature uses composite Gauss-Legendre on a mesh graded geometrically
(ratio 1/2) into both endpoints, where the integrands carry algebraic
singularities, and uniform in the boundary layer of width ``O(eps)`` below
``t`` where ``exp(alpha(t, s)/eps)`` decays.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import integrate, special

from .errors import QuadratureError, ValidationError
from .fbm import TimeGrid, derive_seed, hurst_value, sample_fbm_matrix
from .parallel import map_chunks
from .schemes import integrate_linear, linear_step_factors
from .stats import MCEstimate, jackknife_variance


def _vectorised(fn: Callable) -> Callable:
    probe = np.array([0.0, 0.5])
    try:
        out = np.asarray(fn(probe), dtype=float)
        if out.shape == probe.shape:
            return fn
    except Exception:
        pass
    return np.vectorize(fn, otypes=[float])


def _chebyshev_antiderivative(a: Callable, T: float) -> Chebyshev:
    for deg in (16, 32, 64, 128, 256, 512, 1024):
        c = Chebyshev.interpolate(a, deg, domain=[0.0, T])
        scale = max(1.0, np.abs(c.coef).max())
        if np.abs(c.coef[-3:]).max() < 1e-15 * scale:
            break
    else:
        warnings.warn("drift coefficient is not resolved by a degree-1024 Chebyshev series")
    return c.integ(lbnd=0.0)


@dataclass(frozen=True)
class LinearDrift:
    """Coefficient ``a(t)`` with ``a(t) <= -a0`` and ``|a'(t)| <= a1`` on ``[0, T]``.

    Both bounds are verified on a uniform audit grid at construction; the
    derivative is taken from ``da`` when supplied, else by central differences.
    ``antiderivative`` (with value 0 at 0) is optional; without it ``alpha`` is
    computed from a Chebyshev expansion of ``a``.
    """

    a: Callable
    a0: float
    a1: float
    T: float
    da: Optional[Callable] = None
    antiderivative: Optional[Callable] = None
    audit_points: int = 2001
    amax: float = field(init=False, repr=False, compare=False)
    _A: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValidationError(f"a0 must be positive, got {self.a0}")
        if not self.a1 >= 0:
            raise ValidationError(f"a1 must be non-negative, got {self.a1}")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}")
        a = _vectorised(self.a)
        object.__setattr__(self, "a", a)
        tg = np.linspace(0.0, self.T, self.audit_points)
        vals = a(tg)
        if vals.max() > -self.a0 * (1 - 1e-12):
            raise ValidationError(
                f"a(t) <= -a0 = {-self.a0} violated: max a = {vals.max():.6g}")
        if self.da is not None:
            slope = np.asarray(_vectorised(self.da)(tg), dtype=float)
        else:
            hstep = 1e-5 * max(1.0, self.T)
            slope = (a(tg + hstep) - a(tg - hstep)) / (2 * hstep)
        if np.abs(slope).max() > self.a1 * (1 + 1e-6) + 1e-9:
            raise ValidationError(
                f"|a'(t)| <= a1 = {self.a1} violated: max |a'| = {np.abs(slope).max():.6g}")
        object.__setattr__(self, "amax", float(np.abs(vals).max()))
        A = self.antiderivative
        A = _vectorised(A) if A is not None else _chebyshev_antiderivative(a, self.T)
        object.__setattr__(self, "_A", A)

    @classmethod
    def constant(cls, value: float, T: float = 1.0) -> "LinearDrift":
        """``a(t) = value`` (negative)."""
        value = float(value)
        return cls(lambda t: np.full_like(np.asarray(t, dtype=float), value), -value, 0.0, T,
                   da=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   antiderivative=lambda t: value * np.asarray(t, dtype=float))

    @classmethod
    def sinusoidal(cls, base: float = 1.0, amp: float = 0.1, T: float = 1.0) -> "LinearDrift":
        """``a(t) = -(base + amp sin t)``."""
        return cls(lambda t: -(base + amp * np.sin(t)), base - abs(amp), abs(amp), T,
                   da=lambda t: -amp * np.cos(t),
                   antiderivative=lambda t: -(base * np.asarray(t) + amp * (1 - np.cos(t))))

    def __call__(self, t):
        return self.a(np.asarray(t, dtype=float))

    def A(self, t):
        """``int_0^t a(s) ds``."""
        return np.asarray(self._A(np.asarray(t, dtype=float)), dtype=float)

    def alpha(self, t, u=None):
        """``alpha(t, u) = int_u^t a(s) ds``; ``alpha(t) = alpha(t, 0)``."""
        if u is None:
            return self.A(t)
        return self.A(t) - self.A(u)


def alpha(drift: LinearDrift, t: float, u: float = 0.0) -> float:
    """``int_u^t a(s) ds`` for ``0 <= u <= t <= T``."""
    if not 0 <= u <= t <= drift.T * (1 + 1e-12):
        raise ValidationError(f"alpha needs 0 <= u <= t <= T, got u={u}, t={t}")
    return float(drift.alpha(t, u))


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature controls.

    ``method`` is ``"graded"`` (composite Gauss-Legendre of ``order`` on a
    graded mesh, refined until two levels agree to ``tol``) or ``"adaptive"``
    (QUADPACK with algebraic endpoint weights).  ``max_subdivisions`` caps the
    number of cells, respectively the QUADPACK subinterval limit.
    """

    method: str = "graded"
    tol: float = 1e-8
    max_subdivisions: int = 20000
    order: int = 8
    ratio: float = 0.5
    max_level: int = 4

    def __post_init__(self):
        if self.method not in ("graded", "adaptive"):
            raise ValidationError(f"unknown quadrature method {self.method!r}")
        if not self.tol > 0:
            raise ValidationError("quadrature tolerance must be positive")


@functools.lru_cache(maxsize=16)
def _gauss(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _grading(top: float, ratio: float, exponent: float) -> np.ndarray:
    """Geometric points ``top * ratio^j`` deep enough for an ``x^exponent`` singularity."""
    depth = math.ceil(53.0 / max(exponent, 0.05) / -math.log2(ratio)) + 2
    return top * ratio ** np.arange(depth + 1)


class _Mesh:
    """Gauss nodes on ``[0, t]`` held in both coordinates ``s`` and ``u = t - s``.

    The near-``t`` half is built in ``u`` and the near-``0`` half in ``s`` so that
    small distances to either endpoint are represented without cancellation.
    """

    def __init__(self, t: float, eps: float, drift: LinearDrift, spec: QuadratureSpec,
                 level: int, exp_t: float, exp_0: float):
        m = 0.5 * t
        width = 2.0 * eps / max(drift.amax, 1e-300) * 0.5 ** level
        layer = 40.0 * eps / drift.a0
        near_t = [np.array([0.0, m]), _grading(min(m, eps), spec.ratio, exp_t)]
        if min(m, eps) < min(m, layer):
            near_t.append(np.arange(min(m, eps), min(m, layer), width))
        if layer < m:
            near_t.append(np.linspace(layer, m, 9 * 2 ** level))
        near_0 = [np.array([0.0, m]), _grading(m, spec.ratio, exp_0)]
        lo = max(0.0, t - layer)
        if lo < m:
            near_0.append(np.arange(m, lo, -width))
        bu = np.unique(np.concatenate(near_t))
        bs = np.unique(np.concatenate(near_0))
        ncells = bu.size + bs.size - 2
        if ncells > spec.max_subdivisions:
            raise QuadratureError(
                f"graded mesh needs {ncells} cells > max_subdivisions={spec.max_subdivisions}")
        x, w = _gauss(spec.order)
        u1, wu = self._nodes(bu, x, w)
        s0, ws = self._nodes(bs, x, w)
        self.u = np.concatenate([u1, t - s0])
        self.s = np.concatenate([t - u1, s0])
        self.w = np.concatenate([wu, ws])

    @staticmethod
    def _nodes(b, x, w):
        a, c = b[:-1, None], b[1:, None]
        half = 0.5 * (c - a)
        return (a + half * (x + 1)).ravel(), (half * w).ravel()


def _refine(evaluate: Callable[[int], float], spec: QuadratureSpec, what: str) -> float:
    prev = evaluate(0)
    for level in range(1, spec.max_level + 1):
        cur = evaluate(level)
        if abs(cur - prev) <= spec.tol:
            return cur
        prev = cur
    raise QuadratureError(f"{what}: graded quadrature did not reach tol={spec.tol:g} "
                          f"after {spec.max_level} refinements (last change {abs(cur - prev):.3e})")


def _quad(fn, lo, hi, spec: QuadratureSpec, wvar, what: str) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(fn, lo, hi, weight="alg", wvar=wvar, epsabs=spec.tol,
                                    epsrel=1e-12, limit=spec.max_subdivisions)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"{what}: adaptive quadrature did not converge ({exc})") from exc
    return val


def _check(drift, H, sigma, eps, t):
    H = hurst_value(H)
    if not sigma >= 0:
        raise ValidationError("sigma must be non-negative")
    if not eps > 0:
        raise ValidationError("eps must be positive")
    if not 0 <= t <= drift.T * (1 + 1e-12):
        raise ValidationError(f"t={t} outside [0, T={drift.T}]")
    return H


def variance_bound_quadrature(drift: LinearDrift, H, sigma: float, eps: float, t: float,
                              q: QuadratureSpec = QuadratureSpec()) -> float:
    """Single-integral upper bound on ``Var(x_t)``.

    ``(2H sigma^2/eps^{2H}) int_0^t [g(s)(t-s)^{2H-1} - g(0)(1-g(s)) s^{2H-1}] ds``
    with ``g(s) = exp(alpha(t,s)/eps)``.
    """
    H = _check(drift, H, sigma, eps, t)
    if t == 0 or sigma == 0:
        return 0.0
    pref = 2 * H * sigma ** 2 / eps ** (2 * H)
    At = float(drift.A(t))
    g0 = math.exp(At / eps)

    if q.method == "adaptive":
        def g(s):
            return np.exp((At - drift.A(s)) / eps)
        first = _quad(lambda s: g(s), 0.0, t, q, (0.0, 2 * H - 1),
                      "single-integral bound, first term")
        second = 0.0
        if g0 > 0:
            second = _quad(lambda s: g0 * -np.expm1((At - drift.A(s)) / eps), 0.0, t, q,
                           (2 * H - 1, 0.0), "single-integral bound, second term")
        return pref * (first - second)

    def evaluate(level):
        mesh = _Mesh(t, eps, drift, q, level, 2 * H, 2 * H)
        al = (At - drift.A(mesh.s)) / eps
        vals = np.exp(al) * mesh.u ** (2 * H - 1)
        if g0 > 0:
            vals = vals - g0 * -np.expm1(al) * mesh.s ** (2 * H - 1)
        return pref * np.dot(mesh.w, vals)

    return _refine(evaluate, q, "single-integral bound")


def _inner_triangle(drift, At, eps, H, q, level, tau, kernel) -> np.ndarray:
    """``int_0^tau gp(v) kernel(tau, v) dv`` for every outer node ``tau``."""
    out = np.zeros_like(tau)
    for i, ti in enumerate(tau):
        if ti <= 0:
            continue
        mesh = _Mesh(ti, eps, drift, q, level, 1 + 2 * H, 1 + 2 * H)
        out[i] = np.dot(mesh.w, kernel(ti, mesh.s, mesh.u))
    return out


def variance_exact_double_integral(drift: LinearDrift, H, sigma: float, eps: float, t: float,
                                   q: QuadratureSpec = QuadratureSpec(),
                                   form: str = "anchored", triangle: str = "lower") -> float:
    """Exact ``Var(x_t)`` from the integration-by-parts representation of ``x_t``.

    ``form="literal"`` evaluates
    ``(sigma^2/eps^{2H}) [t^{2H} + 2 int k(s) C(t,s) ds + iint k(u) k(v) C(u,v) du dv]``
    with ``k = a g / eps`` and ``C`` the fBm covariance.  ``form="anchored"``
    (default) evaluates the same quantity after rewriting ``W(s)`` as
    ``W(t) - (W(t) - W(s))``: every term is then ``O(eps^{2H})`` and the
    cancellation of the literal form is avoided.

    The double integral is computed over one triangle of the square and
    doubled; ``triangle`` selects which one.
    """
    H = _check(drift, H, sigma, eps, t)
    if form not in ("anchored", "literal"):
        raise ValidationError(f"unknown form {form!r}")
    if triangle not in ("lower", "upper"):
        raise ValidationError(f"unknown triangle {triangle!r}")
    if t == 0 or sigma == 0:
        return 0.0
    if q.method == "adaptive":
        return _exact_adaptive(drift, H, sigma, eps, t, q)
    At = float(drift.A(t))
    g0 = math.exp(At / eps)
    h2 = 2 * H

    def gp(s):
        # derivative of g(s) = exp(alpha(t,s)/eps); positive since a < 0
        return -drift(s) / eps * np.exp((At - drift.A(s)) / eps)

    def evaluate(level):
        mesh = _Mesh(t, eps, drift, q, level, 1 + h2, h2 + 1)
        s, u, w = mesh.s, mesh.u, mesh.w
        d = gp(s)
        keep = d > 1e-300
        if form == "anchored":
            single = 2 * g0 * np.dot(w, d * 0.5 * (t ** h2 + u ** h2 - s ** h2))
            single += (1 - g0) * np.dot(w, d * u ** h2)
            if triangle == "lower":
                inner = _inner_triangle(drift, At, eps, H, q, level, s[keep],
                                        lambda ti, v, dv: gp(v) * dv ** h2)
            else:
                inner = _inner_upper(drift, At, eps, H, q, level, s[keep], t,
                                     lambda ti, v, dv: gp(v) * dv ** h2)
            double = -0.5 * 2 * np.dot(w[keep], d[keep] * inner)
            return sigma ** 2 / eps ** h2 * (g0 ** 2 * t ** h2 + single + double)
        k = -d  # a(s) g(s) / eps
        single = 2 * np.dot(w, k * 0.5 * (t ** h2 + s ** h2 - u ** h2))
        cov = lambda ti, v, dv: 0.5 * (ti ** h2 + v ** h2 - dv ** h2)
        if triangle == "lower":
            inner = _inner_triangle(drift, At, eps, H, q, level, s[keep],
                                    lambda ti, v, dv: -gp(v) * cov(ti, v, dv))
        else:
            inner = _inner_upper(drift, At, eps, H, q, level, s[keep], t,
                                 lambda ti, v, dv: -gp(v) * cov(ti, v, dv))
        double = 2 * np.dot(w[keep], k[keep] * inner)
        return sigma ** 2 / eps ** h2 * (t ** h2 + single + double)

    return _refine(evaluate, q, "exact variance")


def _inner_upper(drift, At, eps, H, q, level, tau, t, kernel) -> np.ndarray:
    """``int_tau^t gp(v) kernel(tau, v) dv`` (upper triangle); ``dv = v - tau``."""
    out = np.zeros_like(tau)
    for i, ti in enumerate(tau):
        span = t - ti
        if span <= 0:
            continue
        mesh = _Mesh(span, eps, drift, q, level, 1 + 2 * H, 1 + 2 * H)
        # mesh.s runs over [0, span]: v = tau + s, graded at both ends
        v = ti + mesh.s
        out[i] = np.dot(mesh.w, kernel(ti, v, mesh.s))
    return out


def _exact_adaptive(drift, H, sigma, eps, t, q):
    At = float(drift.A(t))
    g0 = math.exp(At / eps)
    h2 = 2 * H

    def gp(s):
        return -drift(s) / eps * np.exp((At - drift.A(s)) / eps)

    opts = dict(epsabs=q.tol * eps ** h2, epsrel=1e-12, limit=q.max_subdivisions)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            single = integrate.quad(lambda s: gp(s) * (g0 * (t ** h2 + (t - s) ** h2 - s ** h2)
                                                       + (1 - g0) * (t - s) ** h2),
                                    0.0, t, points=[max(0.0, t - 40 * eps / drift.a0)], **opts)[0]

            def inner(tau):
                return integrate.quad(gp, 0.0, tau, weight="alg", wvar=(0.0, h2), **opts)[0]

            double = integrate.quad(lambda tau: gp(tau) * inner(tau), 0.0, t,
                                    points=[max(0.0, t - 40 * eps / drift.a0)], **opts)[0]
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"exact variance: adaptive quadrature failed ({exc})") from exc
    return sigma ** 2 / eps ** h2 * (g0 ** 2 * t ** h2 + single - double)


def variance_asymptotic(drift: LinearDrift, H, sigma: float, eps: float, t: float,
                        r1: float = 0.0) -> float:
    """``sigma^2 2H Gamma(2H) / |a(t)|^{2H} (1 + r1 eps)``."""
    H = hurst_value(H)
    if r1 < 0:
        raise ValidationError("r1 must be non-negative")
    return float(sigma ** 2 * 2 * H * special.gamma(2 * H) / abs(drift(t)) ** (2 * H)
                 * (1 + r1 * eps))


def calibrate_r1(drift: LinearDrift, H, eps_values: Sequence[float], t_values: Sequence[float],
                 q: QuadratureSpec = QuadratureSpec()) -> float:
    """Smallest ``r1 >= 0`` with the closed-form bound above the quadrature bound on the grid."""
    r1 = 0.0
    for eps in eps_values:
        for t in t_values:
            ratio = (variance_bound_quadrature(drift, H, 1.0, eps, t, q)
                     / variance_asymptotic(drift, H, 1.0, eps, t, 0.0))
            r1 = max(r1, (ratio - 1) / eps)
    return r1


def grid_for_times(times: Sequence[float], min_steps: int, max_tries: int = 100000) -> TimeGrid:
    """Smallest uniform grid on ``[0, max(times)]`` with at least ``min_steps`` steps
    that contains every requested time as a node."""
    times = np.asarray(times, dtype=float)
    T = float(times.max())
    for N in range(int(min_steps), int(min_steps) + max_tries):
        x = times * N / T
        if np.all(np.abs(x - np.round(x)) < 1e-9 * N):
            return TimeGrid(T, N)
    raise ValidationError("requested times do not fit a uniform grid")


def mc_variance(drift: LinearDrift, H, sigma: float, eps: float, t, replicas: int, seed: int,
                n_steps: Optional[int] = None, level: float = 0.95, threads: int = 1,
                steps_per_eps: float = 40.0):
    """Monte Carlo variance of ``x_t`` (``x_0 = 0``) with jackknife confidence intervals.

    ``t`` may be a scalar or a sequence of times; one :class:`MCEstimate` is
    returned per time.  Replica ``r`` is driven by ``derive_seed(seed, r)``.
    """
    H = hurst_value(H)
    if replicas < 100:
        raise ValidationError("mc_variance needs at least 100 replicas")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times <= 0) or times.max() > drift.T * (1 + 1e-12):
        raise ValidationError("times must lie in (0, T]")
    if sigma == 0:
        out = [MCEstimate(0.0, 0.0, 0.0, replicas, seed, level) for _ in times]
        return out if np.ndim(t) else out[0]
    if n_steps is None:
        n_steps = max(64, math.ceil(steps_per_eps * times.max() * drift.amax / eps))
    grid = grid_for_times(times, n_steps)
    idx = np.array([grid.index_of(ti) for ti in times])
    nodes = grid.nodes
    E, w = linear_step_factors(drift.alpha(nodes[1:], nodes[:-1]) / eps)
    scale = sigma / eps ** H

    def run(a, b):
        W = sample_fbm_matrix(H, grid, [derive_seed(seed, r) for r in range(a, b)])
        x = integrate_linear(E, w, scale, np.diff(W, axis=1), 0.0)
        return x[:, idx]

    samples = np.concatenate(map_chunks(run, replicas, threads=threads))
    var, hw = jackknife_variance(samples, level)
    out = [MCEstimate(float(v), float(v - h), float(v + h), replicas, seed, level)
           for v, h in zip(var, hw)]
    return out if np.ndim(t) else out[0]
