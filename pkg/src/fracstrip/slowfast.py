"""Slow-fast fractional SDEs: slow manifold, slow solution, strip exits.

The equation is ``dx = f(t, x)/eps dt + sigma/eps^H dW^H``.  A stable
equilibrium branch ``x*(t)`` is continued by Newton's method; the deterministic
slow solution ``x_bar`` is integrated with Radau from ``x*(0)``; sample paths
are advanced by exponential Euler, and the strip
``|x - x_bar(t)| |a_bar(t)|^H < h`` is monitored on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from .errors import LeftBasinError, NewtonError, StabilityError, ValidationError
from .fbm import FbmPath, TimeGrid, derive_seed, hurst_value, sample_fbm_matrix
from .parallel import map_chunks
from .schemes import BLOWUP_GUARD, integrate_linear, integrate_nonlinear, linear_step_factors
from .stats import MCEstimate, proportion_estimate
from .variance import LinearDrift


@dataclass(frozen=True)
class NonlinearDrift:
    """Reaction term ``f(t, x)`` with its derivative and remainder constants.

    ``M`` and ``d`` bound the quadratic remainder ``|b(t, y)| <= M y^2`` for
    ``|y| <= d`` around the slow solution.  ``f`` and ``df_dx`` take a scalar
    time and an array of states.  ``df_dx`` is checked against central
    differences on ``audit_x`` at construction.
    """

    f: Callable
    df_dx: Callable
    M: float
    d: float
    T: float
    audit_x: tuple = (-2.0, 2.0)
    audit_points: int = 41

    def __post_init__(self):
        if not self.M >= 0:
            raise ValidationError(f"M must be non-negative, got {self.M}")
        if not self.d > 0:
            raise ValidationError(f"d must be positive, got {self.d}")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}")
        xs = np.linspace(*self.audit_x, self.audit_points)
        step = 1e-5
        for t in np.linspace(0.0, self.T, self.audit_points):
            exact = np.asarray(self.df_dx(t, xs), dtype=float)
            fd = (np.asarray(self.f(t, xs + step)) - np.asarray(self.f(t, xs - step))) / (2 * step)
            if np.any(np.abs(exact - fd) > 1e-6 * np.maximum(1.0, np.abs(exact))):
                raise ValidationError(f"df_dx disagrees with finite differences of f at t={t:.4g}")

    @classmethod
    def cubic(cls, amp: float = 0.1, T: float = 1.0, d: float = 0.5) -> "NonlinearDrift":
        """``f = x - x^3 + amp sin t``; ``M = 3 max|x| + d`` on the branch near ``-1``."""
        xmax = _cubic_root_bound(amp)
        return cls(lambda t, x: x - x ** 3 + amp * np.sin(t),
                   lambda t, x: 1 - 3 * np.asarray(x) ** 2,
                   3 * xmax + d, d, T)

    @classmethod
    def from_linear(cls, drift: LinearDrift) -> "NonlinearDrift":
        """``f = a(t) x``; the remainder vanishes."""
        return cls(lambda t, x: drift(t) * x,
                   lambda t, x: np.full_like(np.asarray(x, dtype=float), float(drift(t))),
                   0.0, 1.0, drift.T)


def _cubic_root_bound(amp: float) -> float:
    # most negative root of x - x^3 + c over c in [-|amp|, |amp|]
    roots = np.roots([-1.0, 0.0, 1.0, -abs(amp)])
    return float(np.max(np.abs(roots.real[np.abs(roots.imag) < 1e-12])))


Drift = Union[LinearDrift, NonlinearDrift]


@dataclass(frozen=True)
class EquilibriumBranch:
    t: np.ndarray
    x_star: np.ndarray
    a_star: np.ndarray

    @property
    def a0(self) -> float:
        return float(-np.max(self.a_star))


def find_equilibrium_branch(drift: NonlinearDrift, grid: TimeGrid, x0_guess: float,
                            newton_tol: float = 1e-12, max_iter: int = 50) -> EquilibriumBranch:
    """Continue a root of ``f(t, .)`` along the grid, each node seeded by the previous root."""
    t = grid.nodes
    xs = np.empty_like(t)
    x = float(x0_guess)
    for i, ti in enumerate(t):
        for _ in range(max_iter):
            fx = float(drift.f(ti, x))
            if abs(fx) < newton_tol:
                break
            x -= fx / float(drift.df_dx(ti, x))
        else:
            if abs(float(drift.f(ti, x))) >= newton_tol:
                raise NewtonError(f"Newton did not converge in {max_iter} iterations at t={ti:.6g}")
        xs[i] = x
    a_star = np.asarray(drift.df_dx(t, xs), dtype=float) * np.ones_like(t)
    bad = np.nonzero(a_star >= 0)[0]
    if bad.size:
        raise StabilityError(f"branch is not stable: a*(t)={a_star[bad[0]]:.4g} >= 0 "
                             f"at t={t[bad[0]]:.6g}")
    return EquilibriumBranch(t, xs, a_star)


@dataclass(frozen=True)
class SlowSolution:
    t: np.ndarray
    x_bar: np.ndarray
    a_bar: np.ndarray
    eps: float
    x_star: Optional[np.ndarray] = None

    @property
    def a_bar0(self) -> float:
        """``min_t |a_bar(t)|``."""
        return float(-np.max(self.a_bar))

    @property
    def max_deviation(self) -> float:
        """``max_t |x_bar - x*|``."""
        if self.x_star is None:
            return 0.0
        return float(np.max(np.abs(self.x_bar - self.x_star)))


def slow_solution(drift: NonlinearDrift, branch: EquilibriumBranch, eps: float,
                  rtol: float = 1e-10, atol: float = 1e-12) -> SlowSolution:
    """Solve ``eps x' = f(t, x)``, ``x(0) = x*(0)``, with the L-stable Radau method."""
    if not eps > 0:
        raise ValidationError("eps must be positive")
    t = branch.t
    sol = solve_ivp(lambda s, x: drift.f(s, x) / eps, (t[0], t[-1]), [branch.x_star[0]],
                    method="Radau", t_eval=t, rtol=rtol, atol=atol,
                    jac=lambda s, x: np.atleast_2d(drift.df_dx(s, x) / eps))
    if not sol.success:
        raise LeftBasinError(f"slow solution integration failed: {sol.message}")
    x_bar = sol.y[0]
    dev = np.abs(x_bar - branch.x_star)
    if np.any(dev > drift.d):
        i = int(np.argmax(dev > drift.d))
        raise LeftBasinError(f"slow solution left the d={drift.d} neighbourhood at t={t[i]:.6g}")
    a_bar = np.asarray(drift.df_dx(t, x_bar), dtype=float) * np.ones_like(t)
    if np.any(a_bar >= 0):
        raise StabilityError("linearisation along the slow solution is not negative")
    return SlowSolution(t, x_bar, a_bar, eps, branch.x_star)


def linear_slow_solution(drift: LinearDrift, grid: TimeGrid, eps: float) -> SlowSolution:
    """For ``f = a(t) x`` the slow solution is identically 0 and ``a_bar = a``."""
    t = grid.nodes
    return SlowSolution(t, np.zeros_like(t), drift(t) * np.ones_like(t), eps, np.zeros_like(t))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    noise: FbmPath
    scheme: str


def _linear_factors(drift: LinearDrift, t: np.ndarray, eps: float):
    return linear_step_factors(drift.alpha(t[1:], t[:-1]) / eps)


def integrate_sde(drift: Drift, eps: float, sigma: float, H, noise: FbmPath, x0: float,
                  guard: float = BLOWUP_GUARD) -> Trajectory:
    """One path of ``dx = f/eps dt + sigma/eps^H dW^H`` by exponential Euler.

    A :class:`LinearDrift` uses the exact propagator ``exp(alpha(t_{n+1}, t_n)/eps)``;
    a :class:`NonlinearDrift` is linearised at the current state every step.
    """
    H = hurst_value(H)
    if noise.H != H:
        raise ValidationError(f"noise has H={noise.H}, expected {H}")
    t = noise.grid.nodes
    scale = sigma / eps ** H
    if isinstance(drift, LinearDrift):
        E, w = _linear_factors(drift, t, eps)
        x = integrate_linear(E, w, scale, noise.increments, x0, guard)
        return Trajectory(t, x, noise, "exponential-euler-linear")
    x = integrate_nonlinear(drift.f, drift.df_dx, t, eps, scale, noise.increments,
                            np.float64(x0), guard)
    return Trajectory(t, x, noise, "exponential-euler-linearised")


@dataclass(frozen=True)
class ExitRecord:
    exited: bool
    tau: Optional[float]
    sup_scaled_deviation: float


def scaled_deviation(states: np.ndarray, slow: SlowSolution, H) -> np.ndarray:
    """``|x - x_bar(t)| |a_bar(t)|^H`` (broadcast over leading axes)."""
    H = hurst_value(H)
    return np.abs(states - slow.x_bar) * np.abs(slow.a_bar) ** H


def exit_time(traj: Trajectory, slow: SlowSolution, H, h: float) -> ExitRecord:
    """First grid node where the scaled deviation reaches ``h``.

    ``h = 0`` counts as an immediate exit at ``t = 0``.
    """
    if traj.t.shape != slow.t.shape or not np.allclose(traj.t, slow.t):
        raise ValidationError("trajectory and slow solution grids differ")
    dev = scaled_deviation(traj.states, slow, H)
    sup = float(dev.max())
    if h <= 0:
        return ExitRecord(True, float(traj.t[0]), sup)
    hit = np.nonzero(dev >= h)[0]
    if hit.size == 0:
        return ExitRecord(False, None, sup)
    return ExitRecord(True, float(traj.t[hit[0]]), sup)


@dataclass
class SdeSetup:
    """A configuration for exit-probability experiments.

    Linear drifts start at 0 and measure the strip around 0 with ``a(t)``;
    nonlinear drifts start at ``x_bar(0)`` on the branch found from ``x_guess``.
    """

    drift: Drift
    H: float
    eps: float
    sigma: float
    N: int
    x_guess: float = -1.0
    guard: float = BLOWUP_GUARD
    _slow: Optional[SlowSolution] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.H = hurst_value(self.H)
        if not self.eps > 0 or not self.sigma >= 0:
            raise ValidationError("need eps > 0 and sigma >= 0")

    @property
    def T(self) -> float:
        return self.drift.T

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    @property
    def linear(self) -> bool:
        return isinstance(self.drift, LinearDrift)

    def slow(self) -> SlowSolution:
        if self._slow is None:
            if self.linear:
                self._slow = linear_slow_solution(self.drift, self.grid, self.eps)
            else:
                branch = find_equilibrium_branch(self.drift, self.grid, self.x_guess)
                self._slow = slow_solution(self.drift, branch, self.eps)
        return self._slow

    def simulate(self, W: np.ndarray) -> np.ndarray:
        """States for a batch of fBm rows ``W`` (shape ``(n, N+1)``)."""
        t = self.grid.nodes
        dW = np.diff(W, axis=1)
        scale = self.sigma / self.eps ** self.H
        if self.linear:
            E, w = _linear_factors(self.drift, t, self.eps)
            return integrate_linear(E, w, scale, dW, 0.0, self.guard)
        x0 = np.full(W.shape[0], self.slow().x_bar[0])
        return integrate_nonlinear(self.drift.f, self.drift.df_dx, t, self.eps, scale, dW,
                                   x0, self.guard)


def sup_deviations(setup: SdeSetup, replicas: int, seed: int, threads: int = 1,
                   method: str = "circulant") -> np.ndarray:
    """Grid supremum of the scaled deviation for replicas ``0..replicas-1``.

    Replica ``r`` is driven by ``derive_seed(seed, r)``, so every threshold is
    evaluated on the same paths.
    """
    slow = setup.slow()
    weight = np.abs(slow.a_bar) ** setup.H

    def run(a, b):
        W = sample_fbm_matrix(setup.H, setup.grid, [derive_seed(seed, r) for r in range(a, b)],
                              method)
        x = setup.simulate(W)
        return np.max(np.abs(x - slow.x_bar) * weight, axis=-1)

    return np.concatenate(map_chunks(run, replicas, threads=threads))


def exit_probability(setup: SdeSetup, h, replicas: int, seed: int, level: float = 0.95,
                     threads: int = 1, sups: Optional[np.ndarray] = None):
    """Fraction of replicas leaving the strip of half-width ``h`` before ``T``, Wilson CI.

    ``h`` may be a sequence; all thresholds share the same paths.  Precomputed
    ``sups`` from :func:`sup_deviations` may be passed in.
    """
    if replicas < 1000:
        raise ValidationError("exit_probability needs at least 1000 replicas")
    if sups is None:
        sups = sup_deviations(setup, replicas, seed, threads)
    hs = np.atleast_1d(np.asarray(h, dtype=float))
    out = [proportion_estimate(int(np.count_nonzero(sups >= hi)) if hi > 0 else replicas,
                               replicas, level, seed) for hi in hs]
    return out if np.ndim(h) else out[0]
