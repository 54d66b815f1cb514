"""Concentration bounds for the linear and nonlinear slow-fast SDE and SPDE.

Every bound has the form ``C * exp(-rate)`` and is returned as a
:class:`BoundReport` holding both factors, the raw value and the value clipped
at 1.  Constants that are only known to exist (``K0``, ``r1``, ``r2``) are
configuration, see :class:`BoundParams`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import DivergentSumError, HTooLargeError, InsufficientReplicasError, \
    InvalidBoundError, ValidationError
from .fbm import hurst_value

TWO_PI_SQ = (2 * math.pi) ** 2


@dataclass(frozen=True)
class BoundParams:
    """Configurable constants of the bounds.

    ``eta=None`` selects ``2H - s - 1/2`` at each call; ``nu=None`` lets the
    nonlinear SPDE bound derive ``nu = 1 - (q-r)/2`` from its ``(q, r)``.
    """

    K0: float = 1.0
    r1: float = 0.0
    r2: float = 0.0
    eta: Optional[float] = None
    c_mode: float = TWO_PI_SQ
    nu: Optional[float] = None
    clip: bool = True

    def __post_init__(self):
        for name in ("K0", "c_mode"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("r1", "r2"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("eta", "nu"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class BoundReport:
    """``raw = prefactor * exp(-exponent_rate)``; ``bound_value`` is clipped at 1."""

    prefactor: float
    exponent_rate: float
    raw: float
    bound_value: float
    clipped: bool
    inputs: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def log_raw(self) -> float:
        if self.prefactor == 0:
            return -math.inf
        return math.log(self.prefactor) - self.exponent_rate


def _report(prefactor: float, rate: float, params: BoundParams, inputs: dict,
            notes: Sequence[str] = ()) -> BoundReport:
    raw = prefactor * math.exp(-rate) if prefactor > 0 else 0.0
    clipped = params.clip and raw > 1.0
    return BoundReport(prefactor, rate, raw, min(1.0, raw) if params.clip else raw, clipped,
                       inputs, tuple(notes))


def _trivial(params: BoundParams, inputs: dict) -> BoundReport:
    # P(sup >= 0) = 1: nothing to estimate
    return BoundReport(math.inf, 0.0, math.inf, 1.0 if params.clip else math.inf, params.clip,
                       inputs, ("h=0: trivial bound",))


def gaussian_sup_tail(K0: float, gamma: float, G: float, T: float, c: float,
                      var_sup: float) -> float:
    """``G^{-1/gamma} K0 T c^{2/gamma} exp(-c^2 / (2 var_sup))``."""
    if not 0 < gamma <= 2:
        raise ValidationError(f"gamma must lie in (0, 2], got {gamma}")
    for name, v in (("K0", K0), ("G", G), ("T", T), ("c", c), ("var_sup", var_sup)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")
    return G ** (-1 / gamma) * K0 * T * c ** (2 / gamma) * math.exp(-c * c / (2 * var_sup))


def kappa(eps: float, H, r2: float = 0.0) -> float:
    """Exponent factor ``(1 - r2 eps) / (2H Gamma(2H))``."""
    H = hurst_value(H)
    if r2 * eps >= 1:
        raise InvalidBoundError(
            f"r2*eps = {r2 * eps:g} >= 1 makes the exponent non-positive")
    return (1 - r2 * eps) / (2 * H * special.gamma(2 * H))


def prefactor_sde(T: float, h_over_sigma: float, a0: float, H, K0: float) -> float:
    """``2 K0 T^2 / a0 * (h/sigma)^{1/H}``."""
    H = hurst_value(H)
    return 2 * K0 * T * T / a0 * h_over_sigma ** (1 / H)


def _positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")


def sde_bound(T, h, sigma, a0, eps, H, params: BoundParams = BoundParams()) -> BoundReport:
    """Bound on ``P(sup_t |x_t| |a(t)|^H >= h)`` for the linear SDE started at 0."""
    H = hurst_value(H)
    _positive(T=T, sigma=sigma, a0=a0, eps=eps)
    inputs = dict(T=T, h=h, sigma=sigma, a0=a0, eps=eps, H=H, K0=params.K0, r2=params.r2)
    k = kappa(eps, H, params.r2)
    if h <= 0:
        return _trivial(params, inputs)
    return _report(prefactor_sde(T, h / sigma, a0, H, params.K0), k * h * h / (2 * sigma ** 2),
                   params, inputs)


def nonlinear_split(h: float, M: float, a0_bar: float, H) -> tuple[float, float]:
    """``(h0, h1)`` with ``h1 = M h^2 / a0_bar^{1+H}`` and ``h0 = h - h1``."""
    H = hurst_value(H)
    h1 = M * h * h / a0_bar ** (1 + H)
    return h - h1, h1


def sde_bound_nonlinear(T, h, sigma, a0_bar, eps, H, M: float,
                        params: BoundParams = BoundParams()) -> BoundReport:
    """Bound on the first exit from the strip around the slow solution.

    The linear bound evaluated at ``h0 = h - h1``, ``h1 = M h^2 / a0_bar^{1+H}``
    being the largest excursion the quadratic remainder can produce inside the strip.
    """
    H = hurst_value(H)
    if M < 0:
        raise ValidationError("M must be non-negative")
    h0, h1 = nonlinear_split(h, M, a0_bar, H)
    if h > 0 and h1 >= h:
        raise HTooLargeError(f"h={h} too large: remainder share h1={h1:.4g} >= h")
    base = sde_bound(T, h0, sigma, a0_bar, eps, H, params)
    inputs = dict(base.inputs, h=h, h0=h0, h1=h1, M=M, a0_bar=a0_bar)
    return BoundReport(base.prefactor, base.exponent_rate, base.raw, base.bound_value,
                       base.clipped, inputs, base.notes)


# --- mode allocation -------------------------------------------------------

def default_eta(H, s: float) -> float:
    return 2 * hurst_value(H) - s - 0.5


def _check_s(H: float, s: float):
    if not 0 < s < 2 * H - 0.5:
        raise ValidationError(f"s={s} outside (0, 2H-1/2) = (0, {2 * H - 0.5:g})")


@dataclass(frozen=True)
class ModeSum:
    """``sum_k <k>^{-p}`` split into the explicit part ``|k| <= K`` and the tail."""

    p: float
    K: int
    partial: float
    tail: float
    error: float

    @property
    def total(self) -> float:
        return self.partial + self.tail


def _tail_integral(p: float, X: float) -> float:
    # int_X^inf (1+x^2)^{-p/2} dx through the incomplete beta function
    a = 0.5 * (p - 1)
    return 0.5 * special.beta(a, 0.5) * special.betainc(a, 0.5, 1 / (1 + X * X))


def bracket_sum(p: float, tail_tol: float = 1e-12, K: Optional[int] = None) -> ModeSum:
    """``sum_{k in Z} (1+k^2)^{-p/2}`` for ``p > 1``.

    Explicit terms up to ``K`` plus an Euler-Maclaurin tail: the integral from
    ``K`` minus the half endpoint term and the first derivative correction.
    With ``K=None`` it is chosen so the next correction is below ``tail_tol``
    relative.
    """
    if not p > 1:
        raise DivergentSumError(f"sum of <k>^(-p) diverges for p={p:g} <= 1")

    def f(x):
        return (1 + x * x) ** (-p / 2)

    def f3(x):
        # leading behaviour of the third derivative, used as the error scale
        return p * (p + 2) * (p + 4) * x ** (-p - 3)

    if K is None:
        K = 16
        while 2 * f3(K) / 720 > 0.1 * tail_tol and K < 1 << 24:
            K *= 2
    k = np.arange(1, K + 1, dtype=float)
    partial = 1 + 2 * math.fsum(f(k))
    fp = -p * K * (1 + K * K) ** (-p / 2 - 1)
    tail = 2 * (_tail_integral(p, K) - 0.5 * f(K) - fp / 12)
    return ModeSum(p, int(K), partial, tail, 2 * f3(K) / 720)


def q_of_s(H, s: float, eta: Optional[float] = None, tail_tol: float = 1e-12) -> float:
    """``Q(s) = (sum_k <k>^{-(4H - 2s - eta)})^{-1}``; ``eta`` defaults to ``2H - s - 1/2``."""
    H = hurst_value(H)
    _check_s(H, s)
    eta = default_eta(H, s) if eta is None else eta
    if not eta > 0:
        raise ValidationError(f"eta must be positive, got {eta}")
    return 1.0 / bracket_sum(4 * H - 2 * s - eta, tail_tol).total


@dataclass(frozen=True)
class Allocation:
    """Thresholds ``h_k`` for ``k = -K..K`` with ``sum h_k^2 = h^2 - deficit``."""

    ks: np.ndarray
    hk: np.ndarray
    Q: float
    deficit: float

    @property
    def total(self) -> float:
        return float(np.sum(self.hk ** 2))


def allocate_hk(h: float, s: float, H, eta: Optional[float] = None, K: int = 64,
                tail_tol: float = 1e-12) -> Allocation:
    """``h_k^2 = Q(s) h^2 <k>^{-(4H-2s-eta)}`` for ``|k| <= K``; the deficit is the tail share."""
    H = hurst_value(H)
    Q = q_of_s(H, s, eta, tail_tol)
    eta = default_eta(H, s) if eta is None else eta
    p = 4 * H - 2 * s - eta
    ks = np.arange(-K, K + 1)
    hk = np.sqrt(Q * h * h * (1.0 + ks * ks) ** (-p / 2))
    tail = 1.0 / Q - bracket_sum(p, tail_tol, K=K).partial
    return Allocation(ks, hk, Q, Q * h * h * tail)


def empirical_c0(H, s_values: Sequence[float], eta: Optional[float] = None) -> float:
    """``min_s Q(s) / (2H - 1/2 - s)`` over the scan."""
    H = hurst_value(H)
    return min(q_of_s(H, s, eta) / (2 * H - 0.5 - s) for s in s_values)


def spde_bound(T, h, sigma, s, a0, eps, H, params: BoundParams = BoundParams()) -> BoundReport:
    """Bound on ``P(sup_t ||phi(t)||_{s,t} >= h)`` for the linear SPDE started at 0.

    ``C exp(-kappa Q h^2/(2 sigma^2))`` with ``C = 2 K0 T^2 a0^2 (Q^{1/2} h/sigma)^{1/H}``;
    the vanishing correction from the modes ``k != 0`` is set to 1.
    """
    H = hurst_value(H)
    _positive(T=T, sigma=sigma, a0=a0, eps=eps)
    _check_s(H, s)
    Q = q_of_s(H, s, params.eta)
    k = kappa(eps, H, params.r2)
    inputs = dict(T=T, h=h, sigma=sigma, s=s, a0=a0, eps=eps, H=H, Q=Q, K0=params.K0,
                  r2=params.r2)
    if h <= 0:
        return _trivial(params, inputs)
    pref = 2 * params.K0 * T * T * a0 * a0 * (math.sqrt(Q) * h / sigma) ** (1 / H)
    return _report(pref, k * Q * h * h / (2 * sigma ** 2), params, inputs,
                   ("correction factor for modes k != 0 omitted",))


def spde_bound_nonlinear(T, h, sigma, s, eps, H, M: float, cprime: float, q: float, r: float,
                         params: BoundParams = BoundParams(), *, a0: float) -> BoundReport:
    """Nonlinear SPDE strip bound: :func:`spde_bound` at ``h0 = h - h1``,
    ``h1 = cprime eps^{(q-r)/2 - 1} M h^2``.
    """
    H = hurst_value(H)
    if not 0 < r < 2 * H - 0.5:
        raise ValidationError(f"r={r} outside (0, 2H-1/2)")
    if not q < r + 2:
        raise ValidationError(f"need q < r + 2, got q={q}, r={r}")
    if M < 0 or cprime <= 0:
        raise ValidationError("need M >= 0 and cprime > 0")
    nu = 1 - (q - r) / 2
    h1 = cprime * eps ** ((q - r) / 2 - 1) * M * h * h
    if h > 0 and h1 >= h:
        raise HTooLargeError(f"h={h} too large: remainder share h1={h1:.4g} >= h")
    base = spde_bound(T, h - h1, sigma, s, a0, eps, H, params)
    inputs = dict(base.inputs, h=h, h0=h - h1, h1=h1, nu=nu, M=M, cprime=cprime, q=q, r=r)
    return BoundReport(base.prefactor, base.exponent_rate, base.raw, base.bound_value,
                       base.clipped, inputs, base.notes)


# --- heat-semigroup smoothing constants ------------------------------------

def schauder_constant(q: float, r: float, t_max: float = 1.0) -> float:
    """``sup ||e^{t Delta} f||_{H^q} t^{(q-r)/2} / ||f||_{H^r}`` over ``t in (0, t_max]``.

    The supremum over fields is attained on single modes; for ``k >= 1`` the
    mode ratio ``<k>^{q-r} t^b e^{-(2 pi k)^2 t}`` (``b = (q-r)/2``) peaks at
    ``t = b/(2 pi k)^2`` and its maximum decreases in ``k``.  The constant mode
    contributes ``t_max^b``.
    """
    if not r <= q < r + 2:
        raise ValidationError(f"need r <= q < r + 2, got q={q}, r={r}")
    b = 0.5 * (q - r)
    if b == 0:
        return 1.0
    if b / TWO_PI_SQ <= t_max:
        k1 = (2 * b / (TWO_PI_SQ * math.e)) ** b
    else:
        # short window: peaks of low modes lie beyond t_max
        k = np.arange(1, 100001, dtype=float)
        t = np.minimum(b / (TWO_PI_SQ * k * k), t_max)
        k1 = float(np.max((1 + k * k) ** b * t ** b * np.exp(-TWO_PI_SQ * k * k * t)))
    return max(t_max ** b, k1)


def psi1_constant(q: float, r: float, T: float, t_max: float = 1.0) -> float:
    """``c'(q, r) = c(q, r) int_0^T (T-s)^{-(q-r)/2} ds``, evaluated at the horizon."""
    b = 0.5 * (q - r)
    return schauder_constant(q, r, t_max) * T ** (1 - b) / (1 - b)


# --- calibration of K0 -----------------------------------------------------

def smallest_dominating_k0(unit_bounds: Sequence[float], p_hat: Sequence[float],
                           ci: Optional[Sequence[tuple[float, float]]] = None,
                           ratio: float = 2 ** 0.25) -> float:
    """Smallest ``K0 = ratio^j`` (integer ``j``) with ``K0 * unit_bounds >= p_hat`` everywhere.

    ``unit_bounds`` are the bound values at ``K0 = 1`` (bounds are linear in
    ``K0``).  When confidence intervals are given and each of them contains
    the calibrated bound, the data cannot pin ``K0`` down and
    :class:`InsufficientReplicasError` is raised; the same happens when no
    threshold saw an exceedance.
    """
    b = np.asarray(unit_bounds, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if b.shape != p.shape or b.size == 0:
        raise ValidationError("unit_bounds and p_hat must be equally long and non-empty")
    if np.any(b <= 0):
        raise ValidationError("unit bounds must be positive")
    if not np.any(p > 0):
        raise InsufficientReplicasError("no exceedances observed at any threshold")
    need = float(np.max(p / b))
    j = math.ceil(math.log(need) / math.log(ratio) - 1e-9)
    while ratio ** j * b.min() > 0 and np.any(ratio ** j * b < p):
        j += 1
    K0 = ratio ** j
    if ci is not None:
        lo = np.array([c[0] for c in ci])
        hi = np.array([c[1] for c in ci])
        if np.all((lo <= K0 * b) & (K0 * b <= hi)):
            raise InsufficientReplicasError(
                "every confidence interval contains the calibrated bound; increase replicas")
    return K0
