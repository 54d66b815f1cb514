"""Variance of the linearised fast deviation against its two upper bounds.

The fast deviation of ``eps dx = a(t) x dt + sigma dW^H`` has variance
``v(t)``.  Two deterministic quantities sit above it: a single-integral
bound and its small-eps expansion.  This script prints, for one (H, eps),
the Monte Carlo estimate, the exact double integral and both bounds, so the
ordering can be read off row by row.

    python demos/variance_chain.py [H] [eps]
"""

import sys

import numpy as np

from fracstrip import LinearDrift
from fracstrip.variance import (calibrate_r1, mc_variance, variance_asymptotic,
                                variance_bound_quadrature, variance_exact_double_integral)


def main(H=0.3, eps=0.02):
    drift = LinearDrift.sinusoidal(1.0, 0.1, 1.0)
    times = np.linspace(0.1, 1.0, 10)
    r1 = calibrate_r1(drift, H, [eps / 2, eps, 2 * eps], times)
    mc = mc_variance(drift, H, 1.0, eps, times, 4000, seed=3)
    print(f"H={H} eps={eps} r1={r1:.3f}")
    print(f"{'t':>5} {'MC':>9} {'exact':>9} {'integral':>9} {'asympt':>9}")
    for t, e in zip(times, mc):
        exact = variance_exact_double_integral(drift, H, 1.0, eps, t)
        l31 = variance_bound_quadrature(drift, H, 1.0, eps, t)
        l32 = variance_asymptotic(drift, H, 1.0, eps, t, r1)
        print(f"{t:5.2f} {e.value:9.4f} {exact:9.4f} {l31:9.4f} {l32:9.4f}")
    # exact sits at half the bounds: the stationary variance is H Gamma(2H) / |a|^(2H)


if __name__ == "__main__":
    main(*map(float, sys.argv[1:3]))
