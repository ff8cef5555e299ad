"""Shared helpers for the test suite."""

import numpy as np
from scipy import integrate, special


def finite_diff(f, x, h=1e-5):
    """Central finite differences of scalar f at array x (mutates a copy)."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        dn = f(x)
        flat[i] = orig
        gf[i] = (up - dn) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def kl_quadrature(k, lam, alpha, rate):
    """Numerical KL(Weibull || Gamma) by adaptive quadrature."""
    def q_pdf(x):
        return (k / lam) * (x / lam) ** (k - 1) * np.exp(-((x / lam) ** k))

    def log_p(x):
        return (alpha * np.log(rate) - special.gammaln(alpha)
                + (alpha - 1) * np.log(x) - rate * x)

    def integrand(x):
        q = q_pdf(x)
        if q <= 0:
            return 0.0
        return q * (np.log(q) - log_p(x))

    upper = lam * 20.0 * special.gamma(1.0 + 1.0 / k)
    if np.exp(-((upper / lam) ** k)) > 1e-12:
        # heavy tail (small k): extend until the truncated mass is negligible
        upper = lam * 35.0 ** (1.0 / k)
    val, _err = integrate.quad(integrand, 0.0, upper, limit=400)
    assert np.exp(-((upper / lam) ** k)) < 1e-12
    return val
