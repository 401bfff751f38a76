"""Gamma function and the Beta-type integral used for the genus-g closed forms."""

import cmath
import math

from scipy import integrate

# Lanczos coefficients for g = 7, n = 9 (Godfrey); ~15 significant digits.
_LANCZOS_G = 7
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def lanczos_gamma(x):
    """Gamma function via the Lanczos approximation (real or complex ``x``)."""
    cplx = isinstance(x, complex)
    if (x.real if cplx else x) < 0.5:
        m = cmath if cplx else math
        return m.pi / (m.sin(m.pi * x) * lanczos_gamma(1 - x))
    x = x - 1
    acc = _LANCZOS[0]
    for i in range(1, _LANCZOS_G + 2):
        acc += _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    if cplx:
        return cmath.sqrt(2 * cmath.pi) * t ** (x + 0.5) * cmath.exp(-t) * acc
    return math.sqrt(2 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def beta_closed_form(r, s, n):
    """``Gamma(r/n) Gamma(s) / (n Gamma(r/n + s))``."""
    return lanczos_gamma(r / n) * lanczos_gamma(s) / (n * lanczos_gamma(r / n + s))


def beta_quadrature(r, s, n):
    """``int_0^1 z^(r-1) (1 - z^n)^(s-1) dz`` by adaptive quadrature.

    The endpoint singularities are handed to QUADPACK's algebraic weight;
    the remaining factor ``(1 + z + ... + z^(n-1))^(s-1)`` is smooth.
    """
    def smooth(z):
        return sum(z ** k for k in range(n)) ** (s - 1)

    val, _ = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(r - 1, s - 1), epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def gamma_identity_check(r, s, n):
    """Absolute mismatch between quadrature and the Gamma expression."""
    if r <= 0 or s <= 0 or n <= 0:
        raise ValueError("r, s and n must be positive")
    return abs(beta_quadrature(r, s, n) - beta_closed_form(r, s, n))


def genus_closed_form_product(n, c):
    """Closed form of ``I0*I2 + I1^2`` for the genus-n/2 potential."""
    return -8 * math.pi * c ** 2 * (2 * n - 1) / math.tan(math.pi / (2 * n)) / ((n - 1) * (3 * n - 1) * (5 * n - 1))
