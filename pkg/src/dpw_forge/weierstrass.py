"""Weierstrass p-function of the square lattice.

The lattice is generated by ``2*omega1`` and ``2*i*omega1``.  With the
default ``omega1`` the invariants are ``g2 = 4, g3 = 0``, i.e.
``(p')^2 = 4 p (p^2 - 1)``; other half-periods are handled by scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import PoleError

_SERIES_TERMS = 40
_SERIES_RADIUS = 0.9  # in units of the normalized lattice, half-period ~1.311


@lru_cache(maxsize=None)
def torus_half_period() -> float:
    """``omega1 = int_1^inf dt / sqrt(4 t^3 - 4 t)``."""
    # t = 1 + tan(x)^2 maps the integral onto a smooth one over [0, pi/2]
    val, _ = integrate.quad(lambda x: 1.0 / math.sqrt(1.0 + math.cos(x) ** 2), 0.0, math.pi / 2, epsabs=1e-15, epsrel=1e-13)
    return val


def agm(a: float, b: float) -> float:
    for _ in range(60):
        a, b = 0.5 * (a + b), math.sqrt(a * b)
        if abs(a - b) < 1e-16 * a:
            break
    return a


def half_period_agm() -> float:
    """Same half-period from the AGM identity (roots 1, 0, -1)."""
    return math.pi / (2.0 * agm(math.sqrt(2.0), 1.0))


@lru_cache(maxsize=None)
def _laurent_coefficients(g2: float, g3: float, terms: int = _SERIES_TERMS):
    c = [0.0] * (terms + 2)
    c[2] = g2 / 20.0
    c[3] = g3 / 28.0
    for k in range(4, terms + 2):
        c[k] = 3.0 / ((2 * k + 1) * (k - 3)) * sum(c[m] * c[k - m] for m in range(2, k - 1))
    return tuple(c)


@dataclass(frozen=True)
class TorusData:
    omega1: float = field(default_factory=torus_half_period)

    def __post_init__(self):
        if not self.omega1 > 0:
            raise ValueError("omega1 must be positive")

    @property
    def omega2(self) -> complex:
        return 1j * self.omega1

    @property
    def omega3(self) -> complex:
        return self.omega1 + self.omega2

    @property
    def punctures(self):
        return (self.omega3 / 2, -self.omega3 / 2)

    @property
    def scale(self) -> float:
        """Ratio of the normalized half-period to ``omega1``."""
        return torus_half_period() / self.omega1

    @property
    def g2(self) -> float:
        return 4.0 * self.scale ** 4

    def reduce(self, z):
        """Representative of ``z`` in the period cell centred at 0."""
        z = np.asarray(z, dtype=complex)
        p = 2.0 * self.omega1
        return z - p * np.round(z.real / p) - 1j * p * np.round(z.imag / p)


def _p_and_dp_normalized(z: np.ndarray):
    """p and p' for g2=4, g3=0 on points of the centred cell (nonzero)."""
    c = _laurent_coefficients(4.0, 0.0)
    halvings = np.zeros(z.shape, dtype=int)
    a = np.abs(z)
    with np.errstate(divide="ignore"):
        need = np.where(a > _SERIES_RADIUS, np.ceil(np.log2(a / _SERIES_RADIUS)), 0).astype(int)
    halvings = np.maximum(halvings, need)
    u = z / 2.0 ** halvings
    u2 = u * u
    p = 1.0 / u2
    dp = -2.0 / (u2 * u)
    upow = np.ones_like(u)  # u^(2k-4)
    for k in range(2, len(c)):
        if c[k] != 0.0:
            p = p + c[k] * upow * u2
            dp = dp + c[k] * (2 * k - 2) * upow * u
        upow = upow * u2
    for _ in range(int(halvings.max(initial=0))):
        mask = halvings > 0
        pp, dd = p[mask], dp[mask]
        ddp = 6.0 * pp * pp - 2.0
        slope = ddp / dd
        p2 = 0.25 * slope * slope - 2.0 * pp
        dp2 = -dd - slope * (p2 - pp)
        p[mask], dp[mask] = p2, dp2
        halvings = halvings - mask
    return p, dp


def weierstrass_p(z, torus: TorusData | None = None, order: int = 0, pole_tol: float | None = None):
    """``p``, ``p'``, ``p''``, ``p'''`` or ``p''''`` at ``z`` (array friendly).

    Evaluation reduces ``z`` into the centred period cell, halves the
    argument into the disc where the Laurent series converges fast and
    doubles back with the duplication formula.
    """
    if torus is None:
        torus = TorusData()
    if order not in range(5):
        raise ValueError("order must be 0..4")
    scalar = np.ndim(z) == 0
    zr = np.atleast_1d(torus.reduce(z))
    tol = 1e-6 * torus.omega1 if pole_tol is None else pole_tol
    if np.any(np.abs(zr) < tol):
        bad = np.atleast_1d(np.asarray(z, dtype=complex))[np.abs(zr) < tol][0]
        raise PoleError(f"z={bad:.6g} is within {tol:.1e} of a lattice point")
    s = torus.scale
    p, dp = _p_and_dp_normalized(zr * s)
    p = p * s ** 2
    dp = dp * s ** 3
    g2 = torus.g2
    if order == 0:
        out = p
    elif order == 1:
        out = dp
    elif order == 2:
        out = 6.0 * p * p - g2 / 2.0
    elif order == 3:
        out = 12.0 * p * dp
    else:
        out = 120.0 * p ** 3 - 18.0 * g2 * p
    return complex(out[0]) if scalar else out


def weierstrass_p_lattice_sum(z, torus: TorusData | None = None, R: int = 200) -> complex:
    """Slow symmetric lattice-sum evaluation of p; accurate to O(1/R^2)."""
    if torus is None:
        torus = TorusData()
    z = complex(z)
    m = np.arange(-R, R + 1)
    w = 2 * torus.omega1 * (m[:, None] + 1j * m[None, :])
    w = w.ravel()
    w = w[w != 0]
    return complex(1 / z ** 2 + np.sum(1 / (z - w) ** 2 - 1 / w ** 2))


def curly_i(z, torus: TorusData | None = None):
    """``p'''(z + omega3/2) + p'''(z - omega3/2)``: antiderivative of the torus lower-left entry."""
    if torus is None:
        torus = TorusData()
    h = torus.omega3 / 2
    z = np.asarray(z, dtype=complex)
    return weierstrass_p(z + h, torus, 3) + weierstrass_p(z - h, torus, 3)
