"""Closed-form radiation solutions used to validate the solver.

Same conventions as the solver: exp(-i w t), outgoing exp(i k r), dp/dn =
i w rho v_n with v_n the outward normal velocity.
"""

from __future__ import annotations

import numpy as np
from scipy.special import eval_legendre, spherical_jn, spherical_yn


def pulsating_sphere(radius: float, k: float, r, v: float = 1.0, rho: float = 1.2, c: float = 343.0):
    """Pressure of a uniformly pulsating sphere at distance(s) ``r`` >= radius (meters)."""
    ka = k * radius
    r = np.asarray(r, dtype=float)
    surface = rho * c * v * (1j * ka) / (1j * ka - 1.0)
    return surface * (radius / r) * np.exp(1j * k * (r - radius))


def _hankel1(n, x):
    return spherical_jn(n, x) + 1j * spherical_yn(n, x)


def _hankel1_prime(n, x):
    return spherical_jn(n, x, derivative=True) + 1j * spherical_yn(n, x, derivative=True)


def cap_velocity_coefficients(half_angle: float, n_terms: int, v: float = 1.0) -> np.ndarray:
    """Legendre coefficients V_n of v on the cap theta < half_angle, 0 elsewhere."""
    x0 = np.cos(half_angle)
    n = np.arange(n_terms)
    coef = np.empty(n_terms)
    coef[0] = 0.5 * (1.0 - x0)
    # int_{x0}^{1} P_n = (P_{n-1}(x0) - P_{n+1}(x0)) / (2n + 1)
    coef[1:] = 0.5 * (eval_legendre(n[1:] - 1, x0) - eval_legendre(n[1:] + 1, x0))
    return v * coef


def vibrating_cap(
    radius: float,
    k: float,
    half_angle: float,
    r,
    cos_theta,
    v: float = 1.0,
    rho: float = 1.2,
    c: float = 343.0,
    n_terms: int = 60,
):
    """Pressure radiated by a cap (polar half-angle ``half_angle``, centered on
    +z) vibrating radially on an otherwise rigid sphere.

    Returns ``(pressure, tail_bound)``; the bound is the magnitude of the last
    retained term, which dominates the truncation error once n >> k r.
    """
    r = np.asarray(r, dtype=float)
    mu = np.asarray(cos_theta, dtype=float)
    ka = k * radius
    coef = cap_velocity_coefficients(half_angle, n_terms, v)
    omega = k * c
    p = np.zeros(np.broadcast(r, mu).shape, dtype=complex)
    last = np.zeros_like(p, dtype=float)
    for n in range(n_terms):
        amp = 1j * omega * rho * coef[n] / (k * _hankel1_prime(n, ka))
        term = amp * _hankel1(n, k * r) * eval_legendre(n, mu)
        p = p + term
        last = np.abs(term)
    return p, last
