"""Special functions for spherical wave expansions.

Associated Legendre functions, orthonormal spherical harmonics (Condon-Shortley
phase), spherical Bessel/Hankel functions with derivatives, and Gauss-Legendre
quadrature. Everything is double precision and vectorised over the argument.

Coefficient vectors over (l, m) use the flat layout ``index = l*l + l + m``,
so a degree-``lmax`` expansion has ``(lmax + 1)**2`` entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadratureRule",
    "lm_index",
    "n_coeffs",
    "assoc_legendre",
    "legendre_table",
    "normalized_legendre_table",
    "sph_harm_all",
    "spherical_harmonic",
    "spherical_jn_table",
    "spherical_yn_table",
    "hankel_table",
    "hankel_deriv_table",
    "spherical_hankel1",
    "spherical_hankel2",
    "spherical_hankel2_deriv",
    "gauss_legendre",
    "legendre_band_integral",
]


def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def n_coeffs(lmax: int) -> int:
    return (lmax + 1) ** 2


def _check_degree_order(l: int, m: int) -> None:
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid degree/order (l={l}, m={m})")


# ---------------------------------------------------------------------------
# Legendre functions
# ---------------------------------------------------------------------------


def assoc_legendre(l: int, m: int, x):
    """Unnormalised associated Legendre function P_l^m(x), 0 <= m <= l.

    Includes the Condon-Shortley phase (-1)^m, i.e. P_1^1(x) = -sqrt(1 - x^2).
    """
    if m < 0 or m > l:
        raise ValueError(f"assoc_legendre requires 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("assoc_legendre requires |x| <= 1")
    s = np.sqrt((1.0 - x) * (1.0 + x))
    # P_m^m = (-1)^m (2m-1)!! s^m
    pmm = np.ones_like(x)
    for k in range(1, m + 1):
        pmm = -pmm * (2 * k - 1) * s
    if l == m:
        return pmm[()] if pmm.ndim == 0 else pmm
    pm1 = x * (2 * m + 1) * pmm
    for ll in range(m + 2, l + 1):
        pmm, pm1 = pm1, ((2 * ll - 1) * x * pm1 - (ll + m - 1) * pmm) / (ll - m)
    return pm1[()] if pm1.ndim == 0 else pm1


def legendre_table(lmax: int, x) -> np.ndarray:
    """Legendre polynomials P_0..P_lmax at ``x``; shape ``(lmax + 1,) + x.shape``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((lmax + 1,) + x.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = x
    for l in range(2, lmax + 1):
        out[l] = ((2 * l - 1) * x * out[l - 1] - (l - 1) * out[l - 2]) / l
    return out


def normalized_legendre_table(lmax: int, theta) -> np.ndarray:
    """Orthonormal-harmonic Legendre factors for m >= 0.

    Returns ``P[l, m, ...]`` such that ``Y_l^m(theta, phi) = P[l, m] * exp(i m phi)``.
    Entries with m > l are zero.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.cos(theta)
    s = np.sin(theta)
    out = np.zeros((lmax + 1, lmax + 1) + theta.shape)
    out[0, 0] = math.sqrt(1.0 / (4.0 * math.pi))
    for m in range(1, lmax + 1):
        out[m, m] = -math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * out[m - 1, m - 1]
    for m in range(0, lmax):
        out[m + 1, m] = math.sqrt(2.0 * m + 3.0) * x * out[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            out[l, m] = a * (x * out[l - 1, m] - b * out[l - 2, m])
    return out


def sph_harm_all(lmax: int, theta, phi) -> np.ndarray:
    """All orthonormal harmonics up to ``lmax``.

    Output shape is ``theta.shape + ((lmax + 1)**2,)`` in the flat (l, m) layout.
    """
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))
    plm = normalized_legendre_table(lmax, theta)
    out = np.empty(theta.shape + (n_coeffs(lmax),), dtype=complex)
    for m in range(0, lmax + 1):
        eimp = np.exp(1j * m * phi)
        sign = -1.0 if m % 2 else 1.0
        for l in range(m, lmax + 1):
            y = plm[l, m] * eimp
            out[..., lm_index(l, m)] = y
            if m:
                out[..., lm_index(l, -m)] = sign * np.conj(y)
    return out


def spherical_harmonic(l: int, m: int, theta, phi):
    """Orthonormal complex spherical harmonic Y_l^m(theta, phi)."""
    _check_degree_order(l, m)
    y = sph_harm_all(l, theta, phi)[..., lm_index(l, m)]
    return y[()] if y.ndim == 0 else y


# ---------------------------------------------------------------------------
# Spherical Bessel and Hankel functions
# ---------------------------------------------------------------------------


def _positive_arg(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0.0)):
        raise ValueError("spherical Bessel/Hankel functions need x > 0")
    return x


def spherical_yn_table(lmax: int, x) -> np.ndarray:
    """y_0..y_lmax by upward recurrence (y is the dominant solution, so this is stable)."""
    x = _positive_arg(x)
    out = np.empty((lmax + 1,) + x.shape)
    c, s = np.cos(x), np.sin(x)
    out[0] = -c / x
    if lmax >= 1:
        out[1] = -c / (x * x) - s / x
    for l in range(1, lmax):
        out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]
    return out


def spherical_jn_table(lmax: int, x) -> np.ndarray:
    """j_0..j_lmax by Miller's downward recurrence, normalised against j_0 or j_1.

    Upward recurrence loses all accuracy once l exceeds x, so the start degree
    is placed well into the region where j_l is the minimal solution.
    """
    x = _positive_arg(x)
    flat = x.reshape(-1)
    xmax = float(flat.max()) if flat.size else 1.0
    start = lmax + int(xmax + 16.0 * xmax ** (1.0 / 3.0)) + 32
    vals = np.zeros((lmax + 2, flat.size))
    jp1 = np.zeros_like(flat)
    j = np.full_like(flat, 1e-30)
    for l in range(start, 0, -1):
        jm1 = (2 * l + 1) / flat * j - jp1
        if l - 1 <= lmax + 1:
            vals[l - 1] = jm1
        jp1, j = j, jm1
        big = np.abs(j) > 1e200
        if np.any(big):
            jp1[big] *= 1e-200
            j[big] *= 1e-200
            vals[:, big] *= 1e-200
    true0 = np.sin(flat) / flat
    true1 = np.sin(flat) / flat**2 - np.cos(flat) / flat
    use0 = np.abs(true0) >= np.abs(true1)
    scale = np.where(use0, true0 / np.where(use0, vals[0], 1.0),
                     true1 / np.where(use0, 1.0, vals[1]))
    out = vals[: lmax + 1] * scale
    return out.reshape((lmax + 1,) + x.shape)


def hankel_table(lmax: int, x, kind: int = 2) -> np.ndarray:
    """h_l^{(kind)}(x) for l = 0..lmax; kind 2 is j - i y, kind 1 is j + i y."""
    if kind not in (1, 2):
        raise ValueError("kind must be 1 or 2")
    j = spherical_jn_table(lmax, x)
    y = spherical_yn_table(lmax, x)
    return j - 1j * y if kind == 2 else j + 1j * y


def hankel_deriv_table(lmax: int, x, kind: int = 2, table: np.ndarray | None = None) -> np.ndarray:
    """Derivatives h_l'(x) for l = 0..lmax.

    Uses h_l' = h_{l-1} - (l+1)/x h_l and h_0' = -h_1. ``table`` may carry a
    precomputed Hankel table of degree at least ``max(lmax, 1)``.
    """
    x = _positive_arg(x)
    top = max(lmax, 1)
    h = table if table is not None and table.shape[0] > top else hankel_table(top, x, kind)
    out = np.empty((lmax + 1,) + x.shape, dtype=complex)
    out[0] = -h[1]
    for l in range(1, lmax + 1):
        out[l] = h[l - 1] - (l + 1) / x * h[l]
    return out


def spherical_hankel2(l: int, x):
    """Spherical Hankel function of the second kind, h_l^{(2)} = j_l - i y_l."""
    if l < 0:
        raise ValueError("degree must be >= 0")
    v = hankel_table(l, x, 2)[l]
    return v[()] if v.ndim == 0 else v


def spherical_hankel1(l: int, x):
    """Spherical Hankel function of the first kind, h_l^{(1)} = j_l + i y_l."""
    if l < 0:
        raise ValueError("degree must be >= 0")
    v = hankel_table(l, x, 1)[l]
    return v[()] if v.ndim == 0 else v


def spherical_hankel2_deriv(l: int, x):
    """Derivative of h_l^{(2)} with respect to its argument."""
    if l < 0:
        raise ValueError("degree must be >= 0")
    v = hankel_deriv_table(l, x, 2)[l]
    return v[()] if v.ndim == 0 else v


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree <= 2*order - 1."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values) -> np.ndarray:
        """Sum ``weights * values`` along the last axis."""
        return np.asarray(values) @ self.weights


def gauss_legendre(order: int) -> QuadratureRule:
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def legendre_band_integral(l: int, a: float) -> float:
    """Closed-form integral of P_l over [a, 1]."""
    if abs(a) > 1.0:
        raise ValueError("legendre_band_integral requires |a| <= 1")
    if l < 0:
        raise ValueError("degree must be >= 0")
    if l == 0:
        return 1.0 - a
    p = legendre_table(l + 1, a)
    return float((p[l - 1] - p[l + 1]) / (2 * l + 1))
