"""Bessel functions of order 1/3 and the two combinations used for phi.

Only the fixed fractional orders needed here are supported (1/3 and its
neighbours -2/3, 4/3, ... for recurrences and derivatives). Small arguments
use ascending series, large arguments the Hankel expansion (J, Y) or an
exponentially scaled trapezoidal rule on the integral representation (K).
"""

import math
from typing import NamedTuple

import numpy as np

__all__ = [
    "BesselEval",
    "jv",
    "yv",
    "iv",
    "kv",
    "bessel_j13",
    "bessel_y13",
    "bessel_i13",
    "bessel_k13",
    "z_left",
    "z_right",
]

NU = 1.0 / 3.0

# series/asymptotic switch for J and Y; branches agree to ~1e-11 near 12
JY_SWITCH = 12.0
# series/quadrature switch for K
K_SWITCH = 2.0
_SERIES_TERMS = 80
_HANKEL_TERMS = 30
_TRAP_STEP = 0.1


class BesselEval(NamedTuple):
    value: np.ndarray
    derivative: np.ndarray


def _arg(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0.0)):
        raise ValueError("Bessel argument must be positive")
    return x


def _flat(x):
    x = _arg(x)
    return np.atleast_1d(x).ravel(), x.shape


def _check_order(nu):
    if abs(nu - round(nu)) < 1e-12:
        raise ValueError("integer orders are not supported")


def _power_series(nu, x, sign):
    """sum_k sign^k (x/2)^(2k+nu) / (k! Gamma(k+nu+1))."""
    h = 0.5 * x
    term = np.power(h, nu) / math.gamma(nu + 1.0)
    total = term.copy()
    h2 = sign * h * h
    for k in range(1, _SERIES_TERMS):
        term = term * h2 / (k * (k + nu))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _hankel_coeffs(nu):
    mu = 4.0 * nu * nu
    a = [1.0]
    for k in range(1, _HANKEL_TERMS):
        a.append(a[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return a


def _hankel_jy(nu, x):
    a = _hankel_coeffs(nu)
    p = np.zeros_like(x)
    qs = np.zeros_like(x)
    for k, ak in enumerate(a):
        t = ak / x**k
        if k % 2 == 0:
            p += (-1) ** (k // 2) * t
        else:
            qs += (-1) ** (k // 2) * t
    w = x - (0.5 * nu + 0.25) * np.pi
    amp = np.sqrt(2.0 / (np.pi * x))
    return amp * (p * np.cos(w) - qs * np.sin(w)), amp * (p * np.sin(w) + qs * np.cos(w))


def jv(nu, x):
    """J_nu(x) for non-integer ``nu`` and ``x > 0``."""
    _check_order(nu)
    x, shape = _flat(x)
    out = np.empty_like(x)
    small = x < JY_SWITCH
    if np.any(small):
        out[small] = _power_series(nu, x[small], -1.0)
    if np.any(~small):
        out[~small] = _hankel_jy(nu, x[~small])[0]
    return out.reshape(shape)


def yv(nu, x):
    """Y_nu(x) for non-integer ``nu`` via ``(J_nu cos nu pi - J_-nu) / sin nu pi``."""
    _check_order(nu)
    x, shape = _flat(x)
    out = np.empty_like(x)
    small = x < JY_SWITCH
    if np.any(small):
        xs = x[small]
        s, c = math.sin(nu * math.pi), math.cos(nu * math.pi)
        out[small] = (_power_series(nu, xs, -1.0) * c - _power_series(-nu, xs, -1.0)) / s
    if np.any(~small):
        out[~small] = _hankel_jy(nu, x[~small])[1]
    return out.reshape(shape)


def iv(nu, x):
    """Modified Bessel I_nu(x), ascending series (intended for moderate x)."""
    _check_order(nu)
    x, shape = _flat(x)
    return _power_series(nu, x, 1.0).reshape(shape)


def _kv_scaled_trap(nu, x):
    """exp(x) K_nu(x) = int_0^inf exp(-x (cosh t - 1)) cosh(nu t) dt, trapezoid."""
    out = np.empty_like(x)
    for i, xi in enumerate(x.flat):
        tmax = math.acosh(1.0 + 45.0 / xi) + 2.0
        t = np.arange(0.0, tmax + _TRAP_STEP, _TRAP_STEP)
        f = np.exp(-xi * (np.cosh(t) - 1.0)) * np.cosh(nu * t)
        out.flat[i] = _TRAP_STEP * (f.sum() - 0.5 * f[0])
    return out


def kv(nu, x):
    """Modified Bessel K_nu(x) for non-integer ``nu``."""
    _check_order(nu)
    x, shape = _flat(x)
    out = np.empty_like(x)
    small = x < K_SWITCH
    if np.any(small):
        xs = x[small]
        out[small] = (0.5 * np.pi / math.sin(nu * math.pi)) * (
            _power_series(-nu, xs, 1.0) - _power_series(nu, xs, 1.0)
        )
    if np.any(~small):
        xl = x[~small]
        out[~small] = np.exp(-xl) * _kv_scaled_trap(nu, xl)
    return out.reshape(shape)


def _wrap(value, deriv, scalar):
    if scalar:
        return BesselEval(float(value), float(deriv))
    return BesselEval(value, deriv)


def bessel_j13(theta):
    x = _arg(theta)
    j = jv(NU, x)
    return _wrap(j, jv(NU - 1.0, x) - NU / x * j, x.ndim == 0)


def bessel_y13(theta):
    x = _arg(theta)
    y = yv(NU, x)
    return _wrap(y, yv(NU - 1.0, x) - NU / x * y, x.ndim == 0)


def bessel_i13(theta):
    x = _arg(theta)
    i = iv(NU, x)
    return _wrap(i, iv(NU - 1.0, x) - NU / x * i, x.ndim == 0)


def bessel_k13(theta):
    x = _arg(theta)
    k = kv(NU, x)
    return _wrap(k, -kv(NU - 1.0, x) - NU / x * k, x.ndim == 0)


def z_left(theta):
    """Z_L = -(2/pi) K_{1/3}; derivative (K_{-2/3} + K_{4/3}) / pi."""
    x = _arg(theta)
    value = -2.0 / np.pi * kv(NU, x)
    deriv = (kv(NU - 1.0, x) + kv(NU + 1.0, x)) / np.pi
    return _wrap(value, deriv, x.ndim == 0)


def z_right(theta):
    """Z_R = sqrt(3) J_{1/3} - Y_{1/3} and its derivative."""
    j = bessel_j13(theta)
    y = bessel_y13(theta)
    r3 = math.sqrt(3.0)
    return BesselEval(r3 * j.value - y.value, r3 * j.derivative - y.derivative)
