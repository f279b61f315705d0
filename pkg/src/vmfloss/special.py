"""Bessel-ratio bounds and the vMF log-normalizer approximation.

For a vMF on S^{n-1} the mean resultant length is I_{n/2}(k) / I_{n/2-1}(k).
It is bracketed by

    g_n(k) = k / ((n-1)/2 + sqrt(((n+1)/2)^2 + k^2))     (lower)
    h_n(k) = k / ((n-1)/2 + sqrt(((n-1)/2)^2 + k^2))     (upper)

and approximated by the midpoint.  Because d/dk log C_n(k) equals minus the
ratio, integrating the midpoint gives a closed form for log C_n up to an
additive constant.  That constant is never materialized: only differences of
:func:`log_cn_approx` at a fixed ``n`` carry meaning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, apply_op

__all__ = [
    "DomainError", "OracleRangeError", "BesselRatioBracket",
    "bessel_ratio_bounds", "bessel_ratio_approx", "log_cn_approx",
    "log_bessel_iv_series", "bessel_iv_series", "bessel_ratio_series",
    "SERIES_KAPPA_MAX",
]

SERIES_KAPPA_MAX = 50.0


class DomainError(ValueError):
    pass


class OracleRangeError(ValueError):
    """Argument outside the regime where the power series is trusted."""


@dataclass(frozen=True)
class BesselRatioBracket:
    lower: float
    upper: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def __contains__(self, value) -> bool:
        return bool(np.all((self.lower <= value) & (value <= self.upper)))


def _check(n, kappa):
    if int(n) != n or n < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {n}")
    k = np.asarray(kappa, dtype=np.float64)
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise DomainError("kappa must be finite and non-negative")
    return k


def _parts(n, k):
    a = 0.5 * (n - 1)
    b = 0.5 * (n + 1)
    sa = np.sqrt(a * a + k * k)
    sb = np.sqrt(b * b + k * k)
    return a, sa, sb


def bessel_ratio_bounds(n: int, kappa) -> BesselRatioBracket:
    k = _check(n, kappa)
    a, sa, sb = _parts(n, k)
    lower, upper = k / (a + sb), k / (a + sa)
    if lower.ndim == 0:
        return BesselRatioBracket(float(lower), float(upper))
    return BesselRatioBracket(lower, upper)


def _ratio_and_slope(n, k):
    a, sa, sb = _parts(n, k)
    ratio = 0.5 * (k / (a + sa) + k / (a + sb))
    # d/dk [k / (a + s)] = (a + s - k^2 / s) / (a + s)^2
    slope = 0.5 * ((a + sa - k * k / sa) / (a + sa) ** 2
                   + (a + sb - k * k / sb) / (a + sb) ** 2)
    return ratio, slope


def bessel_ratio_approx(n: int, kappa):
    """Midpoint of the bracket; accepts floats, arrays, or a Tensor of kappas."""
    if isinstance(kappa, Tensor):
        _check(n, kappa.data)
        ratio, slope = _ratio_and_slope(n, kappa.data)
        return apply_op("bessel_ratio_approx", ratio, (kappa,), lambda g: (g * slope,))
    k = _check(n, kappa)
    ratio, _ = _ratio_and_slope(n, k)
    return float(ratio) if ratio.ndim == 0 else ratio


def _log_cn(n, k):
    a, sa, sb = _parts(n, k)
    q = 0.5 * a
    return q * np.log(a + sa) - 0.5 * sa + q * np.log(a + sb) - 0.5 * sb


def log_cn_approx(n: int, kappa):
    """log C_n(kappa) up to an unknown additive constant (differences only).

    The derivative with respect to kappa is exactly ``-bessel_ratio_approx``.
    """
    if isinstance(kappa, Tensor):
        _check(n, kappa.data)
        ratio, _ = _ratio_and_slope(n, kappa.data)
        return apply_op("log_cn_approx", _log_cn(n, kappa.data), (kappa,),
                        lambda g: (-g * ratio,))
    k = _check(n, kappa)
    out = _log_cn(n, k)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ test oracles

def log_bessel_iv_series(v: float, kappa: float) -> float:
    """log I_v(kappa) from the ascending power series, summed in log space."""
    if v < 0:
        raise DomainError("order must be non-negative")
    if kappa < 0:
        raise DomainError("kappa must be non-negative")
    if kappa > SERIES_KAPPA_MAX:
        raise OracleRangeError(f"series oracle only trusted for kappa <= {SERIES_KAPPA_MAX}")
    if kappa == 0:
        return 0.0 if v == 0 else -math.inf
    half = math.log(kappa / 2.0)
    logs = []
    k = 0
    while True:
        t = (2 * k + v) * half - math.lgamma(k + 1) - math.lgamma(k + v + 1)
        logs.append(t)
        # terms peak near k ~ kappa/2 then decay; stop once negligible
        if k > kappa and t < max(logs) + math.log(1e-17):
            break
        k += 1
    top = max(logs)
    return top + math.log(math.fsum(math.exp(t - top) for t in logs))


def bessel_iv_series(v: float, kappa: float) -> float:
    return math.exp(log_bessel_iv_series(v, kappa))


def bessel_ratio_series(n: int, kappa: float) -> float:
    """I_{n/2}(kappa) / I_{n/2-1}(kappa) from the series (oracle only)."""
    if kappa == 0:
        return 0.0
    return math.exp(log_bessel_iv_series(n / 2.0, kappa)
                    - log_bessel_iv_series(n / 2.0 - 1.0, kappa))
