"""Poincare-ball operations and angular helpers.

These work on plain numpy vectors; the batched, differentiable form of the
hyperbolic logit lives with the loss heads.  ``project_rows`` is the one tape
primitive here.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "BallPoint", "HyperbolicClassParams", "NumericalDegeneracyError",
    "mobius_add", "conformal_factor", "project_to_ball", "project_rows",
    "angles_to_weights", "poincare_distance", "pairwise_poincare",
    "BALL_EPS", "MIN_DENOM",
]

BALL_EPS = 1e-5
MIN_DENOM = 1e-15


class NumericalDegeneracyError(ArithmeticError):
    pass


class BallPoint:
    """A point strictly inside the ball of radius 1/sqrt(c)."""

    def __init__(self, coords, c: float):
        coords = np.asarray(coords, dtype=np.float64)
        if c < 0:
            raise ValueError("curvature must be non-negative")
        if c * coords @ coords >= 1.0:
            raise ValueError("point is not inside the Poincare ball")
        self.coords = coords
        self.c = float(c)

    def __repr__(self):
        return f"BallPoint({self.coords!r}, c={self.c})"


class HyperbolicClassParams:
    def __init__(self, p: BallPoint, a):
        a = np.asarray(a, dtype=np.float64)
        if not np.linalg.norm(a) > 0:
            raise ValueError("tangent normal a must be non-zero")
        self.p = p
        self.a = a


def mobius_add(x, y, c: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xy = float(x @ y)
    x2 = float(x @ x)
    y2 = float(y @ y)
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    if abs(den) < MIN_DENOM:
        raise NumericalDegeneracyError("Mobius addition denominator vanished")
    return ((1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y) / den


def conformal_factor(p, c: float) -> float:
    p = np.asarray(p, dtype=np.float64)
    gap = 1.0 - c * float(p @ p)
    if gap <= 0:
        raise ValueError("conformal factor undefined on or outside the boundary")
    return 2.0 / gap


def project_to_ball(v, c: float, eps: float = BALL_EPS) -> BallPoint:
    v = np.asarray(v, dtype=np.float64)
    if c < 0:
        raise ValueError("curvature must be non-negative")
    nrm = np.linalg.norm(v)
    if c > 0 and c * nrm * nrm >= 1.0:
        v = v * ((1.0 - eps) / np.sqrt(c) / nrm)
    return BallPoint(v, c)


def project_rows(x: Tensor, c: float, eps: float = BALL_EPS) -> Tensor:
    """Differentiable row-wise clamp into the ball; identity for inside rows."""
    if c == 0:
        return x
    nrm = np.linalg.norm(x.data, axis=1)
    outside = c * nrm * nrm >= 1.0
    if not outside.any():
        return x
    radius = (1.0 - eps) / np.sqrt(c)
    factor = np.where(outside, radius / np.where(outside, nrm, 1.0), 1.0)
    unit = x.data / np.where(nrm > 0, nrm, 1.0)[:, None]

    def bw(g):
        # outside rows: y = r x/|x|, dy = r (g - u u.g)/|x|
        proj = g - unit * np.einsum("ij,ij->i", g, unit)[:, None]
        return (np.where(outside[:, None], factor[:, None] * proj, g),)

    return T.apply_op("project_rows", x.data * factor[:, None], (x,), bw)


def angles_to_weights(z_unit, w_unit, tol: float = 1e-9) -> np.ndarray:
    """cos(theta_j) between a unit embedding and each unit weight row."""
    z = np.asarray(z_unit, dtype=np.float64)
    W = np.asarray(w_unit, dtype=np.float64)
    if abs(np.linalg.norm(z) - 1.0) > tol or np.any(np.abs(np.linalg.norm(W, axis=1) - 1.0) > tol):
        raise ValueError("angles_to_weights expects unit-norm inputs")
    return np.clip(W @ z, -1.0, 1.0)


def poincare_distance(x, y, c: float) -> float:
    """Geodesic distance 2/sqrt(c) artanh(sqrt(c) |(-x) + y|)."""
    if c == 0:
        return 2.0 * float(np.linalg.norm(np.asarray(y) - np.asarray(x)))
    m = np.linalg.norm(mobius_add(-np.asarray(x, dtype=np.float64), y, c))
    return float(2.0 / np.sqrt(c) * np.arctanh(min(np.sqrt(c) * m, 1.0 - 1e-15)))


def pairwise_poincare(X: np.ndarray, c: float) -> np.ndarray:
    """All-pairs geodesic distances for the rows of X (vectorized)."""
    X = np.asarray(X, dtype=np.float64)
    if c == 0:
        sq = np.sum(X * X, axis=1)
        d2 = np.clip(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0, None)
        return 2.0 * np.sqrt(d2)
    sq = np.sum(X * X, axis=1)
    diff2 = np.clip(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0, None)
    # |(-x) + y|^2 = |x - y|^2 / ((1 - c|x|^2)(1 - c|y|^2) + c|x - y|^2)
    denom = (1 - c * sq)[:, None] * (1 - c * sq)[None, :] + c * diff2
    ratio = np.sqrt(c * diff2 / denom)
    return 2.0 / np.sqrt(c) * np.arctanh(np.clip(ratio, 0.0, 1.0 - 1e-15))
