"""von Mises-Fisher distribution: parameters, sampling, moments, initialization.

Sampling follows Wood (1994): the cosine coordinate ``w = mu^T x`` is drawn
by rejection from a Beta-based envelope, a direction orthogonal to ``e1`` is
drawn uniformly, and a Householder reflection carries ``e1`` onto ``mu``.

For the reparameterized path the accepted Beta draw ``eps`` is held fixed and
``w`` is treated as a deterministic function of ``(kappa, eps)``; the tangent
direction is gradient-stopped noise.  The score-function correction for the
rejection step is omitted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .special import DomainError, bessel_ratio_approx
from .tensor import DegenerateInputError, Tensor, apply_op

__all__ = [
    "VmfParams", "InitPlan", "SamplerStallError", "MAX_PROPOSALS",
    "from_raw", "sample", "sample_cosines", "sample_tangent", "rsample", "draw_noise",
    "expected_value", "make_init_plan", "init_class_weights",
]

MAX_PROPOSALS = 1000


class SamplerStallError(RuntimeError):
    """The rejection loop did not accept within MAX_PROPOSALS rounds."""


@dataclass
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if abs(np.linalg.norm(self.mu) - 1.0) > 1e-9:
            raise ValueError("mu must be a unit vector")
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def from_raw(z_tilde) -> VmfParams:
    """mu = z / |z|, kappa = |z|."""
    z = np.asarray(z_tilde.data if isinstance(z_tilde, Tensor) else z_tilde, dtype=np.float64)
    k = float(np.linalg.norm(z))
    if k == 0:
        raise DegenerateInputError("zero vector has no mean direction")
    return VmfParams(mu=z / k, kappa=k)


# ---------------------------------------------------------------- sampling

def _envelope_b(kappa: np.ndarray, m: int) -> np.ndarray:
    # b = (-2k + sqrt(4k^2 + m^2)) / m, written without cancellation
    return m / (2.0 * kappa + np.sqrt(4.0 * kappa ** 2 + m * m))


def _omega(eps, b):
    return (1.0 - (1.0 + b) * eps) / (1.0 - (1.0 - b) * eps)


def sample_cosines(kappa, dim: int, rng: np.random.Generator):
    """Draw ``w = mu^T x`` for each entry of ``kappa``.

    Returns ``(w, eps)`` where ``eps`` are the accepted Beta proposals, so the
    caller can rebuild ``w`` differentiably as a function of kappa.
    """
    kappa = np.atleast_1d(np.asarray(kappa, dtype=np.float64))
    if np.any(kappa < 0):
        raise ValueError("kappa must be non-negative")
    m = dim - 1
    b = _envelope_b(kappa, m)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * np.log(1.0 - x0 * x0)

    eps = np.empty_like(kappa)
    pending = np.arange(kappa.size)
    uniform = kappa == 0
    if uniform.any():
        # kappa = 0 is exactly uniform on the sphere: every proposal is accepted
        eps[uniform] = rng.beta(m / 2.0, m / 2.0, size=int(uniform.sum()))
        pending = pending[~uniform]
    rounds = 0
    while pending.size:
        if rounds >= MAX_PROPOSALS:
            raise SamplerStallError(
                f"{pending.size} draws still rejected after {MAX_PROPOSALS} proposals")
        rounds += 1
        e = rng.beta(m / 2.0, m / 2.0, size=pending.size)
        u = rng.uniform(size=pending.size)
        bp = b[pending]
        w = _omega(e, bp)
        ok = kappa[pending] * w + m * np.log(1.0 - x0[pending] * w) - c[pending] >= np.log(u)
        eps[pending[ok]] = e[ok]
        pending = pending[~ok]
    return _omega(eps, b), eps


def sample_tangent(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform unit vectors on S^{dim-2}, as rows of a (count, dim-1) array."""
    v = rng.standard_normal((count, dim - 1))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    while np.any(norms == 0):  # measure-zero, but keep the contract
        bad = norms[:, 0] == 0
        v[bad] = rng.standard_normal((int(bad.sum()), dim - 1))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norms


def _householder(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Reflect rows of ``x`` by the map that sends e1 to the matching row of mu."""
    u = -mu.copy()
    u[:, 0] += 1.0
    q = np.einsum("ij,ij->i", u, u)
    safe = q > 1e-30
    coef = np.where(safe, 2.0 * np.einsum("ij,ij->i", u, x) / np.where(safe, q, 1.0), 0.0)
    return x - coef[:, None] * u


def sample(p: VmfParams, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw ``size`` unit vectors from vMF(p.mu, p.kappa); shape (size, dim)."""
    n = p.dim
    w, _ = sample_cosines(np.full(size, p.kappa), n, rng)
    v = sample_tangent(size, n, rng)
    x = np.concatenate([w[:, None], np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v], axis=1)
    return _householder(x, np.repeat(p.mu[None, :], size, axis=0))


# ------------------------------------------------------ differentiable path

def _omega_op(kappa: Tensor, eps: np.ndarray, dim: int) -> Tensor:
    m = dim - 1
    k = kappa.data
    s = np.sqrt(4.0 * k * k + m * m)
    b = m / (2.0 * k + s)
    den = 1.0 - (1.0 - b) * eps
    w = (1.0 - (1.0 + b) * eps) / den
    dw_db = -2.0 * eps * (1.0 - eps) / den ** 2
    db_dk = -m * (2.0 + 4.0 * k / s) / (2.0 * k + s) ** 2
    return apply_op("vmf_omega", w, (kappa,), lambda g: (g * dw_db * db_dk,))


def _frame_op(w: Tensor, v: np.ndarray) -> Tensor:
    """Rows ``(w, sqrt(1-w^2) v)``; ``v`` is constant noise."""
    one_minus = np.clip(1.0 - w.data ** 2, 0.0, None)
    r = np.sqrt(one_minus)
    data = np.concatenate([w.data[:, None], r[:, None] * v], axis=1)
    dr = np.where(r > 0, -w.data / np.where(r > 0, r, 1.0), 0.0)

    def bw(g):
        return (g[:, 0] + dr * np.einsum("ij,ij->i", g[:, 1:], v),)

    return apply_op("vmf_frame", data, (w,), bw)


def _householder_op(x: Tensor, mu: Tensor) -> Tensor:
    u = -mu.data.copy()
    u[:, 0] += 1.0
    q = np.einsum("ij,ij->i", u, u)
    safe = q > 1e-30
    qs = np.where(safe, q, 1.0)
    p = np.einsum("ij,ij->i", u, x.data)
    coef = np.where(safe, 2.0 * p / qs, 0.0)
    out = x.data - coef[:, None] * u

    def bw(g):
        gu_dot = np.einsum("ij,ij->i", g, u)
        gx = g - np.where(safe, 2.0 * gu_dot / qs, 0.0)[:, None] * u
        # y = x - 2 u (u.x) / (u.u); gradient w.r.t. u, then mu = e1 - u
        gu = -(coef[:, None] * g
               + np.where(safe, 2.0 * gu_dot / qs, 0.0)[:, None] * x.data
               - np.where(safe, 4.0 * gu_dot * p / qs ** 2, 0.0)[:, None] * u)
        return gx, -gu

    return apply_op("householder", out, (x, mu), bw)


def rsample(mu: Tensor, kappa: Tensor, samples: int, rng: np.random.Generator,
            noise: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Reparameterized draws for a batch of vMFs.

    ``mu`` is (B, n) with unit rows and ``kappa`` is (B,).  Returns a
    (B*samples, n) Tensor whose rows b*samples .. (b+1)*samples-1 belong to
    batch entry b.  Passing ``noise=(eps, tangent)`` replays fixed random
    numbers (used for common-random-number gradient checks).
    """
    if mu.ndim != 2 or kappa.shape != (mu.shape[0],):
        raise T.ShapeError("rsample expects mu (B, n) and kappa (B,)")
    n = mu.shape[1]
    kap = T.repeat_rows(kappa, samples)
    if noise is None:
        _, eps = sample_cosines(kap.data, n, rng)
        tangent = sample_tangent(kap.shape[0], n, rng)
    else:
        eps, tangent = noise
    w = _omega_op(kap, eps, n)
    x = _frame_op(w, tangent)
    return _householder_op(x, T.repeat_rows(mu, samples))


def draw_noise(kappa, dim: int, samples: int, rng: np.random.Generator):
    """Random numbers consumed by :func:`rsample`, for replay."""
    kap = np.repeat(np.asarray(kappa, dtype=np.float64), samples)
    _, eps = sample_cosines(kap, dim, rng)
    return eps, sample_tangent(kap.size, dim, rng)


# ------------------------------------------------------------- moments

def expected_value(p):
    """E[x] = A_n(kappa) mu with the bracket-midpoint ratio.

    Accepts a :class:`VmfParams` or a pair ``(mu, kappa)`` of Tensors, in
    which case the result is differentiable (rows of mu scaled by A(kappa)).
    """
    if isinstance(p, VmfParams):
        return bessel_ratio_approx(p.dim, p.kappa) * p.mu
    mu, kappa = p
    ratio = bessel_ratio_approx(mu.shape[-1], kappa)
    if mu.ndim == 1:
        return T.scale(mu, ratio)
    return T.mul(mu, T.expand(ratio, 1, mu.shape[1]))


# ------------------------------------------------------------ initializer

@dataclass(frozen=True)
class InitPlan:
    lambda_target: float
    alpha: float
    sigma: float
    n: int

    @property
    def kappa_target(self) -> float:
        lam = self.lambda_target
        return lam / (1.0 - lam * lam) * (self.n - 1)


def make_init_plan(lambda_target: float, n: int, mean_abs_activation: float) -> InitPlan:
    """Scale factors that put the initial Bessel ratio near ``lambda_target``.

    kappa* = lam (n-1) / (1 - lam^2) solves h_n(kappa) = lam.  The embedding
    multiplier assumes equal-magnitude coordinates, so E|z_i| sqrt(n) alpha
    hits kappa*; class weights use the same magnitude as their std-dev.
    """
    lam = float(lambda_target)
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    if not mean_abs_activation > 0:
        raise ValueError("mean absolute activation must be positive")
    sigma = lam * (n - 1) / ((1.0 - lam * lam) * math.sqrt(n))
    return InitPlan(lambda_target=lam, alpha=sigma / mean_abs_activation, sigma=sigma, n=n)


def init_class_weights(plan: InitPlan, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, plan.sigma, size=(num_classes, plan.n))
