"""Classification heads: standard, hyperbolic, cosine, arcface and vMF.

All heads take a batch of raw embeddings ``z`` of shape (B, n) and expose

* ``loss(z, labels, rng, epoch)``: mean training loss as a scalar Tensor,
* ``predict(z, rng)``: posterior probabilities as a (B, Y) array,
* ``log_scores(z, rng)``: logits (or log-posterior) used for calibration,
* ``embedding_norm(z)``: the norm reported for norm-AUROC analysis.

Final layers never carry a bias.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .geometry import BALL_EPS, NumericalDegeneracyError, project_rows
from .special import bessel_ratio_approx, log_cn_approx
from .tensor import Tensor
from .vmf import InitPlan, init_class_weights, make_init_plan, rsample, sample_cosines, sample_tangent

__all__ = [
    "VARIANTS", "Temperature", "LossHead", "StandardHead", "HyperbolicHead",
    "CosineHead", "ArcFaceHead", "VmfHead", "make_head", "head_from_state",
    "standard_logits", "hyperbolic_logits", "cosine_logits", "arcface_logits",
    "vmf_loss", "vmf_predict", "cross_entropy", "softmax",
]

VARIANTS = ("standard", "hyperbolic", "cosine", "arcface", "vmf")


class Temperature:
    """Inverse temperature beta = exp(tau) with tau unconstrained."""

    def __init__(self, tau: float = 0.0):
        self.tau = T.tensor(float(tau), requires_grad=True)

    def beta(self) -> Tensor:
        return T.exp(self.tau)

    @property
    def value(self) -> float:
        return math.exp(float(self.tau.data))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(scores, labels, probabilities: bool = False) -> Tensor:
    """Mean negative log-likelihood of ``labels``.

    ``scores`` are logits by default; with ``probabilities=True`` they are
    already normalized class probabilities.  A single (Y,) vector with an
    integer label is accepted too.
    """
    scores = T.constant(scores)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if scores.ndim == 1:
        scores = T.reshape(scores, (1, -1))
    if probabilities:
        picked = T.log(T.take(scores, labels))
    else:
        picked = T.take(T.log_softmax(scores), labels)
    return T.neg(T.mean(picked))


# ------------------------------------------------------------------ logits

def standard_logits(z: Tensor, head: StandardHead) -> Tensor:
    return T.matmul(z, head.weight.T)


def hyperbolic_logits(z: Tensor, head: HyperbolicHead) -> Tensor:
    """Multinomial logistic regression in the Poincare ball.

    logit_j = lam(p_j) |a_j| / sqrt(c) * asinh(2 sqrt(c) <m_j, a_j> /
              ((1 - c |m_j|^2) |a_j|)),   m_j = (-p_j) (+)_c z
    """
    c = head.c
    P, A = head.offset, head.normal
    B, Y = z.shape[0], P.shape[0]
    a_norm = T.expand(T.row_norm(A), 0, B)
    za = T.matmul(z, A.T)
    pa = T.expand(T.row_dot(P, A), 0, B)
    if c == 0:
        # Euclidean limit of the expression below
        return T.mul(4.0, T.sub(za, pa))
    zball = project_rows(z, c)
    za = T.matmul(zball, A.T)
    xy = T.neg(T.matmul(zball, P.T))                      # <-p_j, z>
    z2 = T.expand(T.row_dot(zball, zball), 1, Y)
    p2 = T.expand(T.row_dot(P, P), 0, B)
    coef_x = T.add(1.0, T.add(T.mul(2.0 * c, xy), T.mul(c, z2)))
    coef_y = T.sub(1.0, T.mul(c, p2))
    den = T.add(1.0, T.add(T.mul(2.0 * c, xy), T.mul(c * c, T.mul(p2, z2))))
    if np.any(np.abs(den.data) < 1e-15):
        raise NumericalDegeneracyError("Mobius addition denominator vanished")
    m_dot_a = T.div(T.sub(T.mul(coef_y, za), T.mul(coef_x, pa)), den)
    m_sq = T.div(T.add(T.add(T.mul(T.square(coef_x), p2),
                             T.mul(T.mul(2.0, T.mul(coef_x, coef_y)), xy)),
                       T.mul(T.square(coef_y), z2)),
                 T.square(den))
    gap = T.sub(1.0, T.mul(c, m_sq))
    if np.any(gap.data <= 0):
        raise NumericalDegeneracyError("Mobius sum left the ball")
    arg = T.div(T.mul(2.0 * math.sqrt(c), m_dot_a), T.mul(gap, a_norm))
    conformal = T.div(2.0, coef_y)
    return T.mul(T.div(T.mul(conformal, a_norm), math.sqrt(c)), T.asinh(arg))


def _cosines(z: Tensor, weight: Tensor) -> Tensor:
    return T.matmul(T.l2_normalize(z), T.l2_normalize(weight).T)


def cosine_logits(z: Tensor, head: CosineHead) -> Tensor:
    return T.scale(_cosines(z, head.weight), head.temperature.beta())


def arcface_logits(z: Tensor, head: ArcFaceHead, labels=None, epoch: int | None = None) -> Tensor:
    """Cosine logits with cos(theta_y + m) for the target class.

    The margin is only applied when labels are given (training) and the
    epoch is past the warm-up; theta_y is clamped to [0, pi - m] first.
    """
    m = head.effective_margin(epoch) if labels is not None else 0.0
    cosines = _cosines(z, head.weight)
    if m > 0:
        theta = T.clip(T.arccos(T.take(cosines, labels)), 0.0, math.pi - m)
        cosines = T.replace_at(cosines, labels, T.cos(T.add(theta, m)))
    return T.scale(cosines, head.temperature.beta())


def _vmf_expected_weights(head: VmfHead) -> Tensor:
    W = head.weight
    return T.mul(T.l2_normalize(W),
                 T.expand(bessel_ratio_approx(head.dim, T.row_norm(W)), 1, head.dim))


def vmf_loss(z_raw: Tensor, labels, head: VmfHead, rng: np.random.Generator,
             samples: int | None = None, noise=None, log_cn=log_cn_approx) -> Tensor:
    """Monte Carlo estimate of the Jensen upper bound on the vMF loss.

    For each of S draws z ~ vMF(z~/|z~|, |z~|) with z~ = alpha * z_raw:

        log sum_j exp(logC(|w~_j|) - logC(|w~_j + beta z|))

    averaged over draws, minus beta <E[w_y], E[z]>.  ``noise`` replays fixed
    sampler randomness; ``log_cn`` is injectable so tests can shift it.
    """
    labels = np.asarray(labels, dtype=np.int64)
    S = head.train_samples if samples is None else samples
    n, Y = head.dim, head.num_classes
    zt = T.mul(head.alpha, z_raw)
    kappa = T.row_norm(zt)
    mu = T.l2_normalize(zt)
    draws = rsample(mu, kappa, S, rng, noise=noise)                  # (B*S, n)
    beta = head.temperature.beta()
    W = head.weight
    w_sq = T.row_dot(W, W)
    BS = draws.shape[0]
    shifted_sq = T.add(T.add(T.expand(w_sq, 0, BS),
                             T.scale(T.matmul(draws, W.T), T.mul(2.0, beta))),
                       T.square(beta))
    if np.any(shifted_sq.data <= 0):
        raise NumericalDegeneracyError("|w_j + beta z| vanished")
    shifted_norm = T.sqrt(shifted_sq)
    terms = T.sub(T.expand(log_cn(n, T.sqrt(w_sq)), 0, BS), log_cn(n, shifted_norm))
    per_draw = T.logsumexp(terms, axis=1)
    bound = T.mean(T.reshape(per_draw, (-1, S)), axis=1)
    ez = T.mul(mu, T.expand(bessel_ratio_approx(n, kappa), 1, n))
    align = T.take(T.matmul(ez, _vmf_expected_weights(head).T), labels)
    return T.mean(T.sub(bound, T.scale(align, beta)))


def _draw_unit(mu: np.ndarray, kappa: np.ndarray, rng) -> np.ndarray:
    """One vMF draw per row of ``mu`` (any leading shape)."""
    n = mu.shape[-1]
    flat_mu = mu.reshape(-1, n)
    flat_k = np.broadcast_to(kappa, mu.shape[:-1]).reshape(-1)
    w, _ = sample_cosines(flat_k, n, rng)
    v = sample_tangent(flat_k.size, n, rng)
    x = np.concatenate([w[:, None], np.sqrt(np.clip(1 - w * w, 0, None))[:, None] * v], axis=1)
    u = -flat_mu.copy()
    u[:, 0] += 1.0
    q = np.einsum("ij,ij->i", u, u)
    safe = q > 1e-30
    coef = np.where(safe, 2 * np.einsum("ij,ij->i", u, x) / np.where(safe, q, 1.0), 0.0)
    return (x - coef[:, None] * u).reshape(mu.shape)


def vmf_predict(z_raw, head: VmfHead, rng: np.random.Generator,
                samples: int | None = None, per_instance_weights: bool = True) -> np.ndarray:
    """Monte Carlo posterior averaging softmax(beta w^T z) over joint draws.

    With ``per_instance_weights`` (default) every instance gets its own
    weight draws; otherwise one set of S weight draws is shared by the batch.
    """
    S = head.eval_samples if samples is None else samples
    zr = np.asarray(z_raw.data if isinstance(z_raw, Tensor) else z_raw, dtype=np.float64)
    zt = head.alpha * zr
    kz = np.linalg.norm(zt, axis=1)
    muz = zt / kz[:, None]
    W = head.weight.data
    kw = np.linalg.norm(W, axis=1)
    muw = W / kw[:, None]
    B, n = zt.shape
    Y = W.shape[0]
    beta = head.temperature.value
    zs = _draw_unit(np.repeat(muz[:, None, :], S, axis=1), np.repeat(kz[:, None], S, axis=1), rng)
    if per_instance_weights:
        ws = _draw_unit(np.broadcast_to(muw, (B, S, Y, n)).copy(),
                        np.broadcast_to(kw, (B, S, Y)), rng)
        logits = beta * np.einsum("bsn,bsyn->bsy", zs, ws)
    else:
        ws = _draw_unit(np.broadcast_to(muw, (S, Y, n)).copy(), np.broadcast_to(kw, (S, Y)), rng)
        logits = beta * np.einsum("bsn,syn->bsy", zs, ws)
    return softmax(logits).mean(axis=1)


# ------------------------------------------------------------------- heads

class LossHead:
    variant = ""
    has_temperature = False

    def __init__(self, dim: int, num_classes: int):
        self.dim = dim
        self.num_classes = num_classes

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def logits(self, z: Tensor, labels=None, epoch: int | None = None) -> Tensor:
        raise NotImplementedError

    def loss(self, z: Tensor, labels, rng=None, epoch: int = 0) -> Tensor:
        return cross_entropy(self.logits(z, labels, epoch), labels)

    def log_scores(self, z, rng=None) -> np.ndarray:
        return self.logits(T.constant(z)).data

    def predict(self, z, rng=None) -> np.ndarray:
        return softmax(self.log_scores(z, rng))

    def embedding(self, z) -> np.ndarray:
        """Embedding used for retrieval (before any normalization)."""
        return np.asarray(T.constant(z).data)

    def embedding_norm(self, z) -> np.ndarray:
        return np.linalg.norm(self.embedding(z), axis=1)

    def after_step(self) -> None:
        """Hook run after each optimizer step."""

    def hyperparameters(self) -> dict:
        return {}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict) -> None:
        for k, v in self.parameters().items():
            v.data = np.array(state[k], dtype=np.float64).reshape(v.shape)


class StandardHead(LossHead):
    variant = "standard"

    def __init__(self, dim, num_classes, rng):
        super().__init__(dim, num_classes)
        self.weight = T.tensor(_xavier(rng, num_classes, dim), requires_grad=True)

    def parameters(self):
        return {"weight": self.weight}

    def logits(self, z, labels=None, epoch=None):
        return standard_logits(z, self)


class HyperbolicHead(LossHead):
    variant = "hyperbolic"

    def __init__(self, dim, num_classes, rng, curvature: float = 1e-5):
        super().__init__(dim, num_classes)
        if curvature < 0:
            raise ValueError("curvature must be non-negative")
        self.c = float(curvature)
        # offsets start at the origin so the initial head is nearly Euclidean
        self.offset = T.tensor(np.zeros((num_classes, dim)), requires_grad=True)
        self.normal = T.tensor(rng.standard_normal((num_classes, dim)), requires_grad=True)

    def parameters(self):
        return {"offset": self.offset, "normal": self.normal}

    def logits(self, z, labels=None, epoch=None):
        return hyperbolic_logits(z, self)

    def embedding(self, z):
        z = np.asarray(T.constant(z).data)
        if self.c == 0:
            return z
        return project_rows(T.constant(z), self.c).data

    def after_step(self):
        if self.c > 0:
            self.offset.data = project_rows(T.tensor(self.offset.data), self.c).data

    def hyperparameters(self):
        return {"curvature": self.c}


class CosineHead(LossHead):
    variant = "cosine"
    has_temperature = True

    def __init__(self, dim, num_classes, rng, tau: float = 0.0):
        super().__init__(dim, num_classes)
        self.weight = T.tensor(_xavier(rng, num_classes, dim), requires_grad=True)
        self.temperature = Temperature(tau)

    def parameters(self):
        return {"weight": self.weight, "tau": self.temperature.tau}

    def logits(self, z, labels=None, epoch=None):
        return cosine_logits(z, self)


class ArcFaceHead(CosineHead):
    variant = "arcface"

    def __init__(self, dim, num_classes, rng, tau: float = 0.0,
                 margin: float = 0.5, warmup_epochs: int = 0):
        super().__init__(dim, num_classes, rng, tau)
        if not 0.0 <= margin < math.pi / 2:
            raise ValueError("margin must lie in [0, pi/2)")
        self.margin = float(margin)
        self.warmup_epochs = int(warmup_epochs)

    def effective_margin(self, epoch: int | None) -> float:
        if epoch is not None and epoch < self.warmup_epochs:
            return 0.0
        return self.margin

    def logits(self, z, labels=None, epoch=None):
        return arcface_logits(z, self, labels, epoch)

    def hyperparameters(self):
        return {"margin": self.margin, "warmup_epochs": self.warmup_epochs}


class VmfHead(LossHead):
    variant = "vmf"
    has_temperature = True

    def __init__(self, dim, num_classes, rng, tau: float = 0.0, lam: float = 0.4,
                 train_samples: int = 10, eval_samples: int = 10,
                 per_instance_weights: bool = True):
        super().__init__(dim, num_classes)
        if train_samples < 1 or eval_samples < 1:
            raise ValueError("sample counts must be >= 1")
        self.lam = float(lam)
        self.train_samples = int(train_samples)
        self.eval_samples = int(eval_samples)
        self.per_instance_weights = per_instance_weights
        self.temperature = Temperature(tau)
        self.plan: InitPlan | None = None
        self.alpha = 1.0
        # placeholder until initialize() sees the encoder's activations
        self.weight = T.tensor(init_class_weights(make_init_plan(self.lam, dim, 1.0),
                                                  num_classes, rng), requires_grad=True)

    def initialize(self, mean_abs_activation: float, rng: np.random.Generator) -> InitPlan:
        """Fix alpha and redraw class weights from the measured activation scale."""
        self.plan = make_init_plan(self.lam, self.dim, mean_abs_activation)
        self.alpha = self.plan.alpha
        self.weight.data = init_class_weights(self.plan, self.num_classes, rng)
        return self.plan

    def parameters(self):
        return {"weight": self.weight, "tau": self.temperature.tau}

    def loss(self, z, labels, rng=None, epoch=0):
        return vmf_loss(z, labels, self, rng)

    def predict(self, z, rng=None):
        return vmf_predict(z, self, rng, per_instance_weights=self.per_instance_weights)

    def log_scores(self, z, rng=None):
        p = self.predict(z, rng)
        return np.log(np.clip(p, 1e-300, None))

    def embedding(self, z):
        return self.alpha * np.asarray(T.constant(z).data)

    def sample_embeddings(self, z, rng) -> np.ndarray:
        """One unit-norm draw per instance from its embedding distribution."""
        zt = self.embedding(z)
        k = np.linalg.norm(zt, axis=1)
        return _draw_unit(zt / k[:, None], k, rng)

    def hyperparameters(self):
        return {"lam": self.lam, "alpha": self.alpha,
                "train_samples": self.train_samples, "eval_samples": self.eval_samples,
                "per_instance_weights": self.per_instance_weights}


def _xavier(rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def make_head(variant: str, dim: int, num_classes: int, rng: np.random.Generator,
              **hp) -> LossHead:
    """Build a head by name; ``hp`` keys: tau, margin, warmup_epochs,
    curvature, lam, train_samples, eval_samples."""
    if variant == "standard":
        return StandardHead(dim, num_classes, rng)
    if variant == "hyperbolic":
        return HyperbolicHead(dim, num_classes, rng, curvature=hp.get("curvature", 1e-5))
    if variant == "cosine":
        return CosineHead(dim, num_classes, rng, tau=hp.get("tau", 0.0))
    if variant == "arcface":
        return ArcFaceHead(dim, num_classes, rng, tau=hp.get("tau", 0.0),
                           margin=hp.get("margin", 0.5),
                           warmup_epochs=hp.get("warmup_epochs", 0))
    if variant == "vmf":
        return VmfHead(dim, num_classes, rng, tau=hp.get("tau", 0.0), lam=hp.get("lam", 0.4),
                       train_samples=hp.get("train_samples", 10),
                       eval_samples=hp.get("eval_samples", 10),
                       per_instance_weights=hp.get("per_instance_weights", True))
    raise ValueError(f"unknown head variant {variant!r}; expected one of {VARIANTS}")


def head_from_state(variant: str, dim: int, num_classes: int, hp: dict,
                    state: dict[str, np.ndarray]) -> LossHead:
    head = make_head(variant, dim, num_classes, np.random.default_rng(0), **hp)
    head.load_state(state)
    if isinstance(head, VmfHead):
        head.alpha = float(hp.get("alpha", 1.0))
    return head
