"""SGD training with plateau LR halving, early stopping and episodic batches."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .heads import LossHead, VmfHead
from .model import MLPEncoder

__all__ = [
    "TrainConfig", "ConfigError", "Sgd", "sgd_step", "PlateauScheduler",
    "episodic_batches", "TrainResult", "train",
]


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.1
    temperature_lr: float = 0.001
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    plateau_patience: int = 15
    early_stop_patience: int = 35
    lr_decay_factor: float = 0.5
    classes_per_batch: int = 10
    per_class: int = 13
    max_epochs: int = 30
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if not self.lr > 0:
            out.append("lr must be positive")
        if self.temperature_lr < 0:
            out.append("temperature_lr must be non-negative")
        if not 0 <= self.momentum < 1:
            out.append("momentum must lie in [0, 1)")
        if self.nesterov and self.momentum == 0:
            out.append("nesterov requires momentum > 0")
        if self.weight_decay < 0:
            out.append("weight_decay must be non-negative")
        if not 0 < self.plateau_patience < self.early_stop_patience:
            out.append("need 0 < plateau_patience < early_stop_patience")
        if not 0 < self.lr_decay_factor < 1:
            out.append("lr_decay_factor must lie in (0, 1)")
        if self.classes_per_batch < 1 or self.per_class < 1:
            out.append("episodic N and K must be >= 1")
        if self.max_epochs < 0:
            out.append("max_epochs must be >= 0")
        return out

    def validate(self) -> None:
        issues = self.problems()
        if issues:
            raise ConfigError("; ".join(issues))

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.per_class

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------- optimizer

def sgd_step(params: dict, grads: dict, config: TrainConfig, state: dict,
             lr: float | None = None, temperature_lr: float | None = None,
             temperature_names=("tau",)) -> None:
    """In-place SGD with (Nesterov) momentum.

    v <- mu v + g;  step = g + mu v (Nesterov) or v.  Weight decay adds
    wd * theta to g for every parameter except temperatures, which also use
    their own learning rate.  ``state`` holds the velocities.
    """
    lr = config.lr if lr is None else lr
    temperature_lr = config.temperature_lr if temperature_lr is None else temperature_lr
    mu = config.momentum
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        is_temp = name.split(".")[-1] in temperature_names
        if config.weight_decay and not is_temp:
            g = g + config.weight_decay * p.data
        v = state.get(name)
        v = g.copy() if v is None else mu * v + g
        state[name] = v
        step = g + mu * v if config.nesterov else v
        p.data = p.data - (temperature_lr if is_temp else lr) * step


class Sgd:
    def __init__(self, params: dict, config: TrainConfig):
        self.params = params
        self.config = config
        self.lr = config.lr
        self.temperature_lr = config.temperature_lr
        self.state: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        T.zero_grad(self.params.values())

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items()}
        sgd_step(self.params, grads, self.config, self.state, self.lr, self.temperature_lr)

    def decay(self, factor: float) -> None:
        self.lr *= factor
        self.temperature_lr *= factor


class PlateauScheduler:
    """Validation-accuracy state machine.

    An epoch improves only if it is strictly better than the running best.
    Every ``patience`` epochs without improvement the LR is halved; after
    ``stop_patience`` such epochs training stops.
    """

    def __init__(self, patience: int = 15, stop_patience: int = 35):
        self.patience = patience
        self.stop_patience = stop_patience
        self.best = -math.inf
        self.best_epoch = -1
        self.epoch = -1

    def update(self, value: float) -> str:
        self.epoch += 1
        if value > self.best:
            self.best = value
            self.best_epoch = self.epoch
            return "keep"
        stale = self.epoch - self.best_epoch
        if stale >= self.stop_patience:
            return "stop"
        if stale % self.patience == 0:
            return "halve_lr"
        return "keep"

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


def episodic_batches(labels, classes_per_batch: int, per_class: int,
                     rng: np.random.Generator, count: int | None = None):
    """Yield index arrays of N classes x K instances.

    Classes are drawn without replacement; instances without replacement
    unless a class has fewer than K members.  ``count`` batches are produced
    (default: enough to cover the data once on average).
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes_per_batch > classes.size:
        raise ConfigError(f"N={classes_per_batch} exceeds the {classes.size} available classes")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    if count is None:
        count = max(1, math.ceil(len(labels) / (classes_per_batch * per_class)))
    for _ in range(count):
        chosen = rng.choice(classes, size=classes_per_batch, replace=False)
        parts = []
        for c in chosen:
            pool = members[c]
            parts.append(rng.choice(pool, size=per_class, replace=pool.size < per_class))
        yield np.concatenate(parts)


# ------------------------------------------------------------------ loop

@dataclass
class TrainResult:
    best_epoch: int
    best_val_accuracy: float
    log: list[dict] = field(default_factory=list)
    stopped_early: bool = False


def _val_accuracy(encoder, head, x, y, rng) -> float:
    probs = head.predict(encoder.embed(x), rng)
    return float(np.mean(np.argmax(probs, axis=1) == y))


def train(encoder: MLPEncoder, head: LossHead, train_x, train_y, val_x, val_y,
          config: TrainConfig, rngs: dict, on_epoch=None, score_fn=None) -> TrainResult:
    """Train in place and leave the best-validation parameters loaded.

    ``rngs`` must provide "init", "batching", "sampler" and "eval" streams.
    ``on_epoch`` (optional) receives each log row as it is produced.
    ``score_fn(encoder, head, rng)`` replaces validation accuracy as the
    model-selection score (open-set runs pass mAP@R here).
    """
    if score_fn is None:
        def score_fn(enc, hd, rng):
            return _val_accuracy(enc, hd, val_x, val_y, rng)
    config.validate()
    if isinstance(head, VmfHead) and head.plan is None:
        head.initialize(float(np.mean(np.abs(encoder.embed(train_x)))), rngs["init"])
    params = {f"encoder.{k}": v for k, v in encoder.parameters().items()}
    params.update({f"head.{k}": v for k, v in head.parameters().items()})
    opt = Sgd(params, config)
    sched = PlateauScheduler(config.plateau_patience, config.early_stop_patience)
    best_state = _snapshot(encoder, head)
    result = TrainResult(best_epoch=-1, best_val_accuracy=float("nan"))

    for epoch in range(config.max_epochs):
        losses = []
        for idx in episodic_batches(train_y, config.classes_per_batch, config.per_class,
                                    rngs["batching"]):
            opt.zero_grad()
            z = encoder(train_x[idx])
            loss = head.loss(z, train_y[idx], rngs["sampler"], epoch)
            T.backward(loss)
            opt.step()
            head.after_step()
            losses.append(float(loss.data))
        val_acc = score_fn(encoder, head, rngs["eval"])
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_accuracy": val_acc,
               "lr": opt.lr, "beta": _beta(head)}
        result.log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        action = sched.update(val_acc)
        if sched.improved:
            best_state = _snapshot(encoder, head)
            result.best_epoch, result.best_val_accuracy = epoch, val_acc
        if action == "stop":
            result.stopped_early = True
            break
        if action == "halve_lr":
            opt.decay(config.lr_decay_factor)

    encoder.load_state(best_state[0])
    head.load_state(best_state[1])
    return result


def _snapshot(encoder, head):
    return encoder.state(), head.state()


def _beta(head) -> float:
    temp = getattr(head, "temperature", None)
    return temp.value if temp is not None else float("nan")
