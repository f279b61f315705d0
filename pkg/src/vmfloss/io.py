"""Run configuration files, binary checkpoints and training logs."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import toml

from .heads import VARIANTS, LossHead, head_from_state
from .model import MLPEncoder
from .train import ConfigError, TrainConfig

__all__ = [
    "RunConfig", "parse_config", "load_config", "dump_config",
    "save_checkpoint", "load_checkpoint", "checkpoint_bytes", "Checkpoint",
    "CheckpointFormatError", "LOG_COLUMNS", "write_log",
]

MAGIC = b"VMFCKPT\x00"
FORMAT_VERSION = 1
LOG_COLUMNS = ("epoch", "train_loss", "val_accuracy", "lr", "beta")

# head hyperparameters each variant accepts (plus "tau" for the spherical ones)
HEAD_KEYS = {
    "standard": (),
    "hyperbolic": ("curvature",),
    "cosine": ("tau",),
    "arcface": ("tau", "margin", "warmup_epochs"),
    "vmf": ("tau", "lam", "train_samples", "eval_samples", "per_instance_weights"),
}


@dataclass
class RunConfig:
    variant: str = "standard"
    dim: int = 3
    hidden: list = field(default_factory=lambda: [120])
    mode: str = "fixed_set"
    out_dir: str = "runs/default"
    train_data: str = ""
    test_data: str = ""
    val_fraction: float = 0.15
    head: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def problems(self) -> list[str]:
        out = []
        if self.variant not in VARIANTS:
            out.append(f"variant must be one of {VARIANTS}")
        if self.dim < 2:
            out.append("dim must be >= 2")
        if any(int(h) < 1 for h in self.hidden):
            out.append("hidden widths must be positive")
        if self.mode not in ("fixed_set", "open_set"):
            out.append("mode must be fixed_set or open_set")
        if not 0 < self.val_fraction < 1:
            out.append("val_fraction must lie in (0, 1)")
        if not self.train_data:
            out.append("train_data is required")
        allowed = HEAD_KEYS.get(self.variant, ())
        for key in self.head:
            if key not in allowed:
                out.append(f"head option {key!r} does not apply to {self.variant}")
        if self.variant == "arcface" and not 0 <= self.head.get("margin", 0.5) < np.pi / 2:
            out.append("arcface margin must lie in [0, pi/2)")
        if self.variant == "vmf" and not 0 < self.head.get("lam", 0.4) < 1:
            out.append("vmf lam must lie in (0, 1)")
        if self.variant == "hyperbolic" and self.head.get("curvature", 1e-5) < 0:
            out.append("curvature must be non-negative")
        return out + self.train.problems()

    def validate(self) -> None:
        issues = self.problems()
        if issues:
            raise ConfigError("invalid config:\n  " + "\n  ".join(issues))

    def to_dict(self) -> dict:
        top = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("head", "train")}
        top["hidden"] = [int(h) for h in self.hidden]
        return {**top, "head": dict(self.head), "train": asdict(self.train)}


def parse_config(text: str) -> RunConfig:
    raw = toml.loads(text)
    train_raw = raw.pop("train", {})
    head = raw.pop("head", {})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    tknown = {f.name for f in fields(TrainConfig)}
    unknown |= {f"train.{k}" for k in set(train_raw) - tknown}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw, head=head, train=TrainConfig(**train_raw))


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    return toml.dumps(cfg.to_dict())


# ------------------------------------------------------------ checkpoints

class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    variant: str
    dim: int
    num_classes: int
    widths: tuple
    hyperparameters: dict
    encoder_state: dict
    head_state: dict
    extra: dict = field(default_factory=dict)

    def build(self) -> tuple[MLPEncoder, LossHead]:
        enc = MLPEncoder(self.widths, np.random.default_rng(0))
        enc.load_state(self.encoder_state)
        head = head_from_state(self.variant, self.dim, self.num_classes,
                               self.hyperparameters, self.head_state)
        return enc, head


def checkpoint_bytes(encoder: MLPEncoder, head: LossHead, extra: dict | None = None) -> bytes:
    """Self-describing binary: magic, header length, JSON header, float64 blocks."""
    hp = dict(head.hyperparameters())
    if getattr(head, "temperature", None) is not None:
        hp["tau"] = float(head.temperature.tau.data)
    blocks, payload = [], []
    for prefix, state in (("encoder", encoder.state()), ("head", head.state())):
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f8")
            blocks.append({"name": f"{prefix}.{name}", "shape": list(arr.shape)})
            payload.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION, "variant": head.variant, "n": head.dim,
        "Y": head.num_classes, "widths": list(encoder.widths), "hyperparameters": hp,
        "blocks": blocks, "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack(">I", len(hbytes)) + hbytes + b"".join(payload)


def save_checkpoint(path, encoder, head, extra=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(encoder, head, extra))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack(">I", buf[8:12])
    header = json.loads(buf[12:12 + hlen])
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {header['format_version']}")
    offset = 12 + hlen
    states = {"encoder": {}, "head": {}}
    for block in header["blocks"]:
        count = int(np.prod(block["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(buf):
            raise CheckpointFormatError(f"truncated block {block['name']} at byte {offset}")
        arr = np.frombuffer(buf[offset:end], dtype="<f8").reshape(block["shape"]).astype(np.float64)
        prefix, name = block["name"].split(".", 1)
        states[prefix][name] = arr
        offset = end
    return Checkpoint(header["variant"], header["n"], header["Y"], tuple(header["widths"]),
                      header["hyperparameters"], states["encoder"], states["head"], header["extra"])


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOG_COLUMNS[1:]])
