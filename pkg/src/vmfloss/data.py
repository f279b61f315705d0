"""Datasets: IDX files, synthetic vMF mixtures and train/val splits."""
from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import stream
from .vmf import VmfParams, sample

__all__ = [
    "Dataset", "IdxFormatError", "SyntheticSpec", "load_idx", "read_idx", "write_idx",
    "gen_synthetic", "stratified_split", "class_split", "save_npz", "load_dataset",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    partition: str = "shared_classes"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (count, dim) with one label per row")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx, split: str | None = None) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        meta = {k: (np.asarray(v)[idx] if isinstance(v, np.ndarray) and len(v) == len(self) else v)
                for k, v in self.meta.items()}
        return Dataset(self.features[idx], self.labels[idx], split or self.split, self.partition, meta)


# ------------------------------------------------------------------- IDX

def _open(path):
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Raw uint8 array from an IDX file (plain or gzip)."""
    buf = _open(path)
    if len(buf) < 4:
        raise IdxFormatError("file too short for a magic number", len(buf))
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxFormatError("truncated dimension header", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    need = header + math.prod(dims)
    if len(buf) < need:
        raise IdxFormatError(f"truncated data: need {need} bytes, have {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=math.prod(dims), offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Images flattened row-major and scaled to [0, 1]."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(feats, labels.astype(np.int64), split)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX (gzip if the name ends in .gz)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    body = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(body, mtime=0) if path.suffix == ".gz" else body)


# ------------------------------------------------------------- synthetic

@dataclass
class SyntheticSpec:
    n: int = 8
    Y: int = 4
    per_class: int = 200
    kappa_clean: float = 50.0
    ambiguous_fraction: float = 0.0
    kappa_ambiguous: float = 50.0
    seed: int = 0


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Points on S^{n-1} from one vMF per class, plus optional ambiguous points.

    Class directions are uniform on the sphere.  An ambiguous point is drawn
    around the normalized midpoint of two distinct class directions and gets
    one of the two labels at random.  ``meta["ambiguous"]`` flags them.
    """
    if spec.Y < 2 and spec.ambiguous_fraction > 0:
        raise ValueError("ambiguous points need at least two classes")
    if not 0 <= spec.ambiguous_fraction < 1:
        raise ValueError("ambiguous_fraction must lie in [0, 1)")
    rng = stream(spec.seed, "synthetic")
    dirs = rng.standard_normal((spec.Y, spec.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    feats, labels, flags = [], [], []
    n_amb = int(round(spec.per_class * spec.ambiguous_fraction))
    for c in range(spec.Y):
        clean = spec.per_class - n_amb
        feats.append(sample(VmfParams(dirs[c], spec.kappa_clean), rng, clean))
        labels += [c] * clean
        flags += [False] * clean
        for _ in range(n_amb):
            other = rng.choice([k for k in range(spec.Y) if k != c])
            mid = dirs[c] + dirs[other]
            norm = np.linalg.norm(mid)
            mid = mid / norm if norm > 1e-12 else dirs[c]
            feats.append(sample(VmfParams(mid, spec.kappa_ambiguous), rng, 1))
            labels.append(int(rng.choice([c, other])))
            flags.append(True)
    order = rng.permutation(len(labels))
    x = np.concatenate(feats)[order]
    return Dataset(x, np.asarray(labels)[order], meta={"ambiguous": np.asarray(flags)[order],
                                                        "directions": dirs})


# ----------------------------------------------------------------- splits

def stratified_split(labels, fraction: float, rng: np.random.Generator):
    """(train_idx, val_idx) with ``fraction`` of every class held out."""
    labels = np.asarray(labels)
    train, val = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(fraction * idx.size))
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def class_split(labels, fraction: float, rng: np.random.Generator):
    """(train_idx, val_idx) where val holds ``fraction`` of the classes."""
    labels = np.asarray(labels)
    classes = rng.permutation(np.unique(labels))
    k = max(1, int(round(fraction * classes.size)))
    held = np.isin(labels, classes[:k])
    return np.flatnonzero(~held), np.flatnonzero(held)


# --------------------------------------------------------------- storage

def save_npz(path, ds: Dataset) -> None:
    extra = {f"meta_{k}": np.asarray(v) for k, v in ds.meta.items()}
    np.savez(path, features=ds.features, labels=ds.labels,
             info=np.array(json.dumps({"split": ds.split, "partition": ds.partition})), **extra)


def load_dataset(path) -> Dataset:
    """Load an .npz written by :func:`save_npz`, or an IDX pair given as
    ``images_path:labels_path``."""
    path = str(path)
    if ":" in path and not Path(path).exists():
        images, labels = path.split(":", 1)
        return load_idx(images, labels)
    with np.load(path) as f:
        info = json.loads(str(f["info"]))
        meta = {k[5:]: f[k] for k in f.files if k.startswith("meta_")}
        return Dataset(f["features"], f["labels"], info["split"], info["partition"], meta)
