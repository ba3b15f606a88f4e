"""Sequence-classification tasks, spike-latency encoding and the mode-accuracy metric."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "TaskSpec",
    "Dataset",
    "spike_latency_encode",
    "spike_latency_raster",
    "rowsum_label",
    "synthetic_generate",
    "read_idx",
    "write_idx",
    "mode_prediction",
    "mode_accuracy",
]

TASK_KINDS = ("synthetic_rowsum", "synthetic_delayed_recall", "spike_latency_images")


@dataclass
class TaskSpec:
    kind: str = "synthetic_rowsum"
    T: int = 20
    channels: int = 4
    classes: int = 4
    n_train: int = 512
    n_val: int = 128
    n_test: int = 256
    theta: float = 0.2
    tau_eff: float = 50.0
    input_repeat: bool = False
    idx_images: str | None = None
    idx_labels: str | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}")
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.T < 2:
            raise ConfigError("need T >= 2")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("every split needs at least one sample")
        if self.kind == "synthetic_delayed_recall" and self.channels < self.classes + 1:
            raise ConfigError("delayed recall needs channels >= classes + 1 (symbols plus a query flag)")
        if self.kind == "spike_latency_images" and not (self.idx_images and self.idx_labels):
            raise ConfigError("spike latency images need idx_images and idx_labels paths")

    @property
    def steps(self) -> int:
        return 2 * self.T if self.input_repeat else self.T


@dataclass
class Dataset:
    """``inputs`` is ``(N, T, C)``, ``labels`` is ``(N,)``."""

    inputs: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, size: int, order: np.ndarray | None = None):
        """Yield ``(inputs (T, B, C), labels (B,))`` in the given order."""
        idx = np.arange(len(self)) if order is None else order
        for i in range(0, len(idx), size):
            j = idx[i:i + size]
            yield np.ascontiguousarray(self.inputs[j].transpose(1, 0, 2)), self.labels[j]


# -------------------------------------------------------- spike latency

def spike_latency_encode(x: float, theta: float = 0.2, tau_eff: float = 50.0, T: int = 50) -> int | None:
    """Spike index for intensity ``x``; brighter pixels fire earlier, dim ones never."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"intensity {x} outside [0, 1]")
    if x <= theta:
        return None
    return int(min(max(round(tau_eff * math.log(x / (x - theta))), 0), T - 1))


def spike_latency_raster(images: np.ndarray, theta: float = 0.2, tau_eff: float = 50.0,
                         T: int = 50) -> np.ndarray:
    """Flattened images in ``[0, 1]`` to ``(N, T, pixels)`` rasters, one spike per pixel at most."""
    x = np.asarray(images, dtype=float).reshape(len(images), -1)
    out = np.zeros((x.shape[0], T, x.shape[1]))
    on = x > theta
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(on, np.round(tau_eff * np.log(x / np.where(on, x - theta, 1.0))), 0)
    t = np.clip(t, 0, T - 1).astype(int)
    n_idx, p_idx = np.nonzero(on)
    out[n_idx, t[n_idx, p_idx], p_idx] = 1.0
    return out


# ------------------------------------------------------------- IDX files

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise ConfigError(f"{path}: not an IDX file")
    dtype, ndim = data[2], data[3]
    if dtype not in _IDX_TYPES:
        raise ConfigError(f"{path}: unknown IDX element type {dtype:#x}")
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=_IDX_TYPES[dtype], offset=4 + 4 * ndim)
    if arr.size != int(np.prod(dims)):
        raise ConfigError(f"{path}: payload does not match dims {dims}")
    return arr.reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, 0x08, a.ndim]))
        fh.write(struct.pack(">" + "I" * a.ndim, *a.shape))
        fh.write(a.tobytes())


# ---------------------------------------------------------- generators

def rowsum_label(x: np.ndarray, edges: np.ndarray) -> int:
    """Bucket of the total input mass; ``edges`` are the interior bucket boundaries."""
    return int(np.searchsorted(edges, float(np.sum(x)), side="right"))


def _split(spec: TaskSpec, inputs, labels, meta) -> dict[str, Dataset]:
    if spec.input_repeat:
        inputs = np.repeat(inputs, 2, axis=1)
    a, b = spec.n_train, spec.n_train + spec.n_val
    return {
        "train": Dataset(inputs[:a], labels[:a], meta),
        "val": Dataset(inputs[a:b], labels[a:b], meta),
        "test": Dataset(inputs[b:], labels[b:], meta),
    }


def synthetic_generate(spec: TaskSpec, rng: np.random.Generator) -> dict[str, Dataset]:
    n = spec.n_train + spec.n_val + spec.n_test
    if spec.kind == "synthetic_rowsum":
        x = rng.uniform(0.0, 1.0, size=(n, spec.T, spec.channels))
        sums = x.sum(axis=(1, 2))
        edges = np.quantile(sums, np.arange(1, spec.classes) / spec.classes)
        y = np.searchsorted(edges, sums, side="right")
        return _split(spec, x, y, {"edges": edges.tolist()})
    if spec.kind == "synthetic_delayed_recall":
        k = spec.classes
        y = rng.permutation(np.resize(np.arange(k), n))
        x = np.zeros((n, spec.T, spec.channels))
        if spec.channels > k + 1:
            x[:, :, k + 1:] = rng.uniform(0.0, 1.0, size=(n, spec.T, spec.channels - k - 1))
        x[np.arange(n), 0, y] = 1.0
        x[:, spec.T - 1, k] = 1.0
        return _split(spec, x, y, {})
    images = read_idx(spec.idx_images)
    labels = read_idx(spec.idx_labels).astype(int)
    if len(images) < n or len(labels) < n:
        raise ConfigError(f"IDX files hold {len(images)} samples, the splits need {n}")
    order = rng.permutation(len(images))[:n]
    pix = images[order].reshape(n, -1).astype(float) / 255.0
    if pix.shape[1] != spec.channels:
        raise ConfigError(f"images have {pix.shape[1]} pixels, task declares {spec.channels} channels")
    x = spike_latency_raster(pix, spec.theta, spec.tau_eff, spec.T)
    y = labels[order]
    if y.max() >= spec.classes:
        raise ConfigError("labels exceed the declared class count")
    return _split(spec, x, y, {})


# ------------------------------------------------------------- metrics

def mode_prediction(seq, rule: str = "frequency_then_run") -> int:
    """Class picked from a per-step argmax sequence.

    ``frequency_then_run``: most frequent class, ties broken by the longest
    consecutive run, then by the lowest index. ``run_then_frequency`` swaps the
    first two keys.

    >>> mode_prediction([0, 1, 1, 0])
    1
    >>> mode_prediction([0, 1, 0, 1])
    0
    """
    seq = [int(s) for s in seq]
    if not seq:
        raise ValueError("empty sequence")
    freq: dict[int, int] = {}
    run: dict[int, int] = {}
    cur, length = None, 0
    for s in seq:
        length = length + 1 if s == cur else 1
        cur = s
        freq[s] = freq.get(s, 0) + 1
        run[s] = max(run.get(s, 0), length)
    if rule == "frequency_then_run":
        key = lambda c: (-freq[c], -run[c], c)
    elif rule == "run_then_frequency":
        key = lambda c: (-run[c], -freq[c], c)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return min(freq, key=key)


def mode_accuracy(logits: np.ndarray, labels, rule: str = "frequency_then_run") -> np.ndarray:
    """0/1 per sample; ``logits`` is ``(T, K)`` for one sample or ``(T, B, K)``."""
    z = np.asarray(logits)
    if z.ndim == 2:
        z = z[:, None, :]
    lab = np.atleast_1d(np.asarray(labels))
    arg = np.argmax(z, axis=-1)
    return np.array([int(mode_prediction(arg[:, b], rule) == lab[b]) for b in range(z.shape[1])])
