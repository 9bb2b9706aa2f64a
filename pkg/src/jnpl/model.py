"""Fully-connected ReLU classifier with hand-written backprop, SGD with
momentum and weight decay, step learning-rate schedule, and checkpoint I/O.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .probs import softmax

CHECKPOINT_MAGIC = b"JNPLCKPT"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class StaleCache(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("need input width, at least one hidden width, and the class count")
        if min(widths) < 1:
            raise ValueError("layer widths must be positive")
        if widths[-1] < 2:
            raise ValueError("final width is the class count and must be >= 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


@dataclass
class Mlp:
    spec: MlpSpec
    weights: list
    biases: list
    # bumped by every in-place update; caches from older versions are rejected
    version: int = 0

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def from_flat(cls, spec: MlpSpec, flat) -> "Mlp":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ShapeError(f"expected {spec.n_params} parameters, got {flat.shape}")
        weights, biases, i = [], [], 0
        for a, b in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            weights.append(flat[i:i + a * b].reshape(a, b).copy())
            i += a * b
            biases.append(flat[i:i + b].copy())
            i += b
        return cls(spec, weights, biases)


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(spec, weights, biases)


@dataclass
class Cache:
    params: Mlp
    version: int
    inputs: list      # input to each layer
    masks: list       # ReLU masks of hidden layers


def forward(params: Mlp, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.layer_widths[0]:
        raise ShapeError(f"features of shape {x.shape} do not match input width "
                         f"{params.spec.layer_widths[0]}")
    inputs, masks = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            mask = z > 0
            masks.append(mask)
            h = z * mask
        else:
            h = z
    return h, Cache(params, params.version, inputs, masks)


def predict_proba(params: Mlp, x) -> np.ndarray:
    logits, _ = forward(params, x)
    return softmax(logits)


def backward(cache: Cache, grad_logits) -> tuple[list, list]:
    """Parameter gradients for the loss whose logit-gradient is ``grad_logits``.

    Gradients are summed over the batch rows; callers fold any batch averaging
    into ``grad_logits``.
    """
    params = cache.params
    if cache.version != params.version:
        raise StaleCache("parameters changed since this forward pass")
    g = np.asarray(grad_logits, dtype=np.float64)
    n_layers = len(params.weights)
    if g.shape != (cache.inputs[0].shape[0], params.spec.n_classes):
        raise ShapeError(f"grad_logits shape {g.shape} does not match logits")
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * cache.masks[i - 1]
    return gw, gb


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers_w: list = field(default_factory=list)
    buffers_b: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: Mlp, momentum: float = 0.9, weight_decay: float = 1e-4):
        return cls(momentum, weight_decay,
                   [np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])


def sgd_step(params: Mlp, grads, state: OptimizerState, lr: float) -> Mlp:
    """buffer <- m*buffer + grad (+ wd*weight); param <- param - lr*buffer.

    Weight decay is applied to weight matrices only.  Updates in place.
    """
    gw, gb = grads
    for i, w in enumerate(params.weights):
        if gw[i].shape != w.shape or gb[i].shape != params.biases[i].shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        buf = state.buffers_w[i]
        buf *= state.momentum
        buf += gw[i]
        if state.weight_decay:
            buf += state.weight_decay * w
        w -= lr * buf
        bbuf = state.buffers_b[i]
        bbuf *= state.momentum
        bbuf += gb[i]
        params.biases[i] -= lr * bbuf
    params.version += 1
    return params


@dataclass(frozen=True)
class LrSchedule:
    initial: float
    milestones: tuple = ()
    decay_factor: float = 10.0

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        object.__setattr__(self, "milestones", ms)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("milestones must be strictly increasing")

    def lr(self, epoch: int) -> float:
        n = sum(1 for m in self.milestones if epoch >= m)
        return self.initial / self.decay_factor ** n


# Checkpoint layout (all integers little-endian):
#   8 bytes  magic b"JNPLCKPT"
#   u32      format version (1)
#   u32      byte length L of the JSON header
#   L bytes  UTF-8 JSON {"layer_widths": [...], "activation": "relu", "meta": {...}}
#   u64      parameter count P
#   P * f64  flat parameters, layer by layer: W (row-major, in x out) then b

def save_checkpoint(path, params: Mlp, meta: dict | None = None) -> None:
    header = json.dumps({"layer_widths": list(params.spec.layer_widths),
                         "activation": params.spec.activation,
                         "meta": meta or {}}, sort_keys=True).encode("utf-8")
    flat = params.flat().astype("<f8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[Mlp, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    (count,) = struct.unpack_from("<Q", data, 16 + hlen)
    start = 24 + hlen
    if len(data) != start + 8 * count:
        raise ValueError(f"{path}: truncated checkpoint")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=start).astype(np.float64)
    spec = MlpSpec(tuple(header["layer_widths"]), header["activation"])
    return Mlp.from_flat(spec, flat), header.get("meta", {})
