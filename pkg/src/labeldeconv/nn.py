"""Dense MLPs with hand-written backward passes, soft-target losses and Adam.

All products go through :func:`matmul`, a BLAS-free contraction whose result for
a given row does not depend on how many other rows are in the batch or on the
BLAS thread count. That is what makes batched inference and seeded training
bit-reproducible.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ShapeError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk->ik", a, b)


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``aᵀ @ b``."""
    return np.einsum("ij,ik->jk", a, b)


def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ bᵀ``."""
    return np.einsum("ij,kj->ik", a, b)


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray | None
    activation: Activation = Activation.IDENTITY

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpParams:
    """A stack of affine layers. An empty stack is the identity map."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer output {a.out_dim} does not feed layer input {b.in_dim}")

    @property
    def is_identity(self) -> bool:
        return not self.layers

    @property
    def in_dim(self) -> int | None:
        return self.layers[0].in_dim if self.layers else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[-1].out_dim if self.layers else None

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (weight, bias per layer)."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([
            Layer(l.weight.copy(), None if l.bias is None else l.bias.copy(), l.activation)
            for l in self.layers
        ])


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    bias: bool = True,
    hidden_activation: Activation = Activation.RELU,
) -> MlpParams:
    """Glorot-uniform weights, zero biases; ReLU between layers, identity output."""
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        b = np.zeros(fan_out) if bias else None
        act = Activation.IDENTITY if k == len(sizes) - 2 else hidden_activation
        layers.append(Layer(w, b, act))
    return MlpParams(layers)


def identity_layer(dim: int) -> MlpParams:
    return MlpParams([Layer(np.eye(dim), None)])


def mlp_forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Returns the output and a cache of ``(layer input, pre-activation)`` pairs."""
    x = np.asarray(x, dtype=np.float64)
    if p.layers and (x.ndim != 2 or x.shape[1] != p.in_dim):
        raise ShapeError(f"input has shape {x.shape}, first layer expects {p.in_dim} columns")
    cache = []
    h = x
    for layer in p.layers:
        z = matmul(h, layer.weight)
        if layer.bias is not None:
            z = z + layer.bias
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
    return h, cache


def mlp_backward(p: MlpParams, cache, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients aligned with ``p.arrays()``, plus the gradient w.r.t. the input."""
    grads: list[np.ndarray] = []
    g = np.asarray(upstream, dtype=np.float64)
    for layer, (h_in, z) in zip(reversed(p.layers), reversed(cache)):
        if layer.activation is Activation.RELU:
            g = g * (z > 0)
        if layer.bias is not None:
            grads.append(g.sum(axis=0))
        grads.append(matmul_tn(h_in, g))
        g = matmul_nt(g, layer.weight)
    grads.reverse()
    return grads, g


class LossKind(str, Enum):
    SOFT_CROSS_ENTROPY = "soft_ce"
    BINARY_CROSS_ENTROPY = "bce"
    MEAN_SQUARED = "mse"


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _rows(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.arange(n)
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if rows.size == 0:
        raise DataError("loss mask selects no rows")
    return rows


def loss_and_grad(kind: LossKind, logits: np.ndarray, target: np.ndarray, mask=None) -> tuple[float, np.ndarray]:
    """Per-row loss summed over columns, averaged over the masked rows.

    Rows outside the mask get zero gradient.
    """
    loss, g_logits, _ = loss_grads(kind, logits, target, mask)
    return loss, g_logits


def loss_grads(kind: LossKind, logits: np.ndarray, target: np.ndarray, mask=None):
    """Like :func:`loss_and_grad` but also returns the gradient w.r.t. the target."""
    kind = LossKind(kind)
    if logits.shape != target.shape:
        raise ShapeError(f"logits {logits.shape} and target {target.shape} differ")
    rows = _rows(mask, logits.shape[0])
    z, t = logits[rows], target[rows]
    m = rows.size
    if kind is LossKind.SOFT_CROSS_ENTROPY:
        ls = log_softmax(z)
        loss = -np.sum(t * ls) / m
        gz = (np.exp(ls) * t.sum(axis=1, keepdims=True) - t) / m
        gt = -ls / m
    elif kind is LossKind.BINARY_CROSS_ENTROPY:
        # log(1 + e^z) computed stably
        softplus = np.logaddexp(0.0, z)
        loss = np.sum(softplus - t * z) / m
        gz = (sigmoid(z) - t) / m
        gt = -z / m
    else:
        diff = z - t
        loss = np.sum(diff * diff) / m
        gz = 2.0 * diff / m
        gt = -gz
    g_logits = np.zeros_like(logits, dtype=np.float64)
    g_target = np.zeros_like(target, dtype=np.float64)
    g_logits[rows] = gz
    g_target[rows] = gt
    return float(loss), g_logits, g_target


@dataclass
class OptimizerState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} and gradient {g.shape} differ")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


_CKPT_MAGIC = b"LDCKPT01"


def save_checkpoint(path: str | Path, arrays: Sequence[np.ndarray]) -> None:
    """Header, then per array its ndim, shape and little-endian float64 data."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.ascontiguousarray(a, dtype="<f8")
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path: str | Path) -> list[np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (count,) = struct.unpack_from("<I", raw, 8)
    off = 12
    out = []
    try:
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            out.append(np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy())
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    return out


def load_into(params: Sequence[np.ndarray], arrays: Sequence[np.ndarray]) -> None:
    if len(params) != len(arrays) or any(p.shape != a.shape for p, a in zip(params, arrays)):
        raise ShapeError("checkpoint layout does not match the model")
    for p, a in zip(params, arrays):
        p[...] = a
