"""Small float64 reverse-mode autodiff, the encoder/classifier model and Adam.

Everything is numpy-backed. A :class:`Tape` owns one leaf :class:`Tensor`
per model parameter; ops applied to tensors record their parents so that
:func:`backward` can walk the graph in reverse topological order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Input or parameter shapes do not line up."""


class NumericInputError(ValueError):
    """Non-finite values where finite ones are required."""


class GraphError(RuntimeError):
    """The loss was not produced by recorded tensor ops."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# Tensor and ops
# ---------------------------------------------------------------------------


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return len(self.data)

    def __float__(self):
        return float(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    parents = tuple(p for p in parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents, backward_fn)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if a.data.ndim > 2 and b.data.ndim == 2:
            # batched left operand against a shared matrix
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a, clamp: float = 0.0) -> Tensor:
    """Natural log; entries below ``clamp`` are clamped and get zero gradient."""
    a = as_tensor(a)
    safe = np.maximum(a.data, clamp) if clamp > 0 else a.data
    live = a.data >= clamp

    def bw(g):
        return (np.where(live, g / safe, 0.0),)

    return _make(np.log(safe), (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take(a, idx) -> Tensor:
    """``a[idx]`` with scatter-add backward (handles repeated indices)."""
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bw)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw)


def pad2d(a, pad: int) -> Tensor:
    """Zero-pad the last two axes by ``pad`` on every side."""
    a = as_tensor(a)
    width = [(0, 0)] * (a.data.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.data, width)

    def bw(g):
        return (g[..., pad : g.shape[-2] - pad, pad : g.shape[-1] - pad],)

    return _make(out, (a,), bw)


def logsumexp(a, axis=-1, mask=None) -> Tensor:
    """Stable log-sum-exp along ``axis``; entries where ``mask`` is False are excluded."""
    a = as_tensor(a)
    x = a.data if mask is None else np.where(mask, a.data, -np.inf)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)

    def bw(g):
        return (np.expand_dims(g, axis) * e / s,)

    return _make(out, (a,), bw)


def _softmax_array(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits):
    """Row-wise softmax with max subtraction.

    Accepts an array (returns an array) or a Tensor (returns a recorded Tensor).
    """
    if isinstance(logits, Tensor):
        out = _softmax_array(logits.data)

        def bw(g):
            return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

        return _make(out, (logits,), bw)
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericInputError("softmax input contains non-finite values")
    return _softmax_array(x)


ACTIVATIONS = {"tanh": tanh, "relu": relu}


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple[int, ...]
    n_classes: int
    hidden: int = 64
    embed_dim: int = 32
    activation: str = "tanh"
    conv_channels: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "embed_dim": self.embed_dim,
            "activation": self.activation,
            "conv_channels": list(self.conv_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Architecture:
        return cls(
            input_shape=tuple(d["input_shape"]),
            n_classes=int(d["n_classes"]),
            hidden=int(d["hidden"]),
            embed_dim=int(d["embed_dim"]),
            activation=d["activation"],
            conv_channels=tuple(d.get("conv_channels", ())),
        )

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        if self.conv_channels:
            if len(self.input_shape) == 2:
                cin, h, w = 1, *self.input_shape
            elif len(self.input_shape) == 3:
                cin, h, w = self.input_shape
            else:
                raise ShapeError("conv front-end needs (H, W) or (C, H, W) inputs")
            for k, cout in enumerate(self.conv_channels):
                shapes.append((f"conv{k}.weight", (cin * 9, cout)))
                shapes.append((f"conv{k}.bias", (cout,)))
                cin = cout
            flat = cin * h * w
        else:
            flat = int(np.prod(self.input_shape))
        shapes += [
            ("enc1.weight", (flat, self.hidden)),
            ("enc1.bias", (self.hidden,)),
            ("enc2.weight", (self.hidden, self.embed_dim)),
            ("enc2.bias", (self.embed_dim,)),
            ("head.weight", (self.embed_dim, self.n_classes)),
            ("head.bias", (self.n_classes,)),
        ]
        return shapes


@dataclass
class ModelParams:
    arch: Architecture
    names: list[str]
    values: list[np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[self.names.index(name)]

    def __len__(self):
        return len(self.values)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.values))

    def copy(self) -> ModelParams:
        return ModelParams(self.arch, list(self.names), [v.copy() for v in self.values])

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values])


def init_params(arch: Architecture, rng: np.random.Generator | int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    names, values = [], []
    for name, shape in arch.layer_shapes():
        if name.endswith("bias"):
            v = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            v = rng.uniform(-limit, limit, size=shape)
        names.append(name)
        values.append(v)
    return ModelParams(arch, names, values)


def zero_params(arch: Architecture) -> ModelParams:
    shapes = arch.layer_shapes()
    return ModelParams(arch, [n for n, _ in shapes], [np.zeros(s) for _, s in shapes])


class Tape:
    """Leaf tensors for one set of parameters; pass to :func:`forward` to record."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.leaves = [Tensor(v, requires_grad=True) for v in params.values]

    def __getitem__(self, name: str) -> Tensor:
        return self.leaves[self.params.names.index(name)]


@dataclass
class ForwardOutput:
    embedding: Tensor | np.ndarray
    logits: Tensor | np.ndarray
    probs: Tensor | np.ndarray


def _conv3x3(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded 3x3 convolution on (N, C, H, W) via patch gather + matmul."""
    n, c, h, w = x.shape
    xp = pad2d(x, 1)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    di, dj = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    rows = ii.reshape(-1, 1) + di.reshape(1, -1)  # (H*W, 9)
    cols = jj.reshape(-1, 1) + dj.reshape(1, -1)
    patches = take(xp, (slice(None), slice(None), rows, cols))  # (N, C, H*W, 9)
    patches = reshape(transpose(patches, (0, 2, 1, 3)), (n, h * w, c * 9))
    out = add(matmul(patches, weight), bias)  # (N, H*W, Cout)
    return reshape(transpose(out, (0, 2, 1)), (n, weight.shape[1], h, w))


def forward(params: ModelParams, batch, tape: Tape | None = None) -> ForwardOutput:
    """Run the encoder and classifier head on a batch of samples.

    With ``tape`` the outputs are Tensors connected to the tape leaves;
    without it they are plain arrays.
    """
    arch = params.arch
    x = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=np.float64)
    if x.ndim != len(arch.input_shape) + 1 or tuple(x.shape[1:]) != tuple(arch.input_shape):
        raise ShapeError(
            f"expected batch of shape (N, {', '.join(map(str, arch.input_shape))}), got {x.shape}"
        )
    if tape is None:
        get = lambda name: Tensor(params[name])  # noqa: E731
    else:
        if tape.params is not params:
            raise GraphError("tape was built for a different parameter set")
        get = tape.__getitem__
    act = ACTIVATIONS[arch.activation]
    n = x.shape[0]
    h = Tensor(x)
    if arch.conv_channels:
        if x.ndim == 3:
            h = reshape(h, (n, 1, *x.shape[1:]))
        for k in range(len(arch.conv_channels)):
            h = relu(_conv3x3(h, get(f"conv{k}.weight"), get(f"conv{k}.bias")))
    h = reshape(h, (n, int(np.prod(h.shape[1:]))))
    h = act(add(matmul(h, get("enc1.weight")), get("enc1.bias")))
    emb = act(add(matmul(h, get("enc2.weight")), get("enc2.bias")))
    logits = add(matmul(emb, get("head.weight")), get("head.bias"))
    probs = softmax(logits)
    if tape is None:
        return ForwardOutput(emb.data, logits.data, probs.data)
    return ForwardOutput(emb, logits, probs)


def predict_proba(params: ModelParams, batch) -> np.ndarray:
    return forward(params, batch).probs


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(tape: Tape, loss: Tensor) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every tape leaf.

    Leaves the loss does not depend on get zero gradient.
    """
    if not isinstance(loss, Tensor):
        raise GraphError(f"loss must be a Tensor produced by recorded ops, got {type(loss).__name__}")
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(leaf): np.zeros_like(leaf.data) for leaf in tape.leaves}
    if loss.requires_grad:
        acc = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topo(loss)):
            g = acc.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                if id(node) in grads:
                    grads[id(node)] += g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad:
                    continue
                if id(parent) in acc:
                    acc[id(parent)] = acc[id(parent)] + pg
                else:
                    acc[id(parent)] = pg
    return [grads[id(leaf)] for leaf in tape.leaves]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: ModelParams, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        lr, beta1, beta2, eps, 0,
        [np.zeros_like(p) for p in params.values],
        [np.zeros_like(p) for p in params.values],
    )


def adam_update(params: ModelParams, grads, state: AdamState) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam step. Inputs are left untouched."""
    if len(grads) != len(params.values):
        raise ShapeError(f"{len(grads)} gradients for {len(params.values)} parameters")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_vals, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.values, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_vals.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return ModelParams(params.arch, list(params.names), new_vals), new_state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ADACMCKP"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(params: ModelParams) -> bytes:
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": params.arch.to_dict(),
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in zip(params.names, params.values)],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.values)
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes + payload


def save_checkpoint(params: ModelParams, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(params))
    return path


def parse_checkpoint(raw: bytes) -> ModelParams:
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic at byte 0: not an adacm checkpoint")
    if len(raw) < 16:
        raise CheckpointError("truncated header at byte 8")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte 8")
    try:
        header = json.loads(raw[16 : 16 + hlen])
        arch = Architecture.from_dict(header["arch"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt header at byte 16: {exc}") from None
    offset = 16 + hlen
    names, values = [], []
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"payload for {spec['name']!r} truncated at byte {offset}")
        values.append(np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64))
        names.append(spec["name"])
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes at byte {offset}")
    expected = arch.layer_shapes()
    if [(n, tuple(v.shape)) for n, v in zip(names, values)] != [(n, tuple(s)) for n, s in expected]:
        raise CheckpointError("tensor list does not match the recorded architecture")
    return ModelParams(arch, names, values)


def load_checkpoint(path) -> ModelParams:
    return parse_checkpoint(Path(path).read_bytes())
