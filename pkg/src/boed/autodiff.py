"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation on :class:`Tensor` records its parents and a
closure that pushes gradients backwards. The graph is rebuilt on every forward
pass, which keeps variable-length history encodings trivial. Everything is
float64 and single-threaded numpy, so repeated forward/backward passes are
bitwise identical.

Also holds the MLP/Adam building blocks and the binary checkpoint format used
to pass trained policies from the trainer to the evaluator and the service.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "MlpSpec",
    "Mlp",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CorruptCheckpointError",
    "ChecksumMismatchError",
    "UnsupportedVersionError",
]

# Validated on every op result; small arrays make the cost negligible and a
# non-finite value deep in a training loss is otherwise hard to localize.
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """An operation produced a NaN or infinity."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph: an array plus backward bookkeeping."""

    __slots__ = ("data", "grad", "_parents", "_backward", "op")

    def __init__(self, data, parents: tuple["Tensor", ...] = (), op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = None
        self.op = op
        if CHECK_FINITE and parents and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values produced by op '{op}'")

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # -- graph mechanics ---------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar output into every ancestor."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar output, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data + other.data, (self, other), "add")

        def back():
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad += _unbroadcast(out.grad, other.data.shape)

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,), "neg")

        def back():
            self.grad -= out.grad

        out._backward = back
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data * other.data, (self, other), "mul")

        def back():
            self.grad += _unbroadcast(out.grad * other.data, self.data.shape)
            other.grad += _unbroadcast(out.grad * self.data, other.data.shape)

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data / other.data, (self, other), "div")

        def back():
            self.grad += _unbroadcast(out.grad / other.data, self.data.shape)
            other.grad += _unbroadcast(-out.grad * self.data / other.data**2, other.data.shape)

        out._backward = back
        return out

    def __matmul__(self, other):
        other = self._coerce(other)
        if self.data.ndim < 1 or other.data.ndim < 1:
            raise ValueError("matmul requires at least 1-d operands")
        if self.data.shape[-1] != other.data.shape[-2 if other.data.ndim > 1 else 0]:
            raise ValueError(
                f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out = Tensor(self.data @ other.data, (self, other), "matmul")

        def back():
            a, b, g = self.data, other.data, out.grad
            self.grad += _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
            other.grad += _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)

        out._backward = back
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,), "slice")

        def back():
            np.add.at(self.grad, idx, out.grad)

        out._backward = back
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,), "reshape")

        def back():
            self.grad += out.grad.reshape(self.data.shape)

        out._backward = back
        return out

    # -- nonlinearities ----------------------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,), "relu")

        def back():
            self.grad += out.grad * (self.data > 0)

        out._backward = back
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = Tensor(t, (self,), "tanh")

        def back():
            self.grad += out.grad * (1.0 - t * t)

        out._backward = back
        return out

    def exp(self):
        e = np.exp(self.data)
        out = Tensor(e, (self,), "exp")

        def back():
            self.grad += out.grad * e

        out._backward = back
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,), "log")

        def back():
            self.grad += out.grad / self.data

        out._backward = back
        return out

    def softplus(self):
        # log(1 + e^x) computed as max(x, 0) + log1p(e^{-|x|}) for overflow safety
        s = np.maximum(self.data, 0.0) + np.log1p(np.exp(-np.abs(self.data)))
        out = Tensor(s, (self,), "softplus")

        def back():
            self.grad += out.grad / (1.0 + np.exp(-self.data))

        out._backward = back
        return out

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def back():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.data.shape)

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def logsumexp(self, axis=-1, keepdims=False):
        """Overflow-safe log-sum-exp along `axis`."""
        m = np.max(self.data, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        s = np.sum(np.exp(self.data - m), axis=axis, keepdims=True)
        val = m + np.log(s)
        softmax = np.exp(self.data - val)
        if not keepdims:
            val = np.squeeze(val, axis=axis)
        out = Tensor(val, (self,), "logsumexp")

        def back():
            g = out.grad if keepdims else np.expand_dims(out.grad, axis)
            self.grad += g * softmax

        out._backward = back
        return out

    def clamp(self, lo: float, hi: float):
        """Hard clip; gradient is zero outside [lo, hi] (straight-through inside)."""
        out = Tensor(np.clip(self.data, lo, hi), (self,), "clamp")

        def back():
            inside = (self.data >= lo) & (self.data <= hi)
            self.grad += out.grad * inside

        out._backward = back
        return out

    def cumsum(self, axis: int):
        out = Tensor(np.cumsum(self.data, axis=axis), (self,), "cumsum")

        def back():
            g = np.flip(np.cumsum(np.flip(out.grad, axis=axis), axis=axis), axis=axis)
            self.grad += g

        out._backward = back
        return out


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), tuple(tensors), "concat")
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def back():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            t.grad += out.grad[tuple(idx)]

    out._backward = back
    return out


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def gaussian_log_pdf(x: Tensor, mean: Tensor, log_std: Tensor) -> Tensor:
    """Elementwise log N(x; mean, exp(log_std)^2) as a fused primitive.

    Fusing keeps the gradient exact and avoids an exp/log round trip in the
    likelihood-bearing losses.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    mean = mean if isinstance(mean, Tensor) else Tensor(mean)
    log_std = log_std if isinstance(log_std, Tensor) else Tensor(log_std)
    inv_var = np.exp(-2.0 * log_std.data)
    diff = x.data - mean.data
    val = -0.5 * diff * diff * inv_var - log_std.data - _LOG_SQRT_2PI
    out = Tensor(val, (x, mean, log_std), "gaussian_log_pdf")

    def back():
        g = out.grad
        dx = -diff * inv_var * g
        x.grad += _unbroadcast(dx, x.data.shape)
        mean.grad += _unbroadcast(-dx, mean.data.shape)
        dls = (diff * diff * inv_var - 1.0) * g
        log_std.grad += _unbroadcast(dls, log_std.data.shape)

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# Multilayer perceptron


@dataclass
class MlpSpec:
    input_dim: int
    hidden: list[int]
    activation: str  # relu | tanh | none
    output_dim: int

    def __post_init__(self):
        if self.activation not in ("relu", "tanh", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        for w in [self.input_dim, *self.hidden, self.output_dim]:
            if w < 1:
                raise ValueError("all layer widths must be >= 1")


class Mlp:
    """Fully connected net; weights Glorot-uniform, biases zero, seeded."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator, prefix: str = "mlp"):
        self.spec = spec
        self.prefix = prefix
        self.params: dict[str, Tensor] = {}
        widths = [spec.input_dim, *spec.hidden, spec.output_dim]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params[f"{prefix}.w{i}"] = Tensor(w)
            self.params[f"{prefix}.b{i}"] = Tensor(np.zeros(fan_out))
        self.n_layers = len(widths) - 1

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[f"{self.prefix}.w{i}"] + self.params[f"{self.prefix}.b{i}"]
            if i < self.n_layers - 1:
                if self.spec.activation == "relu":
                    h = h.relu()
                elif self.spec.activation == "tanh":
                    h = h.tanh()
        return h

    __call__ = forward


def parameters_of(*modules) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for m in modules:
        out.update(m.params)
    return out


# ---------------------------------------------------------------------------
# Adam optimizer


@dataclass
class Adam:
    params: dict[str, Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Standard bias-corrected Adam update, in place.

        With grads omitted, uses each parameter's accumulated `.grad`.
        """
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = grads[name] if grads is not None else p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoint format
#
# magic "BOEDCKPT" | version u32 | meta_len u32 + UTF-8 JSON | count u32 |
# per tensor: name_len u16, name, rank u8, dims u32*rank, payload f64 LE |
# crc32 u32 of everything prior. All integers little-endian.

_MAGIC = b"BOEDCKPT"
_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CorruptCheckpointError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict) -> None:
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"refusing to save non-finite tensor {name!r}")
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<I", _VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        name_b = name.encode("utf-8")
        buf += struct.pack("<H", len(name_b))
        buf += name_b
        buf += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            buf += struct.pack("<I", d)
        buf += arr.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("corrupt checkpoint: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(_MAGIC) + 8:
        raise CorruptCheckpointError("corrupt checkpoint: file too short")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatchError("checkpoint digest mismatch")
    r = _Reader(data[:-4])
    if r.take(len(_MAGIC)) != _MAGIC:
        raise CorruptCheckpointError("corrupt checkpoint: bad magic bytes")
    version = r.u("<I")
    if version != _VERSION:
        raise UnsupportedVersionError(f"unknown checkpoint version {version}")
    meta_len = r.u("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"corrupt checkpoint: bad metadata ({e})") from e
    count = r.u("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u("<H")
        name = r.take(name_len).decode("utf-8")
        rank = r.u("<B")
        dims = tuple(r.u("<I") for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(n * 8)
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if r.pos != len(r.data):
        raise CorruptCheckpointError("corrupt checkpoint: trailing bytes")
    return params, meta
