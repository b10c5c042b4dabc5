"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every differentiable operation records a node on the active ``GradTape``;
``backward`` replays the tape in exact reverse execution order and sums
gradients wherever a tensor fans out into several consumers. All math is
double precision so finite-difference checks at 1e-4 are meaningful.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError, ParameterError

Array = np.ndarray

_MAX_AXES = 4
_LOG_CLAMP = 1e-12

_STATE = threading.local()


def _active_tape() -> "GradTape | None":
    return getattr(_STATE, "tape", None)


def _recording_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording for the enclosed block (inference/eval paths)."""
    previous = _recording_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = previous


class Tensor:
    """A dense real value (at most 4 axes) tracked for differentiation.

    ``grad``, when populated, always has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        data = np.asarray(values, dtype=np.float64)
        if data.ndim > _MAX_AXES:
            raise DimensionError(f"tensors support at most {_MAX_AXES} axes, got {data.ndim}")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._tape: GradTape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose2d(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _TapeNode:
    output: Tensor
    inputs: tuple[Tensor, ...]
    pull: object  # Callable[[Array], tuple[Array | None, ...]]


class GradTape:
    """Execution-ordered record of differentiable operations.

    Single-writer: one tape may be active per thread, and it is consumed by
    one backward pass.
    """

    def __init__(self):
        self._nodes: list[_TapeNode] = []
        self._consumed = False

    def __enter__(self) -> "GradTape":
        if _active_tape() is not None:
            raise ContractError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _STATE.tape = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise ContractError("tape already consumed by a previous backward pass")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, shape is {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            input_grads = node.pull(out_grad)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += grad
        self._consumed = True
        self._nodes.clear()


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not recorded on any tape")
    tape.backward(loss)


def _ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _finish(out: Tensor, inputs: tuple[Tensor, ...], pull) -> Tensor:
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and _recording_enabled() and out.requires_grad:
        out._tape = tape
        tape._nodes.append(_TapeNode(out, inputs, pull))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data + b.data)

    def pull(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _finish(out, (a, b), pull)


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data - b.data)

    def pull(g: Array):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _finish(out, (a, b), pull)


def neg(x) -> Tensor:
    x = _ensure(x)
    return _finish(Tensor(-x.data), (x,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data * b.data)

    def pull(g: Array):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _finish(out, (a, b), pull)


def scale(x, factor: float) -> Tensor:
    x = _ensure(x)
    factor = float(factor)
    return _finish(Tensor(x.data * factor), (x,), lambda g: (g * factor,))


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def pull(g: Array):
        return g @ b.data.T, a.data.T @ g

    return _finish(out, (a, b), pull)


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def pull(g: Array):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _finish(out, (x,), pull)


def reduce_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _ensure(x)
    out = Tensor(x.data.reshape(shape))

    def pull(g: Array):
        return (g.reshape(x.data.shape),)

    return _finish(out, (x,), pull)


def transpose2d(x) -> Tensor:
    x = _ensure(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose2d needs a 2D tensor, got {x.shape}")
    return _finish(Tensor(x.data.T.copy()), (x,), lambda g: (g.T,))


def take(x, index) -> Tensor:
    """Basic/fancy indexing with scatter-add backward."""
    x = _ensure(x)
    out = Tensor(np.asarray(x.data[index], dtype=np.float64))

    def pull(g: Array):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _finish(out, (x,), pull)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_ensure(p) for p in parts]
    if not parts:
        raise ContractError("concat needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    offsets = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def pull(g: Array):
        return tuple(np.split(g, offsets, axis=axis))

    return _finish(out, tuple(parts), pull)


def gather_rows(table, indices) -> Tensor:
    """Select rows of a 2D table by integer index; backward scatter-adds."""
    table = _ensure(table)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2D table, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[idx])

    def pull(g: Array):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _finish(out, (table,), pull)


# ---------------------------------------------------------------------------
# activations and losses


def relu(x) -> Tensor:
    x = _ensure(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def pull(g: Array):
        return (g * (x.data > 0.0),)  # subgradient at 0 is 0

    return _finish(out, (x,), pull)


def sigmoid(x) -> Tensor:
    x = _ensure(x)
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s)

    def pull(g: Array):
        return (g * s * (1.0 - s),)

    return _finish(out, (x,), pull)


def tanh_act(x) -> Tensor:
    x = _ensure(x)
    t = np.tanh(x.data)
    out = Tensor(t)

    def pull(g: Array):
        return (g * (1.0 - t * t),)

    return _finish(out, (x,), pull)


def softmax(x) -> Tensor:
    """Softmax over a 1D tensor, computed with max-subtraction."""
    x = _ensure(x)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError(f"softmax needs a non-empty 1D tensor, got {x.shape}")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    p = e / e.sum()
    out = Tensor(p)

    def pull(g: Array):
        return (p * (g - float(g @ p)),)

    return _finish(out, (x,), pull)


def cross_entropy(pred_probs, label: int) -> Tensor:
    """Negative log-probability of ``label``; probabilities clamp at 1e-12."""
    pred_probs = _ensure(pred_probs)
    if pred_probs.ndim != 1:
        raise DimensionError(f"cross_entropy needs a 1D distribution, got {pred_probs.shape}")
    label = int(label)
    if not 0 <= label < pred_probs.size:
        raise IndexError(f"label {label} outside [0, {pred_probs.size})")
    p = float(pred_probs.data[label])
    clamped = max(p, _LOG_CLAMP)
    out = Tensor(-np.log(clamped))

    def pull(g: Array):
        grad = np.zeros_like(pred_probs.data)
        if p > _LOG_CLAMP:
            grad[label] = -float(g) / p
        return (grad,)

    return _finish(out, (pred_probs,), pull)


# ---------------------------------------------------------------------------
# structured layers


def _pair(value, name: str) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ParameterError(f"{name} needs one or two entries, got {value!r}")
        return int(value[0]), int(value[1])
    return int(value), int(value)


def conv2d_dilated(x, kernels, dilation: int = 1, stride=(1, 1), zero_padding=(0, 0)) -> Tensor:
    """Dilated cross-correlation of a C_in x H x W input with C_out kernels.

    Taps are spaced ``dilation`` apart; output extents follow
    floor((padded - effective) / stride) + 1 per axis.
    """
    x, kernels = _ensure(x), _ensure(kernels)
    if x.ndim != 3:
        raise DimensionError(f"conv input must be C x H x W, got {x.shape}")
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be C_out x C_in x kh x kw, got {kernels.shape}")
    c_out, c_in, kh, kw = kernels.shape
    if c_in != x.shape[0]:
        raise DimensionError(f"kernel expects {c_in} input channels, input has {x.shape[0]}")
    d = int(dilation)
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(zero_padding, "zero_padding")
    if d < 1:
        raise ParameterError(f"dilation must be positive, got {d}")
    if sh < 1 or sw < 1:
        raise ParameterError(f"strides must be positive, got {(sh, sw)}")
    if ph < 0 or pw < 0:
        raise ParameterError(f"padding must be non-negative, got {(ph, pw)}")

    padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    _, hp, wp = padded.shape
    eff_h, eff_w = (kh - 1) * d + 1, (kw - 1) * d + 1
    if eff_h > hp or eff_w > wp:
        raise DimensionError(
            f"effective kernel {eff_h}x{eff_w} exceeds padded input {hp}x{wp}"
        )
    out_h = (hp - eff_h) // sh + 1
    out_w = (wp - eff_w) // sw + 1

    row_idx = (np.arange(out_h) * sh)[:, None] + np.arange(kh) * d  # (out_h, kh)
    col_idx = (np.arange(out_w) * sw)[:, None] + np.arange(kw) * d  # (out_w, kw)
    patches = padded[:, row_idx[:, None, :, None], col_idx[None, :, None, :]]
    out = Tensor(np.einsum("cijuv,ocuv->oij", patches, kernels.data, optimize=True))

    def pull(g: Array):
        d_kernels = np.einsum("cijuv,oij->ocuv", patches, g, optimize=True)
        d_patches = np.einsum("ocuv,oij->cijuv", kernels.data, g, optimize=True)
        d_padded = np.zeros_like(padded)
        chan = np.arange(padded.shape[0])[:, None, None, None, None]
        np.add.at(
            d_padded,
            (chan, row_idx[None, :, None, :, None], col_idx[None, None, :, None, :]),
            d_patches,
        )
        h, w = x.shape[1], x.shape[2]
        return d_padded[:, ph:ph + h, pw:pw + w], d_kernels

    return _finish(out, (x, kernels), pull)


@dataclass
class BatchNormState:
    """Running statistics owned by one normalization layer."""

    mean: Array
    var: Array

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(mean=np.zeros(channels), var=np.ones(channels))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.mean.copy(), self.var.copy())


def batch_norm(
    x,
    gamma,
    beta,
    eps: float = 1e-5,
    mode: str = "train",
    state: BatchNormState | None = None,
    momentum: float = 0.1,
) -> Tensor:
    """Channel normalization of a B x C x H x W tensor.

    Train mode normalizes by batch statistics (population variance) and, when
    ``state`` is given, folds them into the running stats with ``momentum``.
    Eval mode normalizes by the running stats.
    """
    x, gamma, beta = _ensure(x), _ensure(gamma), _ensure(beta)
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 4:
        raise DimensionError(f"batch_norm input must be B x C x H x W, got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"gamma/beta must have shape ({channels},), got {gamma.shape} and {beta.shape}"
        )
    axes = (0, 2, 3)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state is not None:
            state.mean = (1.0 - momentum) * state.mean + momentum * mean
            state.var = (1.0 - momentum) * state.var + momentum * var
    else:
        if state is None:
            raise ParameterError("eval mode requires running statistics")
        mean, var = state.mean, state.var

    shape = (1, channels, 1, 1)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = Tensor(gamma.data.reshape(shape) * x_hat + beta.data.reshape(shape))

    def pull(g: Array):
        d_gamma = (g * x_hat).sum(axis=axes)
        d_beta = g.sum(axis=axes)
        d_hat = g * gamma.data.reshape(shape)
        if mode == "train":
            n = x.shape[0] * x.shape[2] * x.shape[3]
            d_x = (inv_std.reshape(shape) / n) * (
                n * d_hat
                - d_hat.sum(axis=axes, keepdims=True)
                - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            d_x = d_hat * inv_std.reshape(shape)
        return d_x, d_gamma, d_beta

    return _finish(out, (x, gamma, beta), pull)
