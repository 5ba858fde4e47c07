"""Dense tensors with tape-based reverse-mode autodiff, plus AdamW.

Only the handful of ops the transformer receiver needs are provided. Every
op checks its output for non-finite values and raises ``NonFiniteError``
naming the op, so a NaN never propagates silently into training.

Arithmetic is 32-bit by default. ``precision(np.float64)`` switches newly
created tensors to 64-bit, which is used for finite-difference checks. The
precision and ``no_grad`` switches are per thread, so evaluation threads
sharing one frozen model cannot disturb each other or the caller.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class _Mode(threading.local):
    dtype = np.float32
    grad_enabled = True


_MODE = _Mode()


class ContractError(ValueError):
    """Raised when an op is called with arguments that violate its contract."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf from its inputs."""


def default_dtype():
    return _MODE.dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors in this thread."""
    prev, _MODE.dtype = _MODE.dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _MODE.dtype = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread (inference mode)."""
    prev, _MODE.grad_enabled = _MODE.grad_enabled, False
    try:
        yield
    finally:
        _MODE.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, dtype=None):
        arr = np.asarray(data, dtype=dtype or _MODE.dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _MODE.grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = parents if needs else ()
    out._backward = grad_fn if needs else None
    return out


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape`` (suffix broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    g = grad.sum(axis=tuple(range(lead))) if lead > 0 else grad
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_suffix(a: Tensor, b: Tensor, op: str):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sb, sa) if len(sb) <= len(sa) else (sa, sb)
    tail = long_[len(long_) - len(short):]
    if any(s != t and s != 1 for s, t in zip(short, tail)):
        raise ContractError(f"{op}: incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------- pointwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.data.dtype), "relu", (a,),
                 lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, "sigmoid", (a,), lambda g: (g * s * (1 - s),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out.astype(x.dtype), "softplus", (a,), lambda g: (g * _sigmoid(x),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)


# ---------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.data.sum(), dtype=a.data.dtype), "sum", (a,),
                 lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _make(np.asarray(a.data.mean(), dtype=a.data.dtype), "mean", (a,),
                 lambda g: (np.full(shape, g / n, dtype=a.data.dtype),))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either rank-2 (shared weight, batched over ``a``'s leading axes)
    or has the same rank and leading axes as ``a`` (batched product).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul: operands must be rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ContractError(f"matmul: batch dims differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, "matmul", (a, b), grad_fn)


def softmax_lastaxis(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, "softmax", (a,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ContractError(f"layer_norm: gain/bias must have shape ({d},)")
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * rstd
    gd = gain.data

    def grad_fn(g):
        gx = g * gd
        dx = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, d).sum(axis=0)
        gb = g.reshape(-1, d).sum(axis=0)
        return dx, gg, gb

    return _make(xhat * gd + bias.data, "layer_norm", (x, gain, bias), grad_fn)


# ---------------------------------------------------------------- shape ops

def concat_lastaxis(parts: Sequence[Tensor]) -> Tensor:
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ContractError(f"concat: leading shapes differ, {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def grad_fn(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=-1), "concat",
                 tuple(parts), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ContractError(f"reshape: {old} -> {tuple(shape)}") from exc
    return _make(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ContractError(f"transpose: bad axes {axes} for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,),
                 lambda g: (g.transpose(inv),))


def index_select(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather entries of ``a`` along ``axis``; backward scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (slice(None),) * (axis % len(shape)) + (index,), g)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), "index_select", (a,), grad_fn)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- parameters / AdamW

@dataclass
class Parameter:
    name: str
    tensor: Tensor
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = np.zeros_like(self.tensor.data)


def adamw_step(params: Iterable[Parameter], lr: float = 1e-3, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01) -> None:
    """One AdamW update, in place.

    Weight decay is decoupled: ``theta *= 1 - lr * weight_decay`` happens before
    the bias-corrected Adam step.
    """
    for p in params:
        if p.grad is None:
            raise ContractError(f"adamw_step: parameter '{p.name}' has no gradient")
        theta = p.tensor.data
        dt = theta.dtype.type
        g = p.grad.astype(theta.dtype, copy=False)
        p.step += 1
        if weight_decay:
            theta *= dt(1.0 - lr * weight_decay)
        p.m *= dt(beta1)
        p.m += dt(1 - beta1) * g
        p.v *= dt(beta2)
        p.v += dt(1 - beta2) * g * g
        mhat = p.m / dt(1 - beta1 ** p.step)
        vhat = p.v / dt(1 - beta2 ** p.step)
        theta -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))


def grad_norm(params: Iterable[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))


# ---------------------------------------------------------------- gradient checking

def relative_errors(pairs: Sequence[tuple[np.ndarray, np.ndarray]], floor: float = 1e-3
                    ) -> float:
    """Worst ``|num - ana| / max(|num|, |ana|, floor * G)`` over ``(num, ana)`` pairs.

    ``G`` is the largest numeric gradient norm among the pairs. The floor keeps
    inputs whose true gradient is identically zero (for example the attention
    key bias, which softmax cancels) from scoring round-off against round-off.
    """
    scale = max((float(np.linalg.norm(num)) for num, _ in pairs), default=0.0)
    worst = 0.0
    for num, ana in pairs:
        denom = max(np.linalg.norm(num), np.linalg.norm(ana), floor * scale, 1e-12)
        worst = max(worst, float(np.linalg.norm(num - ana) / denom))
    return worst


def finite_difference_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
                            eps: float = 1e-6, max_coords: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare autodiff gradients with central differences.

    ``fn`` rebuilds a scalar loss from the current ``inputs`` data. Returns the
    worst per-input relative error (vector 2-norms over the probed
    coordinates), see :func:`relative_errors`.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = fn()
    backward(loss)
    pairs = []
    for t in inputs:
        ad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        num = np.empty(len(coords))
        for n, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            with no_grad():
                up = float(fn().data)
            flat[c] = orig - eps
            with no_grad():
                dn = float(fn().data)
            flat[c] = orig
            num[n] = (up - dn) / (2 * eps)
        pairs.append((num, ad.reshape(-1)[coords].astype(np.float64)))
    return relative_errors(pairs)
