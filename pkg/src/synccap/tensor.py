"""Dense float64 tensors with reverse-mode differentiation.

Only the operations the captioning model needs are provided. Every op
records its parents and a closure mapping the output gradient to parent
gradients; :meth:`Tensor.backward` linearises that graph into a tape
(topological order) and walks it once in reverse.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without building a graph (inference)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf is found in tensor data or gradients."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
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
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def validate(self) -> None:
        """Raise :class:`NonFiniteError` if data or grad hold NaN/Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {self!r}")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NonFiniteError(f"non-finite gradient in {self!r}")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    # -- backward ---------------------------------------------------------
    def _tape(self) -> list[Tensor]:
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        tape = self._tape()
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _recording and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), backward, "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


# -- reductions & shape ---------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward, "getitem")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    return getitem(table, ids)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ValueError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if ad.ndim == 1 or bd.ndim == 1:
        raise ValueError("matmul expects matrices; reshape vectors to 1×n first")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


# -- normalisation --------------------------------------------------------
def masked_softmax(scores, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask``.

    Masked entries come out exactly 0 and receive no gradient. This equals
    adding ``-inf`` to masked scores but never produces NaN. A row with no
    allowed entry is a caller bug and raises ``ValueError``.
    """
    scores = as_tensor(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has every position masked")
    s = np.where(mask, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (scores,), backward, "masked_softmax")


def softmax(scores) -> Tensor:
    scores = as_tensor(scores)
    return masked_softmax(scores, np.ones(scores.shape, dtype=bool))


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    prob = np.exp(out)

    def backward(g):
        return (g - prob * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def layer_norm(x, scale, shift, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit population variance, then
    apply ``scale`` and ``shift``."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    d = x.shape[-1]
    if d < 2:
        raise ValueError("layer_norm needs at least 2 features")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if scale.shape != (d,) or shift.shape != (d,):
        raise ValueError(f"layer_norm parameter shapes {scale.shape}, {shift.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    sd = scale.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * sd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * sd + shift.data, (x, scale, shift), backward, "layer_norm")


# -- verification ---------------------------------------------------------
def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central difference| / max(1, |analytic|)``."""
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    base = np.array(as_tensor(x).data, dtype=DTYPE)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    out.validate()
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        vals = []
        for sign in (1.0, -1.0):
            probe = flat.copy()
            probe[i] += sign * step
            y = f(Tensor(probe.reshape(base.shape)))
            y.validate()
            vals.append(float(y.data))
        numeric.reshape(-1)[i] = (vals[0] - vals[1]) / (2 * step)
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteError("non-finite analytic gradient")
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def parameters_grad_check(f: Callable[[], Tensor], params: Iterable[Tensor],
                          step: float = 1e-5, max_coords: int | None = None,
                          rng: np.random.Generator | None = None) -> float:
    """Like :func:`grad_check` but over every coordinate of several leaf tensors.

    ``f`` closes over ``params`` and is re-run with perturbed ``.data``.
    ``max_coords`` samples a subset of coordinates per tensor.
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    out.validate()
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f().data)
            flat[i] = orig - step
            lo = float(f().data)
            flat[i] = orig
            num = (hi - lo) / (2 * step)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst
