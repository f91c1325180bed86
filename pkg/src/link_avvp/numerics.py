"""Dense float64 arrays with reverse-mode automatic differentiation.

Every op builds a node that remembers its inputs and a backward closure.
``Tensor.backward`` walks the graph in reverse topological order, each node
exactly once, with gradient accumulators allocated fresh on every call.

Elementwise binary ops require identical shapes; use :func:`expand` for
explicit broadcasting. Arrays are limited to rank 3 (batch x T x d).
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

MAX_RANK = 3
BCE_EPS = 1e-7
COSINE_EPS = 1e-8

# op name -> multiplier applied to that op's input gradients (fault injection)
_BACKWARD_FAULTS: dict[str, float] = {}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("_data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (), backward=None):
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self._data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __radd__(self, other):
        return add(_as_tensor(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Backpropagate from a scalar. Overwrites ``.grad`` on every reachable
        node that requires grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            node.grad = g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            factor = _BACKWARD_FAULTS.get(node.op)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def _as_tensor(x, shape=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.ndim == 0:
        arr = np.full(shape, float(arr))
    return Tensor(arr)


def _node(data, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, op=op,
                  parents=tuple(parents) if rg else (), backward=backward if rg else None)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.5):
    """Scale the input gradients produced by every ``op`` node. Test hook for
    verifying that the gradient check catches a broken backward rule."""
    _BACKWARD_FAULTS[op] = factor
    try:
        yield
    finally:
        _BACKWARD_FAULTS.pop(op, None)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, "div", (a, b), lambda g: (g / bd, -g * out / bd))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, "scale", (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _node(ad * ad, "square", (a,), lambda g: (2.0 * ad * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, "exp", (a,), lambda g: (g * out,))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    sgn = np.sign(a.data)
    return _node(np.abs(a.data), "abs", (a,), lambda g: (g * sgn,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _node(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data.copy())


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(src),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``a`` to ``shape`` (numpy right-aligned rules); backward sums
    over the broadcast axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {src} to {shape}") from None
    lead = len(shape) - len(src)

    def backward(g):
        r = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and r.shape[i] != 1)
        if axes:
            r = r.sum(axis=axes, keepdims=True)
        return (r,)

    return _node(out, "expand", (a,), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {a.shape}")
    return _node(np.swapaxes(a.data, -1, -2), "transpose", (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, "concat", parts, backward)


# ---------------------------------------------------------------- reductions

def _check_axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"invalid axis {axis} for array of shape {a.shape}")
    return axis % a.ndim


def sum_all(a: Tensor) -> Tensor:
    src = a.shape
    return _node(a.data.sum(), "sum", (a,), lambda g: (np.full(src, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    src, n = a.shape, a.data.size
    return _node(a.data.mean(), "mean", (a,), lambda g: (np.full(src, float(g) / n),))


def pool_over_axis(a: Tensor, axis: int, mode: str) -> Tensor:
    """Mean- or max-reduce one axis. Max routes gradient to the first argmax."""
    axis = _check_axis(a, axis)
    if mode == "mean":
        n = a.shape[axis]
        return _node(a.data.mean(axis=axis), "avgpool", (a,),
                     lambda g: (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),))
    if mode == "max":
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)
        src = a.shape

        def backward(g):
            r = np.zeros(src)
            np.put_along_axis(r, idx, np.expand_dims(g, axis), axis=axis)
            return (r,)

        return _node(out, "maxpool", (a,), backward)
    raise ValueError(f"pool mode must be 'mean' or 'max', got {mode!r}")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(M,K)@(K,N), batched (B,M,K)@(B,K,N), or shared-weight (B,M,K)@(K,N)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]) or (a.ndim == 2 and b.ndim == 3):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if ad.ndim == 3 and bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _node(out, "matmul", (a, b), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, "softmax", (a,), backward)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity of rows: out[..., i, j] = <a_i, b_j> / (|a_i||b_j| + eps)."""
    if a.ndim < 2 or a.shape[-1] != b.shape[-1] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"cosine_rows: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(-1))
    nb = np.sqrt((bd * bd).sum(-1))
    dots = ad @ np.swapaxes(bd, -1, -2)
    denom = na[..., :, None] * nb[..., None, :] + COSINE_EPS
    out = dots / denom

    def backward(g):
        g1 = g / denom
        g2 = g * dots / (denom * denom)
        with np.errstate(invalid="ignore", divide="ignore"):
            ua = np.where(na[..., None] > 0, ad / na[..., None], 0.0)
            ub = np.where(nb[..., None] > 0, bd / nb[..., None], 0.0)
        ga = g1 @ bd - (g2 * nb[..., None, :]).sum(-1)[..., None] * ua
        gb = np.swapaxes(g1, -1, -2) @ ad - (g2 * na[..., :, None]).sum(-2)[..., None] * ub
        return ga, gb

    return _node(out, "cosine", (a, b), backward)


# ---------------------------------------------------------------- losses

def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [eps, 1-eps].
    The target is treated as a constant."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"bce: shapes {pred.shape} and {target.shape} differ")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)
    n = p.size
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))

    def backward(g):
        return (float(g) * inside * (-(target / p) + (1.0 - target) / (1.0 - p)) / n,)

    return _node(loss, "bce", (pred,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    return mean_all(square(sub(a, b)))


# ---------------------------------------------------------------- gradient check

class NonFiniteError(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple[int, ...] | None
    per_param: dict[str, float]
    n_coords: int

    def passed(self, tol: float = 1e-4) -> bool:
        return bool(self.max_rel_error < tol)


def grad_check_report(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
                      names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` must rebuild its graph from the current values of ``params`` on each
    call. Error per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    params = list(params)
    if names is None:
        names = [getattr(p, "name", f"param{i}") for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst, worst_name, worst_idx = 0.0, None, None
    per_param: dict[str, float] = {}
    n_coords = 0
    for p, name, ga in zip(params, names, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        pmax = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss when perturbing {name}[{i}]")
            num = (fp - fm) / (2.0 * h)
            err = float(abs(gflat[i] - num) / max(1.0, abs(num)))
            n_coords += 1
            pmax = max(pmax, err)
            if err > worst or worst_name is None:
                worst, worst_name = err, name
                worst_idx = tuple(int(j) for j in np.unravel_index(i, p.shape)) if p.shape else ()
        per_param[name] = pmax
    return GradCheckReport(worst, worst_name, worst_idx, per_param, n_coords)


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    return grad_check_report(f, params, h).max_rel_error


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b, with the bias expanded over leading axes. Rank-1 ``x`` is a single row."""
    if x.ndim == 1:
        return reshape(linear(reshape(x, (1, x.shape[0])), w, b), (w.shape[1],))
    y = matmul(x, w)
    return add(y, expand(b, y.shape))


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
