"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Every array is float64.  A primitive is a pair of pure functions: ``forward``
maps input arrays to an output array plus a saved context, ``backward`` maps
the output cotangent back to one cotangent per input.  Outputs produced from
inputs that require gradients carry a :class:`Node`; :class:`Tape` orders those
nodes topologically so :func:`backward` can sweep them in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shape."""


class GradcheckError(ArithmeticError):
    """Raised when a finite-difference probe hits a non-finite value."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through apply_primitive
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("Tensor division is only defined for python scalars")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    """One recorded primitive application."""

    kind: str
    inputs: tuple[Tensor, ...]
    ctx: object
    primitive: "Primitive"


@dataclass
class Tape:
    """Primitive applications reachable from a loss, in topological order."""

    records: list[tuple[Node, Tensor]] = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[tuple[Node, Tensor]] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                order.append((t.node, t))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                if inp.node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def ids(self) -> list[tuple[str, list[int], int]]:
        return [(node.kind, [id(i) for i in node.inputs], id(out)) for node, out in self.records]


# ---------------------------------------------------------------- primitives


class Primitive:
    kind = "?"

    @staticmethod
    def forward(*arrays, **attrs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, g, needs):
        raise NotImplementedError


PRIMITIVES: dict[str, type[Primitive]] = {}


def register(cls):
    PRIMITIVES[cls.kind] = cls
    return cls


def _bshape(kind: str, *shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {' and '.join(map(str, shapes))}") from None


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


@register
class Add(Primitive):
    kind = "add"

    @staticmethod
    def forward(a, b):
        _bshape("add", a.shape, b.shape)
        return a + b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, g, needs):
        sa, sb = ctx
        return unbroadcast(g, sa), unbroadcast(g, sb)


@register
class Sub(Primitive):
    kind = "sub"

    @staticmethod
    def forward(a, b):
        _bshape("sub", a.shape, b.shape)
        return a - b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, g, needs):
        sa, sb = ctx
        return unbroadcast(g, sa), unbroadcast(-g, sb)


@register
class Mul(Primitive):
    kind = "mul"

    @staticmethod
    def forward(a, b):
        _bshape("mul", a.shape, b.shape)
        return a * b, (a, b)

    @staticmethod
    def backward(ctx, g, needs):
        a, b = ctx
        ga = unbroadcast(g * b, a.shape) if needs[0] else None
        gb = unbroadcast(g * a, b.shape) if needs[1] else None
        return ga, gb


@register
class Scale(Primitive):
    kind = "scale"

    @staticmethod
    def forward(a, factor=1.0):
        return a * factor, factor

    @staticmethod
    def backward(ctx, g, needs):
        return (g * ctx,)


@register
class MatMul(Primitive):
    kind = "matmul"

    @staticmethod
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        _bshape("matmul", a.shape[:-2], b.shape[:-2])
        if b.ndim == 2 and a.ndim > 2:
            # one GEMM over the flattened leading axes
            out = (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
            return out, (a, b)
        return np.matmul(a, b), (a, b)

    @staticmethod
    def backward(ctx, g, needs):
        a, b = ctx
        if b.ndim == 2 and a.ndim > 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.T).reshape(a.shape) if needs[0] else None
            gb = a.reshape(-1, a.shape[-1]).T @ g2 if needs[1] else None
            return ga, gb
        ga = unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if needs[0] else None
        gb = unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
        return ga, gb


@register
class Concat(Primitive):
    kind = "concat"

    @staticmethod
    def forward(*arrays, axis=-1):
        ref = arrays[0]
        ax = axis % ref.ndim
        for a in arrays[1:]:
            if a.ndim != ref.ndim or a.shape[:ax] + a.shape[ax + 1:] != ref.shape[:ax] + ref.shape[ax + 1:]:
                raise ShapeError(f"concat: shapes {[x.shape for x in arrays]} differ off axis {axis}")
        sizes = [a.shape[ax] for a in arrays]
        return np.concatenate(arrays, axis=ax), (ax, np.cumsum(sizes)[:-1])

    @staticmethod
    def backward(ctx, g, needs):
        ax, cuts = ctx
        return tuple(np.split(g, cuts, axis=ax))


@register
class Slice(Primitive):
    kind = "slice"

    @staticmethod
    def forward(a, index=()):
        return a[index].copy(), (a.shape, index)

    @staticmethod
    def backward(ctx, g, needs):
        shape, index = ctx
        out = np.zeros(shape)
        out[index] = g
        return (out,)


@register
class Transpose(Primitive):
    kind = "transpose"

    @staticmethod
    def forward(a, axes=None):
        if axes is None:
            if a.ndim < 2:
                raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
            axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
        return np.ascontiguousarray(np.transpose(a, axes)), tuple(np.argsort(axes))

    @staticmethod
    def backward(ctx, g, needs):
        return (np.transpose(g, ctx),)


@register
class Reshape(Primitive):
    kind = "reshape"

    @staticmethod
    def forward(a, shape=()):
        try:
            return a.reshape(shape), a.shape
        except ValueError:
            raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    @staticmethod
    def backward(ctx, g, needs):
        return (g.reshape(ctx),)


@register
class Sum(Primitive):
    kind = "sum"

    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims), (a.shape, axis, keepdims)

    @staticmethod
    def backward(ctx, g, needs):
        shape, axis, keepdims = ctx
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)


@register
class Mean(Primitive):
    kind = "mean"

    @staticmethod
    def forward(a, axis=None, keepdims=False):
        out = np.mean(a, axis=axis, keepdims=keepdims)
        count = a.size // max(np.size(out), 1) if a.size else 1
        return out, (a.shape, axis, keepdims, count)

    @staticmethod
    def backward(ctx, g, needs):
        shape, axis, keepdims, count = ctx
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)


@register
class Softmax(Primitive):
    kind = "softmax"

    @staticmethod
    def forward(a):
        z = a - a.max(axis=-1, keepdims=True)
        np.exp(z, out=z)
        z /= z.sum(axis=-1, keepdims=True)
        return z, z

    @staticmethod
    def backward(ctx, g, needs):
        y = ctx
        gy = g * y
        gy -= y * gy.sum(axis=-1, keepdims=True)
        return (gy,)


@register
class LayerNorm(Primitive):
    kind = "layernorm"

    @staticmethod
    def forward(x, weight, bias, eps=1e-5):
        d = x.shape[-1]
        if weight.shape != (d,) or bias.shape != (d,):
            raise ShapeError(f"layernorm: input {x.shape} needs scale/shift of shape ({d},), "
                             f"got {weight.shape} and {bias.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * inv
        return xhat * weight + bias, (xhat, inv, weight)

    @staticmethod
    def backward(ctx, g, needs):
        xhat, inv, weight = ctx
        gw = unbroadcast(g * xhat, weight.shape) if needs[1] else None
        gb = unbroadcast(g, weight.shape) if needs[2] else None
        gx = None
        if needs[0]:
            gh = g * weight
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb


def _softplus(x: np.ndarray) -> np.ndarray:
    # log1p(exp(x)) is exact at the warp-clock initial bias; switch only where exp overflows
    big = x > 30.0
    return np.where(big, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 30.0))))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@register
class Softplus(Primitive):
    kind = "softplus"

    @staticmethod
    def forward(a):
        return _softplus(a), a

    @staticmethod
    def backward(ctx, g, needs):
        return (g * _sigmoid(ctx),)


@register
class Tanh(Primitive):
    kind = "tanh"

    @staticmethod
    def forward(a):
        y = np.tanh(a)
        return y, y

    @staticmethod
    def backward(ctx, g, needs):
        return (g * (1.0 - ctx * ctx),)


@register
class Exp(Primitive):
    kind = "exp"

    @staticmethod
    def forward(a):
        y = np.exp(a)
        return y, y

    @staticmethod
    def backward(ctx, g, needs):
        return (g * ctx,)


@register
class Sin(Primitive):
    kind = "sin"

    @staticmethod
    def forward(a):
        return np.sin(a), a

    @staticmethod
    def backward(ctx, g, needs):
        return (g * np.cos(ctx),)


@register
class Cos(Primitive):
    kind = "cos"

    @staticmethod
    def forward(a):
        return np.cos(a), a

    @staticmethod
    def backward(ctx, g, needs):
        return (-g * np.sin(ctx),)


_GELU_C = math.sqrt(2.0 / math.pi)


@register
class Gelu(Primitive):
    """tanh-approximation GELU."""

    kind = "gelu"

    @staticmethod
    def forward(a):
        u = _GELU_C * (a + 0.044715 * (a * a * a))
        th = np.tanh(u)
        return 0.5 * a * (1.0 + th), (a, th)

    @staticmethod
    def backward(ctx, g, needs):
        a, th = ctx
        du = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du),)


@register
class Cumsum(Primitive):
    kind = "cumsum"

    @staticmethod
    def forward(a, axis=-1):
        return np.cumsum(a, axis=axis), axis

    @staticmethod
    def backward(ctx, g, needs):
        axis = ctx
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)


@register
class MaskedZero(Primitive):
    """Multiply by a constant, pre-sampled mask (zeros and keep-scale factors)."""

    kind = "masked_zero"

    @staticmethod
    def forward(a, mask=None):
        mask = np.asarray(mask, dtype=np.float64)
        _bshape("masked_zero", a.shape, mask.shape)
        if np.broadcast_shapes(a.shape, mask.shape) != a.shape:
            raise ShapeError(f"masked_zero: mask {mask.shape} would grow input {a.shape}")
        return a * mask, mask

    @staticmethod
    def backward(ctx, g, needs):
        return (g * ctx,)


@register
class Embedding(Primitive):
    kind = "embedding"

    @staticmethod
    def forward(table, indices=None):
        idx = np.asarray(indices, dtype=np.intp)
        if table.ndim != 2:
            raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise ShapeError(f"embedding: indices out of range for table {table.shape}")
        return table[idx], (table.shape, idx)

    @staticmethod
    def backward(ctx, g, needs):
        shape, idx = ctx
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)


@register
class SymplecticFlow(Primitive):
    """Block-diagonal symplectic flow of 2-D pairs, fused forward/backward.

    Canonical shapes: ``x (B, H, N, 2P)``, ``tau (B, N)``, band parameters
    ``(H, P)``.  With ``conjugate`` the per-pair output is ``J S(tau) x``.
    """

    kind = "symplectic_flow"

    @staticmethod
    def forward(x, tau, alpha, beta, gamma, conjugate=False):
        if x.ndim != 4 or x.shape[-1] % 2:
            raise ShapeError(f"symplectic_flow: x must be (B, H, N, even), got {x.shape}")
        b, h, n, d = x.shape
        if tau.shape != (b, n):
            raise ShapeError(f"symplectic_flow: clock {tau.shape} does not match x {x.shape}")
        for p in (alpha, beta, gamma):
            if p.shape != (h, d // 2):
                raise ShapeError(f"symplectic_flow: band params {p.shape} do not match x {x.shape}")
        out = np.empty_like(x)
        kernels.flow_forward(x, tau, alpha, beta, gamma, bool(conjugate), out)
        return out, (x, tau, alpha, beta, gamma, bool(conjugate))

    @staticmethod
    def backward(ctx, g, needs):
        x, tau, alpha, beta, gamma, conjugate = ctx
        gx = np.empty_like(x)
        gtau = np.zeros_like(tau)
        ga = np.zeros_like(alpha)
        gb = np.zeros_like(beta)
        gg = np.zeros_like(gamma)
        kernels.flow_backward(x, tau, alpha, beta, gamma, conjugate,
                              np.ascontiguousarray(g), gx, gtau, ga, gb, gg,
                              bool(needs[1]), bool(any(needs[2:])))
        return gx, gtau, ga, gb, gg


# ---------------------------------------------------------------- dispatch


def apply_primitive(kind: str, *inputs, **attrs) -> Tensor:
    """Run primitive ``kind`` on ``inputs`` and record it when gradients are needed."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    tensors = tuple(as_tensor(x) for x in inputs)
    data, ctx = prim.forward(*(t.data for t in tensors), **attrs)
    out = Tensor(data)
    if any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out.node = Node(kind, tensors, ctx, prim)
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.from_loss(loss)
    cot: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node, out in reversed(tape.records):
        g = cot.pop(id(out), None)
        if g is None:
            continue
        needs = [t.requires_grad for t in node.inputs]
        grads = node.primitive.backward(node.ctx, g, needs)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t.node is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            elif id(t) in cot:
                cot[id(t)] = cot[id(t)] + gi
            else:
                cot[id(t)] = gi
    if loss.node is None and loss.requires_grad:
        loss.grad = np.ones(loss.shape) if loss.grad is None else loss.grad + 1.0
    return tape


# ---------------------------------------------------------------- functional API


def add(a, b):
    return apply_primitive("add", a, b)


def sub(a, b):
    return apply_primitive("sub", a, b)


def mul(a, b):
    return apply_primitive("mul", a, b)


def scale(a, factor: float):
    return apply_primitive("scale", a, factor=float(factor))


def matmul(a, b):
    return apply_primitive("matmul", a, b)


def concat(tensors: Sequence, axis: int = -1):
    return apply_primitive("concat", *tensors, axis=axis)


def slice_(a, index):
    if not isinstance(index, tuple):
        index = (index,)
    return apply_primitive("slice", a, index=index)


def transpose(a, axes=None):
    return apply_primitive("transpose", a, axes=None if axes is None else tuple(axes))


def reshape(a, shape):
    return apply_primitive("reshape", a, shape=tuple(shape))


def sum_(a, axis=None, keepdims=False):
    return apply_primitive("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return apply_primitive("mean", a, axis=axis, keepdims=keepdims)


def softmax(a):
    return apply_primitive("softmax", a)


def layer_norm(x, weight, bias, eps: float = 1e-5):
    return apply_primitive("layernorm", x, weight, bias, eps=eps)


def softplus(a):
    return apply_primitive("softplus", a)


def tanh(a):
    return apply_primitive("tanh", a)


def exp(a):
    return apply_primitive("exp", a)


def sin(a):
    return apply_primitive("sin", a)


def cos(a):
    return apply_primitive("cos", a)


def gelu(a):
    return apply_primitive("gelu", a)


def cumsum(a, axis: int = -1):
    return apply_primitive("cumsum", a, axis=axis)


def masked_zero(a, mask):
    return apply_primitive("masked_zero", a, mask=mask)


def embedding(table, indices):
    return apply_primitive("embedding", table, indices=indices)


def symplectic_flow(x, tau, alpha, beta, gamma, conjugate: bool = False):
    return apply_primitive("symplectic_flow", x, tau, alpha, beta, gamma, conjugate=conjugate)


# ---------------------------------------------------------------- gradient check


def gradcheck(function: Callable[..., Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``point`` is a Tensor or a sequence of Tensors; ``function`` is called with
    the same arity.  The error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    single = isinstance(point, Tensor)
    points = [point] if single else list(point)
    for p in points:
        p.requires_grad = True
        p.grad = None

    def call():
        return function(points[0]) if single else function(*points)

    loss = call()
    if loss.size != 1:
        raise ShapeError(f"gradcheck needs a scalar function, got shape {loss.shape}")
    backward(loss)
    worst = 0.0
    for k, p in enumerate(points):
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(call().data.reshape(-1)[0])
            flat[i] = orig - step
            fm = float(call().data.reshape(-1)[0])
            flat[i] = orig
            coord = np.unravel_index(i, p.shape) if p.shape else ()
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise GradcheckError(f"non-finite function value at input {k}, coordinate {coord}")
            a = float(analytic.reshape(-1)[i])
            if not math.isfinite(a):
                raise GradcheckError(f"non-finite analytic gradient at input {k}, coordinate {coord}")
            num = (fp - fm) / (2.0 * step)
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
