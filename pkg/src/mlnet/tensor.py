"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations the saliency network needs are provided. Every op builds
its output with :meth:`Tensor.from_op`, which stores the parents and a
closure mapping the output gradient to one gradient per parent. Calling
:func:`backward` sorts the graph into a :class:`Tape` and replays it in
reverse.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_KINK_TRACE: list | None = None


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference without keeping intermediates)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def trace_kinks():
    """Collect the branch pattern of every piecewise op (relu masks, max argmaxes).

    Two evaluations with equal traces lie on the same smooth piece, which is
    what a finite-difference probe needs.
    """
    global _KINK_TRACE
    prev = _KINK_TRACE
    _KINK_TRACE = trace = []
    try:
        yield trace
    finally:
        _KINK_TRACE = prev


def _trace(pattern):
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(np.asarray(pattern).copy())


def same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward_fn if needs else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Tape:
    """Operations reachable from an output, in topological order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(output: Tensor, inputs: Iterable[Tensor] = (), tape: Tape | None = None) -> Tape:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``output``.

    Gradients are assigned, not accumulated. Tensors listed in ``inputs`` that
    the output does not depend on receive an all-zero gradient.
    """
    if output.data.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if tape is None:
        tape = Tape.record(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None:
            g = np.zeros_like(node.data)
        if node.requires_grad:
            node.grad = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    reached = {id(n) for n in tape.nodes}
    for t in inputs:
        if id(t) not in reached:
            t.grad = np.zeros_like(t.data)
    return tape


@dataclass
class RngState:
    """Seeded source of randomness: numpy's PCG64 bit generator.

    ``child(*keys)`` derives an independent stream from (seed, keys) via
    SeedSequence, so parallel and serial consumers draw the same numbers.
    """

    seed: int
    algorithm: str = "PCG64"

    def __post_init__(self):
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *keys: int) -> "RngState":
        ss = np.random.SeedSequence([self.seed, *keys])
        out = RngState.__new__(RngState)
        out.seed = self.seed
        out.algorithm = self.algorithm
        out.generator = np.random.Generator(np.random.PCG64(ss))
        return out


# ----------------------------------------------------------------------------
# elementwise ops


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor.from_op(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return Tensor.from_op(out, (a, b), bw)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _trace(mask)
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# ----------------------------------------------------------------------------
# reductions


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor.from_op(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    _check_nonempty(x)
    n = x.size
    shape = x.shape
    return Tensor.from_op(np.mean(x.data), (x,),
                          lambda g: (np.full(shape, float(g) / n),))


def variance(x: Tensor) -> Tensor:
    """Population variance (divisor = element count)."""
    _check_nonempty(x)
    n = x.size
    # shifting by a sample first makes a constant input give exactly 0
    shifted = x.data - x.data.flat[0]
    centered = shifted - shifted.mean()
    return Tensor.from_op(np.mean(centered * centered), (x,),
                          lambda g: (float(g) * 2.0 / n * centered,))


def amax(x: Tensor) -> Tensor:
    """Global max; the gradient goes to the first maximum in row-major order."""
    _check_nonempty(x)
    flat = x.data.reshape(-1)
    idx = int(np.argmax(flat))
    _trace(idx)
    shape = x.shape

    def bw(g):
        out = np.zeros(flat.size)
        out[idx] = float(g)
        return (out.reshape(shape),)

    return Tensor.from_op(flat[idx], (x,), bw)


def amax_per_sample(x: Tensor) -> Tensor:
    """Max over every axis but the first, kept as shape (N, 1, ..., 1)."""
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    if flat.shape[1] == 0:
        raise ValueError("cannot reduce an empty tensor")
    idx = np.argmax(flat, axis=1)
    _trace(idx)
    kept = (n,) + (1,) * (x.data.ndim - 1)
    shape = x.shape

    def bw(g):
        out = np.zeros_like(flat)
        out[np.arange(n), idx] = g.reshape(n)
        return (out.reshape(shape),)

    return Tensor.from_op(flat[np.arange(n), idx].reshape(kept), (x,), bw)


def reduce(x: Tensor, op: str) -> Tensor:
    ops = {"mean": mean, "variance": variance, "max": amax, "sum": total}
    if op not in ops:
        raise ValueError(f"unknown reduction {op!r}; expected one of {sorted(ops)}")
    return ops[op](x)


def _check_nonempty(x: Tensor):
    if x.size == 0:
        raise ValueError("cannot reduce an empty tensor")


# ----------------------------------------------------------------------------
# network layers


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation on NCHW input.

    Loops over kernel offsets and does one matrix product per offset, which
    keeps memory at the size of the input and output.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weights, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weights {weight.shape}")
    if bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match weights {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")

    # channel-major layout: (C, N, H, W)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xp = np.ascontiguousarray(xp.transpose(1, 0, 2, 3))
    wd = weight.data
    # per-offset (O, C) blocks must be contiguous for BLAS
    wk = np.ascontiguousarray(wd.transpose(2, 3, 0, 1))
    wkt = None
    out = np.zeros((o, n * ho * wo))

    def window(di, dj):
        return xp[:, :, di:di + (ho - 1) * stride + 1:stride, dj:dj + (wo - 1) * stride + 1:stride]

    for di in range(kh):
        for dj in range(kw):
            out += wk[di, dj] @ window(di, dj).reshape(c, -1)
    out += bias.data[:, None]
    result = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)

    def bw(g):
        nonlocal wkt
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        if wkt is None:
            wkt = np.ascontiguousarray(wd.transpose(2, 3, 1, 0))
        gw = np.empty_like(wd) if weight.requires_grad else None
        gx = np.zeros_like(xp) if x.requires_grad else None
        for di in range(kh):
            for dj in range(kw):
                if gw is not None:
                    gw[:, :, di, dj] = gm @ window(di, dj).reshape(c, -1).T
                if gx is not None:
                    gx[:, :, di:di + (ho - 1) * stride + 1:stride,
                       dj:dj + (wo - 1) * stride + 1:stride] += (
                        (wkt[di, dj] @ gm).reshape(c, n, ho, wo))
        gb = gm.sum(axis=1) if bias.requires_grad else None
        if gx is not None:
            gx = gx[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
        return gx, gw, gb

    return Tensor.from_op(np.ascontiguousarray(result), (x, weight, bias), bw)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2, same_pad: bool = False) -> Tensor:
    """Max pooling over k x k windows.

    With ``same_pad`` the bottom/right edges are padded with -inf so that
    stride 1 keeps the spatial size. Ties go to the first window position in
    row-major order.
    """
    if kernel < 1 or stride < 1:
        raise ValueError("maxpool2d needs positive kernel and stride")
    if stride > kernel:
        raise ValueError(f"maxpool2d stride {stride} > kernel {kernel} would skip input pixels")
    n, c, h, w = x.shape
    xd = x.data
    if same_pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (0, kernel - 1), (0, kernel - 1)),
                    constant_values=-np.inf)
    hp, wp = xd.shape[2:]
    ho = (hp - kernel) // stride + 1
    wo = (wp - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool2d kernel {kernel} larger than input {x.shape}")
    offsets = [(di, dj) for di in range(kernel) for dj in range(kernel)]

    def window(arr, di, dj):
        return arr[:, :, di:di + (ho - 1) * stride + 1:stride, dj:dj + (wo - 1) * stride + 1:stride]

    stacked = np.stack([window(xd, di, dj) for di, dj in offsets])
    arg = np.argmax(stacked, axis=0)
    _trace(arg)
    out = np.take_along_axis(stacked, arg[None], axis=0)[0]

    def bw(g):
        gx = np.zeros((n, c, hp, wp))
        for k, (di, dj) in enumerate(offsets):
            window(gx, di, dj)[...] += np.where(arg == k, g, 0.0)
        return (gx[:, :, :h, :w],)

    return Tensor.from_op(out, (x,), bw)


def dropout(x: Tensor, retain_prob: float, rng: RngState | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/retain_prob at train time."""
    if not 0.0 < retain_prob <= 1.0:
        raise ValueError(f"retain_prob must lie in (0, 1], got {retain_prob}")
    if not training or retain_prob == 1.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an RngState")
    keep = rng.generator.random(x.shape) < retain_prob
    scale = keep / retain_prob
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,))


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.data.ndim != 4 or (t.shape[0], *t.shape[2:]) != (ref[0], *ref[2:]):
            raise ValueError(f"concat_channels spatial/batch mismatch: {ref} vs {t.shape}")
    if len(inputs) == 1:
        return inputs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(inputs)))

    return Tensor.from_op(np.concatenate([t.data for t in inputs], axis=1), tuple(inputs), bw)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return Tensor.from_op(x.data[:, start:stop].copy(), (x,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    ad, bd = a.data, b.data
    return Tensor.from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))
