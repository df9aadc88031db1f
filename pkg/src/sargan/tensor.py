"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: tensors wrap numpy arrays, every
differentiable operation records its parents plus a closure that maps the
output gradient to parent gradients, and ``backward`` replays the graph once
in reverse topological order.  Training math runs in float32; float64 tensors
exist for finite-difference verification.

There is no broadcasting between tensors except the bias additions in
``fully_connected`` and ``add_channel_bias``; everything else requires exact
shape agreement.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense n-dimensional array plus an optional autodiff graph handle.

    ``grad`` is lazily allocated by ``backward`` and always matches ``data``
    in shape and dtype.  Repeated backward passes accumulate into it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Untracked tensor sharing this tensor's data (a graph constant)."""
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # -- operator sugar; scalars are python numbers, never broadcast arrays --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self) -> str:
        flag = ", tracked" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


class Parameter:
    """A named, tracked tensor.  Names must be unique within a model."""

    def __init__(self, name: str, value):
        self.name = name
        self.tensor = Tensor(np.asarray(value), requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        if value.shape != self.tensor.data.shape:
            raise ValueError(
                f"parameter {self.name!r}: cannot assign shape {value.shape} "
                f"over {self.tensor.data.shape}"
            )
        self.tensor.data = value.astype(self.tensor.data.dtype, copy=True)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def register(params: dict[str, Parameter], name: str, value) -> Parameter:
    """Add a fresh parameter to a model dict, enforcing name uniqueness."""
    if name in params:
        raise ValueError(f"duplicate parameter name {name!r}")
    p = Parameter(name, value)
    params[name] = p
    return p


# ---------------------------------------------------------------------------
# graph plumbing


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked ancestor of a scalar loss.

    Each graph node is visited exactly once per call; calling again without
    clearing grads adds another full pass worth of gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward expects a tracked tensor (requires_grad=True)")

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

    pass_grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pass_grads.pop(id(node), None)
        if g is None:
            continue
        _accumulate(node, g)
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            held = pass_grads.get(id(p))
            pass_grads[id(p)] = pg if held is None else held + pg


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data + c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data - c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data * c, (a,), lambda g: (g * c,))
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _node(xd * xd, (x,), lambda g: (g * (2.0 * xd),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,),
                 lambda g: (g * mask,))


def elu(x: Tensor) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise (unit alpha)."""
    xd = x.data
    mask = xd > 0
    out = np.where(mask, xd, np.expm1(np.minimum(xd, 0.0)))
    slope = np.where(mask, 1.0, np.exp(np.minimum(xd, 0.0))).astype(xd.dtype)
    return _node(out.astype(xd.dtype), (x,), lambda g: (g * slope,))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),))


def tsum(x: Tensor) -> Tensor:
    xd = x.data
    return _node(np.asarray(xd.sum(), dtype=xd.dtype), (x,),
                 lambda g: (np.full(xd.shape, g.reshape(()).item(), dtype=xd.dtype),))


def tmean(x: Tensor) -> Tensor:
    inv = 1.0 / x.data.size
    xd = x.data
    return _node(np.asarray(xd.sum() * inv, dtype=xd.dtype), (x,),
                 lambda g: (np.full(xd.shape, g.reshape(()).item() * inv, dtype=xd.dtype),))


def reshape(x: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.data.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# linear / convolutional layers


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x[N,D] @ weight[D,M] + bias[M]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ValueError(
            f"fully_connected: expected ranks (2,2,1), got "
            f"({x.data.ndim},{weight.data.ndim},{bias.data.ndim})"
        )
    n, d = x.data.shape
    dw, m = weight.data.shape
    if d != dw:
        raise ValueError(f"fully_connected: inner dims disagree, input D={d} vs weight D={dw}")
    if bias.data.shape[0] != m:
        raise ValueError(f"fully_connected: bias length {bias.data.shape[0]} != {m} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data

    def bw(g):
        return (g @ wd.T, xd.T @ g, g.sum(axis=0))

    return _node(out, (x, weight, bias), bw)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Per-channel bias for x[N,C,H,W]; the one allowed image broadcast."""
    if x.data.ndim != 4 or bias.data.ndim != 1 or bias.data.shape[0] != x.data.shape[1]:
        raise ValueError(
            f"add_channel_bias: need x[N,C,H,W] and bias[C], got {x.data.shape} "
            f"and {bias.data.shape}"
        )
    out = x.data + bias.data[None, :, None, None]
    return _node(out, (x, bias), lambda g: (g, g.sum(axis=(0, 2, 3))))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, hp: int, wp: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, hp, wp, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * hp * wp, c * kh * kw
    )


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of x[N,C,H,W] with kernel[F,C,kH,kW]."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(
            f"conv2d: need x[N,C,H,W] and kernel[F,C,kH,kW], got ranks "
            f"{x.data.ndim} and {kernel.data.ndim}"
        )
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernel.data.shape
    if c != ck:
        raise ValueError(f"conv2d: input has {c} channels but kernel expects {ck}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    hp = (h + 2 * padding - kh) // stride + 1
    wp = (w + 2 * padding - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, hp, wp)
    kmat = kernel.data.reshape(f, c * kh * kw)
    out = (cols @ kmat.T).reshape(n, hp, wp, f).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * hp * wp, f)
        dk = (g2.T @ cols).reshape(f, c, kh, kw)
        dcols = (g2 @ kmat).reshape(n, hp, wp, c, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * hp : stride, j : j + stride * wp : stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        if padding:
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
        else:
            dx = dxp
        return (dx, dk)

    return _node(np.ascontiguousarray(out), (x, kernel), bw)


# ---------------------------------------------------------------------------
# resampling

# The 2x2 sums below are grouped pairwise on purpose: four equal values then
# reduce exactly in float arithmetic, which makes avgpool2x(upsample2x_nn(x))
# the identity map bit-for-bit.


def avgpool2x(x: Tensor) -> Tensor:
    """2x2 mean pooling of x[N,C,H,W]; H and W must be even."""
    if x.data.ndim != 4:
        raise ValueError(f"avgpool2x: need x[N,C,H,W], got rank {x.data.ndim}")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2x: extents must be even, got {h}x{w}")
    t = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    s = (t[:, :, :, 0, :, 0] + t[:, :, :, 0, :, 1]) + (t[:, :, :, 1, :, 0] + t[:, :, :, 1, :, 1])
    out = s * 0.25

    def bw(g):
        q = g * 0.25
        dx = np.empty_like(x.data)
        view = dx.reshape(n, c, h // 2, 2, w // 2, 2)
        view[:, :, :, 0, :, 0] = q
        view[:, :, :, 0, :, 1] = q
        view[:, :, :, 1, :, 0] = q
        view[:, :, :, 1, :, 1] = q
        return (dx,)

    return _node(out, (x,), bw)


def upsample2x_nn(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of x[N,C,H,W]."""
    if x.data.ndim != 4:
        raise ValueError(f"upsample2x_nn: need x[N,C,H,W], got rank {x.data.ndim}")
    n, c, h, w = x.data.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bw(g):
        t = g.reshape(n, c, h, 2, w, 2)
        return ((t[:, :, :, 0, :, 0] + t[:, :, :, 0, :, 1])
                + (t[:, :, :, 1, :, 0] + t[:, :, :, 1, :, 1]),)

    return _node(out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: x[N,C,H,W] -> [N,C]."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool: need x[N,C,H,W], got rank {x.data.ndim}")
    n, c, h, w = x.data.shape
    inv = 1.0 / (h * w)
    out = x.data.sum(axis=(2, 3)) * inv

    def bw(g):
        return (np.ascontiguousarray(np.broadcast_to((g * inv)[:, :, None, None], x.data.shape)),)

    return _node(out.astype(x.data.dtype), (x,), bw)


# ---------------------------------------------------------------------------
# verification


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max deviation between analytic and central-difference gradients.

    ``f`` maps a tensor to a scalar Tensor; it may either use its argument or
    close over ``x`` directly (e.g. a model parameter).  Returns
    max |analytic - numeric| / max(1, |analytic|, |numeric|).  Run on float64
    tensors; float32 round-off swamps the comparison.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.grad = None
    out = f(x)
    backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x).item()
        flat[i] = orig - eps
        f_minus = f(x).item()
        flat[i] = orig
        nflat[i] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
