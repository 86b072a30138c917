"""Dense tensors with reverse-mode automatic differentiation.

Small by design: just enough operations to train the bundled classifiers.
Each forward pass records a tape of backward closures on the produced
tensors; ``Tensor.backward()`` walks the tape in reverse topological order
and then frees it, so training loops can rebuild the graph every batch
without leaking references.

Gradient tests elsewhere use 64-bit tensors; experiment runs may use
32-bit. Operations preserve the dtype of their inputs.
"""

import numpy as np

from .errors import ShapeError, StateError

FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense array plus an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate gradients into every tensor this one depends on.

        The tape is freed afterwards; a second backward through the same
        graph is not supported.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
            node._parents = ()
            node._backward = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A tensor owned by a model. Frozen parameters record no gradients."""

    __slots__ = ("learnable",)

    def __init__(self, data, learnable: bool = True, dtype=None):
        super().__init__(data, requires_grad=learnable, dtype=dtype)
        self.learnable = learnable

    def freeze(self):
        self.requires_grad = False
        self.grad = None

    def unfreeze(self):
        self.requires_grad = self.learnable


def _topo_order(root: Tensor) -> list:
    """Iterative topological sort of the tape reachable from `root`."""
    order = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for parent in parents:
            if id(parent) not in visited:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _make(data, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree ({a.shape} x {b.shape})")
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# convolution / pooling


def _conv_geometry(h, w, kh, kw, stride, padding):
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (w + 2 * padding - kw) // stride + 1
    if h + 2 * padding < kh or w + 2 * padding < kw or hout <= 0 or wout <= 0:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} with stride {stride}, padding {padding} "
            f"does not fit input {h}x{w}"
        )
    return hout, wout


def _im2col(xp: np.ndarray, kh, kw, stride, hout, wout) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, hout, wout), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * hout : stride, j : j + stride * wout : stride]
    return cols


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 2-d cross-correlation with zero padding.

    `x` is (N, Cin, H, W), `kernel` is (Cout, Cin, KH, KW). Implemented via
    im2col so the heavy lifting is one einsum per pass.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, w = x.shape
    cout, cin_k, kh, kw = kernel.shape
    if cin != cin_k:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {cin_k}")
    hout, wout = _conv_geometry(h, w, kh, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, hout, wout)
    data = np.einsum("ncijhw,ocij->nohw", cols, kernel.data, optimize=True)

    def backward(g):
        if kernel.requires_grad:
            _accumulate(kernel, np.einsum("nohw,ncijhw->ocij", g, cols, optimize=True))
        if x.requires_grad:
            dcols = np.einsum("nohw,ocij->ncijhw", g, kernel.data, optimize=True)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * hout : stride, j : j + stride * wout : stride] += dcols[:, :, i, j]
            _accumulate(x, dxp[:, :, padding : padding + h, padding : padding + w])

    return _make(data, (x, kernel), backward)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must be divisible by `size`."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"max_pool2d: input {h}x{w} not divisible by pool size {size}")
    hout, wout = h // size, w // size
    windows = x.data.reshape(n, c, hout, size, wout, size)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hout, wout, size * size)
    idx = windows.argmax(axis=-1)
    data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, hout, wout, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accumulate(x, dx)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# losses


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array, stabilized by max subtraction."""
    z = np.asarray(logits)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the labelled entries."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (batch, heads) logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.arange(n)
    data = np.asarray(-logp[rows, labels].mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        _accumulate(logits, g * p / n)

    return _make(data, (logits,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared elementwise difference."""
    b = _wrap(b, like=a)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ ({a.shape} vs {b.shape})")
    diff = a.data - b.data
    data = np.asarray((diff * diff).mean(), dtype=a.data.dtype)

    def backward(g):
        scale = 2.0 / diff.size
        _accumulate(a, g * scale * diff)
        _accumulate(b, -g * scale * diff)

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# optimizer


def sgd_step(params: list, lr: float):
    """In-place SGD update for learnable, unfrozen parameters.

    Gradients must have been populated by a backward pass; they are zeroed
    after the update. Frozen parameters are skipped untouched.
    """
    for p in params:
        if not (p.learnable and p.requires_grad):
            continue
        if p.grad is None:
            raise StateError("sgd_step: learnable parameter has no gradient; run backward first")
        p.data -= lr * p.grad
    for p in params:
        p.grad = None


def zero_grads(params: list):
    for p in params:
        p.grad = None
