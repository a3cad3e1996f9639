"""Dense float64 tensors with taped reverse-mode differentiation.

Every operation computes eagerly on numpy buffers and, when a Tape is
active, records a backward closure. ``backward(tape, loss)`` walks the
tape in reverse creation order (creation order is topological by
construction) and accumulates gradients into parameter slots.

Tapes are confined to a single thread; distinct tapes may run concurrently.
"""

import threading

import numpy as np

from .errors import Error


class ShapeMismatch(Error):
    def __init__(self, op, *shapes):
        super().__init__(
            f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        )


class NonScalarLoss(Error):
    pass


_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tensor:
    """A shaped float64 buffer plus an optional same-shape gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data, param=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data) if param else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_param(self):
        return self.grad is not None

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def param(data) -> Tensor:
    return Tensor(data, param=True)


class Tape:
    """Records operations in creation order for one backward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self

    def record(self, out, parents, backward_fn):
        self.nodes.append((out, parents, backward_fn))


def _record(out, parents, backward_fn):
    stack = _tape_stack()
    if stack:
        stack[-1].record(out, parents, backward_fn)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of every parameter reachable from ``loss``.

    Gradients accumulate additively into existing slots; parameters not
    reachable keep whatever their slot already held (zeros by default).
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(out) for out, _, _ in tape.nodes}
    if id(loss) not in produced:
        raise Error("loss was not recorded on this tape")

    by_id = {}
    for out, parents, _ in tape.nodes:
        by_id[id(out)] = out
        for p in parents:
            by_id[id(p)] = p

    grads = {id(loss): np.ones_like(loss.data)}
    for out, parents, backward_fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if out.grad is not None:
            out.grad = out.grad + g
        for p, pg in zip(parents, backward_fn(g)):
            if pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for key, g in grads.items():
        t = by_id[key]
        if t.grad is not None:
            t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(op_name, a, b, fwd, da, db):
    a, b = tensor(a), tensor(b)
    try:
        out = Tensor(fwd(a.data, b.data))
    except ValueError:
        raise ShapeMismatch(op_name, a.shape, b.shape) from None
    _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(da(g, a.data, b.data), a.shape),
            _unbroadcast(db(g, a.data, b.data), b.shape),
        ),
    )
    return out


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(
        "mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x
    )


def div(a, b) -> Tensor:
    return _binary(
        "div",
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def scale(a, k: float) -> Tensor:
    a = tensor(a)
    k = float(k)
    out = Tensor(a.data * k)
    _record(out, (a,), lambda g: (g * k,))
    return out


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError:
        raise ShapeMismatch("matmul", a.shape, b.shape) from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    _record(out, (a, b), back)
    return out


def transpose(a, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    _record(out, (a,), lambda g: (np.transpose(g, inv),))
    return out


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(a.data.shape),))
    return out


def concat(parts, axis=0) -> Tensor:
    parts = [tensor(p) for p in parts]
    try:
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError:
        raise ShapeMismatch("concat", *[p.shape for p in parts]) from None
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    _record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))
    return out


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = tensor(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(a.data[index])

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    _record(out, (a,), back)
    return out


def relu(a) -> Tensor:
    a = tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    _record(out, (a,), lambda g: (g * (a.data > 0.0),))
    return out


def sigmoid(a) -> Tensor:
    a = tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)
    _record(out, (a,), lambda g: (g * s * (1.0 - s),))
    return out


def exp(a) -> Tensor:
    a = tensor(a)
    e = np.exp(a.data)
    out = Tensor(e)
    _record(out, (a,), lambda g: (g * e,))
    return out


def log(a) -> Tensor:
    a = tensor(a)
    out = Tensor(np.log(a.data))
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    _record(out, (a,), back)
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in ax]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l2norm(a, keepdims=False) -> Tensor:
    """Row-wise L2 norm over the last axis; subgradient 0 at zero rows."""
    a = tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=keepdims))
    out = Tensor(n)

    def back(g):
        nk = n if keepdims else n[..., None]
        gk = g if keepdims else g[..., None]
        safe = np.where(nk > 0.0, nk, 1.0)
        return (gk * a.data / safe,)

    _record(out, (a,), back)
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def back(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    _record(out, (a,), back)
    return out


def log_softmax(a) -> Tensor:
    a = tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(shifted - lse)
    p = np.exp(out.data)
    _record(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = tensor(x), tensor(gamma), tensor(beta)
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def back(g):
        gg = g * gamma.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        return gx, dgamma, dbeta

    _record(out, (x, gamma, beta), back)
    del d
    return out


def embedding(table, ids) -> Tensor:
    """Look up rows of ``table`` by integer array ``ids``."""
    table = tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    _record(out, (table,), back)
    return out


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row softmax.

    ``logits`` is (N, V); ``targets`` an integer vector of length N. When
    ``mask`` is given, rows with mask 0 are excluded from the mean.
    """
    logits = tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
    n, _ = logits.data.shape
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise Error("cross_entropy: mask excludes every row")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    nll = lse - shifted[np.arange(n), targets]
    out = Tensor((nll * m).sum() / total)

    def back(g):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        return (g * p * (m / total)[:, None],)

    _record(out, (logits,), back)
    return out


def mse(a, b) -> Tensor:
    """Mean of squared differences over all entries."""
    a, b = tensor(a), tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("mse", a.shape, b.shape)
    diff = a.data - b.data
    out = Tensor((diff * diff).mean())
    k = 2.0 / diff.size
    _record(out, (a, b), lambda g: (g * k * diff, -g * k * diff))
    return out


def sum_squares(a) -> Tensor:
    """Sum of squared entries (squared Frobenius norm)."""
    a = tensor(a)
    out = Tensor((a.data * a.data).sum())
    _record(out, (a,), lambda g: (g * 2.0 * a.data,))
    return out


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    Tensor built from ``params``. Checks every coordinate of every
    parameter.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * eps)
            denom = max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst
