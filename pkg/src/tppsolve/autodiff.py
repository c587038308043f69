"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every value is a float64 ``Tensor`` of at most three axes. Operations
record their inputs and a gradient closure on a tape as they run;
``backward`` walks the tape once in reverse topological order and
accumulates gradients into the leaves. ``no_grad`` turns recording off
for inference-only passes (greedy rollouts, evaluations), which is both
faster and keeps memory flat.

The op set is exactly what the policy network needs: broadcasting
arithmetic, matmul, the usual nonlinearities, shape plumbing, masked
log-sum-exp, and three gather/scatter ops for batched decoding. On top
of those sit the layer functions (``mha``, ``lstm_cell``,
``batchnorm``), the Adam optimizer, and a named parameter store with a
versioned checkpoint container.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_AXES = 3
_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Array node on the tape. Do not mutate ``data`` between forward
    and backward."""

    __slots__ = ("data", "grad", "requires_grad", "_links")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_AXES:
            raise ValueError(f"tensors are limited to {MAX_AXES} axes, got {arr.ndim}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        # (parent, grad_fn) pairs; grad_fn maps output grad -> parent grad
        self._links: tuple[tuple["Tensor", Callable], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, links: Iterable[tuple[Tensor, Callable]]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED:
        kept = tuple((p, fn) for p, fn in links if p.requires_grad)
        if kept:
            out._links = kept
            out.requires_grad = True
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data / b.data,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ],
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_a(g):
        swapped = np.swapaxes(b.data, -1, -2)
        return _unbroadcast(np.matmul(g, swapped), a.data.shape)

    def grad_b(g):
        swapped = np.swapaxes(a.data, -1, -2)
        return _unbroadcast(np.matmul(swapped, g), b.data.shape)

    return _result(np.matmul(a.data, b.data), [(a, grad_a), (b, grad_b)])


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.maximum(t.data, 0.0)
    return _result(out, [(t, lambda g: g * (t.data > 0))])


def tanh(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.tanh(t.data)
    return _result(out, [(t, lambda g: g * (1.0 - out * out))])


def sigmoid(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = 1.0 / (1.0 + np.exp(-t.data))
    return _result(out, [(t, lambda g: g * out * (1.0 - out))])


def exp(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.exp(t.data)
    return _result(out, [(t, lambda g: g * out)])


def log(t: Tensor) -> Tensor:
    t = as_tensor(t)
    return _result(np.log(t.data), [(t, lambda g: g / t.data)])


def sqrt(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.sqrt(t.data)
    return _result(out, [(t, lambda g: g * 0.5 / out)])


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    axes = _norm_axis(axis, t.ndim)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, t.data.shape).copy()

    return _result(t.data.sum(axis=axes, keepdims=keepdims), [(t, grad_fn)])


def mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    axes = _norm_axis(axis, t.ndim)
    count = float(np.prod([t.data.shape[a] for a in axes]))

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g / count, t.data.shape).copy()

    return _result(t.data.mean(axis=axes, keepdims=keepdims), [(t, grad_fn)])


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    t = as_tensor(t)
    return _result(
        t.data.reshape(shape), [(t, lambda g: g.reshape(t.data.shape))]
    )


def swap_last2(t: Tensor) -> Tensor:
    t = as_tensor(t)
    return _result(
        np.swapaxes(t.data, -1, -2), [(t, lambda g: np.swapaxes(g, -1, -2))]
    )


def slice_lastdim(t: Tensor, start: int, stop: int) -> Tensor:
    t = as_tensor(t)

    def grad_fn(g):
        full = np.zeros_like(t.data)
        full[..., start:stop] = g
        return full

    return _result(t.data[..., start:stop].copy(), [(t, grad_fn)])


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    links = []
    for i, p in enumerate(parts):
        lo, hi = offsets[i], offsets[i + 1]

        def grad_fn(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[ax] = slice(lo, hi)
            return g[tuple(index)]

        links.append((p, grad_fn))
    return _result(np.concatenate([p.data for p in parts], axis=ax), links)


def repeat_interleave0(t: Tensor, k: int) -> Tensor:
    """(B, ...) -> (B*k, ...) with each row repeated k times."""
    t = as_tensor(t)
    b = t.data.shape[0]

    def grad_fn(g):
        return g.reshape((b, k) + t.data.shape[1:]).sum(axis=1)

    return _result(np.repeat(t.data, k, axis=0), [(t, grad_fn)])


def sum_blocks0(t: Tensor, k: int) -> Tensor:
    """(B*k, ...) -> (B, ...) summing consecutive blocks of k rows."""
    t = as_tensor(t)
    bk = t.data.shape[0]
    if bk % k:
        raise ValueError(f"leading axis {bk} not divisible by block {k}")
    b = bk // k
    out = t.data.reshape((b, k) + t.data.shape[1:]).sum(axis=1)
    return _result(out, [(t, lambda g: np.repeat(g, k, axis=0))])


def take_nodes(t: Tensor, idx: np.ndarray) -> Tensor:
    """t (B, n, d), idx (B,) -> (B, d): one row per batch element."""
    t = as_tensor(t)
    b = t.data.shape[0]
    rows = np.arange(b)
    # snapshot: callers may mutate their index array after this op, and
    # grad_fn must scatter to the rows that were read, not the current ones
    idx = np.array(idx, dtype=np.int64, copy=True)

    def grad_fn(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, idx), g)
        return full

    return _result(t.data[rows, idx, :].copy(), [(t, grad_fn)])


def take_per_row(t: Tensor, idx: np.ndarray) -> Tensor:
    """t (B, n), idx (B,) -> (B,): one entry per row."""
    t = as_tensor(t)
    b = t.data.shape[0]
    rows = np.arange(b)
    idx = np.array(idx, dtype=np.int64, copy=True)

    def grad_fn(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, idx), g)
        return full

    return _result(t.data[rows, idx].copy(), [(t, grad_fn)])


def where_mask(t: Tensor, mask: np.ndarray, fill: float = -np.inf) -> Tensor:
    """Replace entries where mask is False; no gradient flows to them."""
    t = as_tensor(t)
    mask = np.array(mask, dtype=bool, copy=True)
    return _result(
        np.where(mask, t.data, fill), [(t, lambda g: np.where(mask, g, 0.0))]
    )


def logsumexp(t: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp; tolerates -inf entries (masked scores)."""
    t = as_tensor(t)
    ax = axis % t.ndim
    m = np.max(t.data, axis=ax, keepdims=True)
    if not np.isfinite(m).all():
        raise ValueError("logsumexp over a fully masked axis")
    shifted = np.exp(t.data - m)
    total = shifted.sum(axis=ax, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return g * soft

    return _result(out if keepdims else np.squeeze(out, axis=ax), [(t, grad_fn)])


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    return sub(t, logsumexp(t, axis=axis, keepdims=True))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(t, axis=axis))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._links:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, grad_fn in node._links:
            piece = grad_fn(g)
            if parent.grad is None:
                parent.grad = piece.astype(np.float64, copy=True)
            else:
                parent.grad += piece


# ---------------------------------------------------------------------------
# parameters, Adam, checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1
INIT_SCHEME = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))"


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int | None = None) -> np.ndarray:
    fan = fan_in if fan_in is not None else shape[0]
    bound = 1.0 / np.sqrt(max(fan, 1))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named trainable tensors plus buffers and Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t: int = 0

    def add_param(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        return t

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer {name!r}")
        self.buffers[name] = np.array(array, dtype=np.float64)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def buffer(self, name: str) -> np.ndarray:
        return self.buffers[name]

    def names(self) -> list[str]:
        return sorted(self.params)

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def copy(self, reset_adam: bool = False) -> "ParamStore":
        other = ParamStore()
        for name, t in self.params.items():
            other.add_param(name, t.data.copy())
        for name, b in self.buffers.items():
            other.add_buffer(name, b.copy())
        if not reset_adam:
            for name in self.params:
                other.adam_m[name] = self.adam_m[name].copy()
                other.adam_v[name] = self.adam_v[name].copy()
            other.adam_t = self.adam_t
        return other

    def load_values(self, other: "ParamStore") -> None:
        """Overwrite parameter and buffer values in place (shape-checked)."""
        if self.names() != other.names():
            raise ValueError("parameter name sets differ")
        for name, t in self.params.items():
            src = other.params[name].data
            if src.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            t.data[...] = src
        for name in self.buffers:
            self.buffers[name][...] = other.buffers[name]

    def flat_values(self) -> np.ndarray:
        return np.concatenate([self.params[n].data.ravel() for n in self.names()])


def adam_step(
    store: ParamStore,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One Adam update over every parameter in the store."""
    b1, b2 = betas
    store.adam_t += 1
    t = store.adam_t
    for name in store.names():
        p = store.params[name]
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        m = store.adam_m[name]
        v = store.adam_v[name]
        m += (1 - b1) * (p.grad - m)
        v += (1 - b2) * (p.grad * p.grad - v)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def mha(
    query: Tensor,
    keys: Tensor,
    values: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    num_heads: int,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head attention; masked key positions get zero probability."""
    d = wq.data.shape[1]
    if d % num_heads:
        raise ValueError(f"model dim {d} not divisible by {num_heads} heads")
    dk = d // num_heads
    q = matmul(query, wq)
    k = matmul(keys, wk)
    v = matmul(values, wv)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ValueError("attention mask leaves no selectable key")
        if mask.ndim == 2 and q.ndim == 3:
            mask = mask[:, None, :]
    scale = 1.0 / np.sqrt(dk)
    heads = []
    for h in range(num_heads):
        lo, hi = h * dk, (h + 1) * dk
        qs = slice_lastdim(q, lo, hi)
        ks = slice_lastdim(k, lo, hi)
        vs = slice_lastdim(v, lo, hi)
        scores = mul(matmul(qs, swap_last2(ks)), scale)
        if mask is not None:
            scores = where_mask(scores, mask)
        probs = softmax(scores, axis=-1)
        heads.append(matmul(probs, vs))
    return matmul(concat(heads, axis=-1), wo)


def lstm_cell(
    x: Tensor,
    h: Tensor,
    c: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell; gate order (input, forget, cell, output)."""
    d = h.data.shape[-1]
    z = add(add(matmul(x, wx), matmul(h, wh)), b)
    i = sigmoid(slice_lastdim(z, 0, d))
    f = sigmoid(slice_lastdim(z, d, 2 * d))
    g = tanh(slice_lastdim(z, 2 * d, 3 * d))
    o = sigmoid(slice_lastdim(z, 3 * d, 4 * d))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2


BN_EPS = 1e-8
BN_MOMENTUM = 0.1


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
) -> Tensor:
    """Feature-wise normalization over all leading axes.

    Train mode normalizes with batch statistics (at least two rows) and
    updates the running buffers in place; infer mode is a fixed affine
    map through the running statistics.
    """
    d = x.data.shape[-1]
    lead = x.data.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    flat = reshape(x, (rows, d)) if x.ndim != 2 else x
    if training:
        if rows < 2:
            raise ValueError("train-mode batchnorm needs at least 2 rows")
        mu = mean(flat, axis=0)
        centered = sub(flat, mu)
        var = mean(mul(centered, centered), axis=0)
        running_mean += BN_MOMENTUM * (mu.data - running_mean)
        unbiased = var.data * rows / (rows - 1)
        running_var += BN_MOMENTUM * (unbiased - running_var)
        norm = div(centered, sqrt(add(var, BN_EPS)))
    else:
        norm = div(
            sub(flat, Tensor(running_mean)),
            Tensor(np.sqrt(running_var + BN_EPS)),
        )
    out = add(mul(norm, gamma), beta)
    return reshape(out, x.data.shape) if x.ndim != 2 else out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(store: ParamStore, path, meta: dict | None = None) -> None:
    """Single-file container: arrays plus a JSON metadata blob.

    Layout (npz keys): ``param/<name>``, ``buffer/<name>``,
    ``adam_m/<name>``, ``adam_v/<name>``, and ``meta`` holding JSON with
    the format version, Adam step count, init scheme, and whatever the
    caller adds (hyperparameters, RNG state, training config echo).
    """
    payload: dict[str, np.ndarray] = {}
    for name, t in store.params.items():
        payload[f"param/{name}"] = t.data
    for name, b in store.buffers.items():
        payload[f"buffer/{name}"] = b
    for name in store.params:
        payload[f"adam_m/{name}"] = store.adam_m[name]
        payload[f"adam_v/{name}"] = store.adam_v[name]
    blob = dict(meta or {})
    blob.setdefault("format_version", CHECKPOINT_VERSION)
    blob.setdefault("init_scheme", INIT_SCHEME)
    blob["adam_t"] = store.adam_t
    payload["meta"] = np.frombuffer(
        json.dumps(blob, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"].tobytes()).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta.get('format_version')}"
            )
        store = ParamStore()
        for key in data.files:
            if key.startswith("param/"):
                store.add_param(key[len("param/"):], data[key])
            elif key.startswith("buffer/"):
                store.add_buffer(key[len("buffer/"):], data[key])
        for key in data.files:
            if key.startswith("adam_m/"):
                store.adam_m[key[len("adam_m/"):]] = data[key].copy()
            elif key.startswith("adam_v/"):
                store.adam_v[key[len("adam_v/"):]] = data[key].copy()
        store.adam_t = int(meta.get("adam_t", 0))
    return store, meta
