"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations execute eagerly on numpy arrays.  While a ComputationGraph is
active (``with graph: ...``) every differentiable op appends a record with
its backward rule; ``backward(loss, graph)`` replays the records in reverse
to accumulate gradients.  Without an active graph the same functions run as
plain numpy math, which is the fast path used at inference time.

Storage and compute are float64; checkpoints serialize at float32 (see
``wot.checkpoint``).  There is no implicit broadcasting beyond scalar
``scale`` — row-vector bias/gate application is provided by the dedicated
``add_bias`` / ``mul_rowvec`` ops so every backward rule stays auditable.
Several grouped ops (``pairs_sum``, ``block_qk``, ``attn_mix``,
``weighted_pool``) treat a (B*n, d) matrix as B independent n-row blocks;
they exist so a whole batch runs through single numpy calls.
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputationGraph",
    "ShapeError",
    "GraphError",
    "NonFiniteError",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "mul_rowvec",
    "sigmoid",
    "tanh",
    "gelu",
    "log",
    "clamp",
    "softmax_rows",
    "layer_norm",
    "concat_last",
    "slice_rows",
    "slice_cols",
    "reshape",
    "embedding_mean",
    "interleave_rows",
    "pairs_sum",
    "block_qk",
    "attn_mix",
    "weighted_pool",
    "tile_rows",
    "sum_all",
    "dropout",
    "backward",
    "grad_check",
]

_ids = itertools.count()
_tls = threading.local()

# tanh-approximation constants for GELU:
#   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class GraphError(RuntimeError):
    """The computation graph is malformed (bad topology, non-scalar loss)."""


class NonFiniteError(FloatingPointError):
    """A tensor contains NaN or Inf."""


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``requires_grad`` marks tensors that should receive gradients; for
    intermediate results it is inherited from the inputs so that backward
    can skip branches made entirely of constants.
    """

    __slots__ = ("data", "grad", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def assert_finite(self, name: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{name} contains NaN or Inf")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("op", "inputs", "out", "back")

    def __init__(self, op, inputs, out, back):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.back = back


class ComputationGraph:
    """Append-only tape of operation records in execution order.

    Execution order is topological by construction (an op can only consume
    tensors that already exist), which ``record`` verifies via monotonically
    increasing tensor ids.  Backward visits every record exactly once, in
    reverse, so gradient accumulation order is deterministic.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def record(self, op: str, inputs: Sequence[Tensor], out: Tensor,
               back: Callable[[np.ndarray], None]) -> None:
        for t in inputs:
            if t.id >= out.id:
                raise GraphError(
                    f"cycle detected: op '{op}' consumes tensor id {t.id} "
                    f">= output id {out.id}")
        self.records.append(_Record(op, tuple(inputs), out, back))
        self._produced.add(out.id)

    def leaves(self) -> list[Tensor]:
        """Tensors that feed the graph but were not produced by it."""
        seen: dict[int, Tensor] = {}
        for rec in self.records:
            for t in rec.inputs:
                if t.id not in self._produced and t.requires_grad:
                    seen.setdefault(t.id, t)
        return list(seen.values())

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "ComputationGraph":
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tls.stack.pop()


def _active() -> ComputationGraph | None:
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


def _acc(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient that may alias an upstream buffer or view."""
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


def _own(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient the caller guarantees is a fresh private array."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _result(op: str, inputs: Sequence[Tensor], data: np.ndarray,
            make_back) -> Tensor:
    """Wrap op output; attach the backward rule when a tape is active."""
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    graph = _active()
    if graph is not None and rg:
        graph.record(op, inputs, out, make_back())
    return out


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    data = a.data @ b.data

    def back():
        def fn(dout):
            if a.requires_grad:
                _own(a, dout @ b.data.T)
            if b.requires_grad:
                _own(b, a.data.T @ dout)
        return fn

    return _result("matmul", (a, b), data, back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    data = a.data + b.data

    def back():
        def fn(dout):
            if a.requires_grad:
                _acc(a, dout)
            if b.requires_grad:
                _acc(b, dout)
        return fn

    return _result("add", (a, b), data, back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    data = a.data - b.data

    def back():
        def fn(dout):
            if a.requires_grad:
                _acc(a, dout)
            if b.requires_grad:
                _own(b, -dout)
        return fn

    return _result("sub", (a, b), data, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    data = a.data * b.data

    def back():
        def fn(dout):
            if a.requires_grad:
                _own(a, dout * b.data)
            if b.requires_grad:
                _own(b, dout * a.data)
        return fn

    return _result("mul", (a, b), data, back)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (the only broadcast this core allows)."""
    c = float(c)
    data = a.data * c

    def back():
        def fn(dout):
            if a.requires_grad:
                _own(a, dout * c)
        return fn

    return _result("scale", (a,), data, back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a (1, n) row vector to every row of a (m, n) matrix."""
    if b.data.ndim != 2 or b.shape[0] != 1 or b.shape[1] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit {x.shape}")
    data = x.data + b.data

    def back():
        def fn(dout):
            if x.requires_grad:
                _acc(x, dout)
            if b.requires_grad:
                _own(b, dout.sum(axis=0, keepdims=True)
                     if dout.ndim == 2 else dout.reshape(1, -1).copy())
        return fn

    return _result("add_bias", (x, b), data, back)


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of a (m, n) matrix elementwise by a (1, n) vector."""
    if v.data.ndim != 2 or v.shape[0] != 1 or v.shape[1] != x.shape[-1]:
        raise ShapeError(f"mul_rowvec: vector {v.shape} does not fit {x.shape}")
    data = x.data * v.data

    def back():
        def fn(dout):
            if x.requires_grad:
                _own(x, dout * v.data)
            if v.requires_grad:
                _own(v, (dout * x.data).sum(axis=0, keepdims=True))
        return fn

    return _result("mul_rowvec", (x, v), data, back)


def _unary(op, a, data, dfn):
    # dfn must return a fresh array
    def back():
        def fn(dout):
            if a.requires_grad:
                _own(a, dfn(dout))
        return fn

    return _result(op, (a,), data, back)


def sigmoid(a: Tensor) -> Tensor:
    # computed via tanh for stability at large |x|
    data = np.tanh(0.5 * a.data)
    data += 1.0
    data *= 0.5

    def dfn(d):
        g = 1.0 - data
        g *= data
        g *= d
        return g

    return _unary("sigmoid", a, data, dfn)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def dfn(d):
        g = data * data
        np.subtract(1.0, g, out=g)
        g *= d
        return g

    return _unary("tanh", a, data, dfn)


def gelu(a: Tensor) -> Tensor:
    """GELU via the tanh approximation (constants documented in module doc)."""
    x = a.data
    x2 = x * x
    t = x2 * x
    t *= _GELU_A
    t += x
    t *= _GELU_C
    np.tanh(t, out=t)
    data = t + 1.0
    data *= x
    data *= 0.5

    def dfn(d):
        dinner = x2 * (3.0 * _GELU_A)
        dinner += 1.0
        dinner *= _GELU_C
        sech2 = t * t
        np.subtract(1.0, sech2, out=sech2)
        sech2 *= dinner
        sech2 *= x
        g = t + 1.0
        g += sech2
        g *= 0.5
        g *= d
        return g

    return _unary("gelu", a, data, dfn)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _unary("log", a, data, lambda d: d / a.data)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only through the interior."""
    data = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)
    return _unary("clamp", a, data, lambda d: d * mask)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"softmax_rows: expected vector or matrix, got {x.shape}")
    if x.shape[-1] == 0:
        raise ShapeError("softmax_rows: empty row")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def dfn(d):
        dot = (d * data).sum(axis=-1, keepdims=True)
        return data * (d - dot)

    return _unary("softmax_rows", x, data, dfn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then apply gain and bias.

    Backward differentiates through the mean and variance.
    """
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("layer_norm: last dimension must be >= 1")
    if gain.shape[-1] != n or bias.shape[-1] != n:
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match "
            f"last dim {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def back():
        def fn(dout):
            if gain.requires_grad:
                g = (dout * xhat).sum(axis=0, keepdims=True) \
                    if dout.ndim == 2 else (dout * xhat).reshape(1, -1)
                _own(gain, g)
            if bias.requires_grad:
                b = dout.sum(axis=0, keepdims=True) \
                    if dout.ndim == 2 else dout.reshape(1, -1).copy()
                _own(bias, b)
            if x.requires_grad:
                dxhat = dout * gain.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                dxhat -= m1
                dxhat -= xhat * m2
                dxhat *= inv
                _own(x, dxhat)
        return fn

    return _result("layer_norm", (x, gain, bias), data, back)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last dimension."""
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat_last: rank mismatch {a.shape} vs {b.shape}")
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(
            f"concat_last: leading dims differ: {a.shape} vs {b.shape}")
    na = a.shape[-1]
    data = np.concatenate([a.data, b.data], axis=-1)

    def back():
        def fn(dout):
            if a.requires_grad:
                _acc(a, dout[..., :na])
            if b.requires_grad:
                _acc(b, dout[..., na:])
        return fn

    return _result("concat_last", (a, b), data, back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[start:stop].copy()

    def back():
        def fn(dout):
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[start:stop] = dout
                _own(x, g)
        return fn

    return _result("slice_rows", (x,), data, back)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[..., start:stop].copy()

    def back():
        def fn(dout):
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[..., start:stop] = dout
                _own(x, g)
        return fn

    return _result("slice_cols", (x,), data, back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape).copy()

    def back():
        def fn(dout):
            if x.requires_grad:
                _acc(x, dout.reshape(x.data.shape))
        return fn

    return _result("reshape", (x,), data, back)


def embedding_mean(table: Tensor, ids: Sequence[Sequence[int]]) -> Tensor:
    """Mean of embedding rows per id list: row b is table[ids[b]].mean(0).

    Gradients flow only into the rows named by ``ids``; a row listed twice
    in one sample receives its share twice.
    """
    if any(len(row) == 0 for row in ids):
        raise ShapeError("embedding_mean: empty id list")
    vocab = table.shape[0]
    for row in ids:
        for i in row:
            if not 0 <= i < vocab:
                raise ShapeError(
                    f"embedding_mean: id {i} out of range [0, {vocab})")
    data = np.stack([table.data[list(row)].mean(axis=0) for row in ids])

    def back():
        def fn(dout):
            if table.requires_grad:
                g = np.zeros_like(table.data)
                for b, row in enumerate(ids):
                    np.add.at(g, list(row), dout[b] / len(row))
                _own(table, g)
        return fn

    return _result("embedding_mean", (table,), data, back)


def interleave_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack n tensors of shape (B, d) into (B*n, d) with rows grouped per
    leading index: output row b*n + i comes from parts[i][b]."""
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeError(f"interleave_rows: mixed shapes {sorted(shapes)}")
    b, d = parts[0].shape
    n = len(parts)
    data = np.stack([p.data for p in parts], axis=1).reshape(b * n, d)

    def back():
        def fn(dout):
            d3 = dout.reshape(b, n, d)
            for i, p in enumerate(parts):
                if p.requires_grad:
                    _acc(p, d3[:, i, :])
        return fn

    return _result("interleave_rows", tuple(parts), data, back)


def pairs_sum(u: Tensor, v: Tensor, n: int) -> Tensor:
    """All-pairs row sums within each n-row block.

    For (B*n, d) inputs, output row b*n*n + i*n + j is u[b*n+i] + v[b*n+j].
    Together with a split weight matrix this realizes a linear layer over
    pairwise concatenations [row_i, row_j] without materializing them.
    """
    if u.shape != v.shape or u.shape[0] % n != 0:
        raise ShapeError(f"pairs_sum: bad shapes {u.shape}, {v.shape} for n={n}")
    b = u.shape[0] // n
    d = u.shape[1]
    u3 = u.data.reshape(b, n, 1, d)
    v3 = v.data.reshape(b, 1, n, d)
    data = (u3 + v3).reshape(b * n * n, d)

    def back():
        def fn(dout):
            d4 = dout.reshape(b, n, n, d)
            if u.requires_grad:
                _own(u, d4.sum(axis=2).reshape(b * n, d))
            if v.requires_grad:
                _own(v, d4.sum(axis=1).reshape(b * n, d))
        return fn

    return _result("pairs_sum", (u, v), data, back)


def block_qk(q: Tensor, k: Tensor, n: int) -> Tensor:
    """Per-block dot-product scores: out[b*n+i, j] = q[b*n+i] . k[b*n+j]."""
    if q.shape != k.shape or q.shape[0] % n != 0:
        raise ShapeError(f"block_qk: bad shapes {q.shape}, {k.shape} for n={n}")
    b = q.shape[0] // n
    d = q.shape[1]
    q3 = q.data.reshape(b, n, d)
    k3 = k.data.reshape(b, n, d)
    data = np.matmul(q3, k3.transpose(0, 2, 1)).reshape(b * n, n)

    def back():
        def fn(dout):
            d3 = dout.reshape(b, n, n)
            if q.requires_grad:
                _own(q, np.matmul(d3, k3).reshape(b * n, d))
            if k.requires_grad:
                _own(k, np.matmul(d3.transpose(0, 2, 1), q3).reshape(b * n, d))
        return fn

    return _result("block_qk", (q, k), data, back)


def attn_mix(a: Tensor, v: Tensor, n: int) -> Tensor:
    """Per-block mixing: out[b*n+i] = sum_j a[b*n+i, j] * v[b*n+j]."""
    if a.shape[-1] != n or a.shape[0] % n != 0 or v.shape[0] != a.shape[0]:
        raise ShapeError(f"attn_mix: bad shapes {a.shape}, {v.shape} for n={n}")
    b = a.shape[0] // n
    d = v.shape[1]
    a3 = a.data.reshape(b, n, n)
    v3 = v.data.reshape(b, n, d)
    data = np.matmul(a3, v3).reshape(b * n, d)

    def back():
        def fn(dout):
            d3 = dout.reshape(b, n, d)
            if a.requires_grad:
                _own(a, np.matmul(d3, v3.transpose(0, 2, 1)).reshape(b * n, n))
            if v.requires_grad:
                _own(v, np.matmul(a3.transpose(0, 2, 1), d3).reshape(b * n, d))
        return fn

    return _result("attn_mix", (a, v), data, back)


def weighted_pool(w: Tensor, x: Tensor, n: int) -> Tensor:
    """Pool each n-row block of x with weights w: out[b] = sum_i w[b,i] x[b*n+i]."""
    if w.shape[-1] != n or x.shape[0] != w.shape[0] * n:
        raise ShapeError(f"weighted_pool: bad shapes {w.shape}, {x.shape} for n={n}")
    b = w.shape[0]
    d = x.shape[1]
    x3 = x.data.reshape(b, n, d)
    data = np.matmul(w.data.reshape(b, 1, n), x3).reshape(b, d)

    def back():
        def fn(dout):
            if w.requires_grad:
                _own(w, np.matmul(x3, dout.reshape(b, d, 1)).reshape(b, n))
            if x.requires_grad:
                g = w.data.reshape(b, n, 1) * dout.reshape(b, 1, d)
                _own(x, g.reshape(b * n, d))
        return fn

    return _result("weighted_pool", (w, x), data, back)


def tile_rows(x: Tensor, reps: int) -> Tensor:
    """Repeat a (m, n) matrix reps times along rows; backward sums the tiles."""
    m = x.shape[0]
    data = np.tile(x.data, (reps, 1))

    def back():
        def fn(dout):
            if x.requires_grad:
                _own(x, dout.reshape(reps, m, x.shape[1]).sum(axis=0))
        return fn

    return _result("tile_rows", (x,), data, back)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a (1, 1) tensor."""
    data = np.array([[x.data.sum()]])

    def back():
        def fn(dout):
            if x.requires_grad:
                _own(x, np.full_like(x.data, dout.reshape(-1)[0]))
        return fn

    return _result("sum_all", (x,), data, back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; draws one mask per call from ``rng``."""
    if rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    data = x.data * factor
    return _unary("dropout", x, data, lambda d: d * factor)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor, graph: ComputationGraph) -> dict[int, np.ndarray]:
    """Accumulate gradients of a scalar loss through a recorded graph.

    Returns a map from leaf-tensor id to its gradient.  Records are replayed
    strictly in reverse recording order, so two runs over identical graphs
    produce bitwise-identical gradients.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(graph.records):
        dout = rec.out.grad
        if dout is None:
            continue
        rec.back(dout)
    return {t.id: t.grad for t in graph.leaves() if t.grad is not None}


def grad_check(f: Callable[..., Tensor], inputs: Iterable[Tensor],
               eps: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of ``f(*inputs)`` against central differences.

    ``f`` must return a scalar tensor and be deterministic.  Checks every
    element of every input by default; ``max_entries`` limits the number of
    perturbed elements per input (sampled via ``rng``), which keeps large
    models tractable.  Returns the worst relative error seen, where
    rel = |a - n| / max(|a|, |n|, 1e-6).
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    graph = ComputationGraph()
    with graph:
        loss = f(*inputs)
    if loss.data.size != 1:
        raise GraphError("grad_check: f must be scalar-valued")
    loss.assert_finite("grad_check loss")
    backward(loss, graph)

    def eval_loss() -> float:
        out = f(*inputs)
        out.assert_finite("grad_check intermediate")
        return out.item()

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        aflat = analytic.reshape(-1)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                raise ValueError("grad_check: max_entries requires rng")
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = eval_loss()
            flat[i] = orig - eps
            fm = eval_loss()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            rel = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-6)
            if rel > worst:
                worst = rel
    return worst
