"""Differentiable primitives: tensors with reverse-mode gradients, a parameter
store, seeded RNG streams, and a finite-difference gradient checker.

Every operation records its parents and a backward closure on the output
tensor; ``Tensor.backward()`` replays the recorded graph once in reverse
topological order. Values are double precision by default (single precision
passes through when the inputs carry it).
"""

from __future__ import annotations

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError

DEFAULT_DTYPE = np.float64

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-time forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense real array with an optional gradient buffer.

    ``data`` is a numpy array; ``grad`` stays ``None`` until ``backward()``
    reaches this tensor. Tensors produced by operations are immutable by
    convention once a forward pass completes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        # rebinding accumulation keeps aliased buffers safe from mutation
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise ConfigurationError(
                f"backward() requires a scalar output, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # --- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self):
        return mean(self)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(_as_array(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = rg
    out._parents = tuple(parents) if rg else ()
    out._backward_fn = backward if rg else None
    return out


# --- elementwise and linear algebra primitives ---------------------------


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, like=a)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _lift(a)
    b = _lift(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2:
        raise ConfigurationError(
            f"matmul supports vector/matrix @ matrix, got {a.shape} @ {b.shape}"
        )
    if a.data.shape[-1] != b.data.shape[0]:
        raise ConfigurationError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            if a.data.ndim == 1:
                b._accumulate(np.outer(a.data, g))
            else:
                b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tensors, backward)


def reshape(t: Tensor, shape) -> Tensor:
    t = _lift(t)
    data = t.data.reshape(shape)

    def backward(g):
        t._accumulate(g.reshape(t.data.shape))

    return _make(data, (t,), backward)


def relu(t: Tensor) -> Tensor:
    t = _lift(t)
    data = np.maximum(t.data, 0.0)

    def backward(g):
        t._accumulate(g * (t.data > 0))

    return _make(data, (t,), backward)


def sigmoid(t: Tensor) -> Tensor:
    t = _lift(t)
    data = 1.0 / (1.0 + np.exp(-np.clip(t.data, -500, 500)))

    def backward(g):
        t._accumulate(g * data * (1.0 - data))

    return _make(data, (t,), backward)


def tanh(t: Tensor) -> Tensor:
    t = _lift(t)
    data = np.tanh(t.data)

    def backward(g):
        t._accumulate(g * (1.0 - data * data))

    return _make(data, (t,), backward)


def softplus(t: Tensor) -> Tensor:
    t = _lift(t)
    data = np.logaddexp(0.0, t.data)

    def backward(g):
        t._accumulate(g / (1.0 + np.exp(-t.data)))

    return _make(data, (t,), backward)


def exp(t: Tensor) -> Tensor:
    t = _lift(t)
    data = np.exp(t.data)

    def backward(g):
        t._accumulate(g * data)

    return _make(data, (t,), backward)


def log(t: Tensor) -> Tensor:
    t = _lift(t)
    data = np.log(t.data)

    def backward(g):
        t._accumulate(g / t.data)

    return _make(data, (t,), backward)


def tensor_sum(t: Tensor, axis=None) -> Tensor:
    t = _lift(t)
    data = np.asarray(t.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            t._accumulate(np.broadcast_to(g, t.data.shape))
        else:
            t._accumulate(np.broadcast_to(np.expand_dims(g, axis), t.data.shape))

    return _make(data, (t,), backward)


def mean(t: Tensor) -> Tensor:
    t = _lift(t)
    n = t.data.size
    data = np.asarray(t.data.mean())

    def backward(g):
        t._accumulate(np.broadcast_to(g / n, t.data.shape))

    return _make(data, (t,), backward)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Select rows of ``table`` by integer id; gradients scatter-add back."""
    table = _lift(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ConfigurationError(f"gather_rows expects a 1-d id array, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ConfigurationError(
            f"row id out of range [0, {table.data.shape[0]}): {ids.min()}..{ids.max()}"
        )
    data = table.data[ids]

    def backward(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        table._accumulate(acc)

    return _make(data, (table,), backward)


def pick_rows(t: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = t[i, ids[i]]."""
    t = _lift(t)
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(t.data.shape[0])
    data = t.data[rows, ids]

    def backward(g):
        acc = np.zeros_like(t.data)
        acc[rows, ids] = g
        t._accumulate(acc)

    return _make(data, (t,), backward)


def max_pool_rows(t: Tensor, group_size: int) -> Tensor:
    """Max over consecutive groups of rows: (G*P, F) -> (G, F).

    Gradient routes to the first argmax row of each group.
    """
    t = _lift(t)
    n, f = t.data.shape
    if n % group_size:
        raise ConfigurationError(f"{n} rows not divisible by group size {group_size}")
    g3 = t.data.reshape(-1, group_size, f)
    idx = g3.argmax(axis=1)
    data = np.take_along_axis(g3, idx[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        acc = np.zeros_like(g3)
        np.put_along_axis(acc, idx[:, None, :], g[:, None, :], axis=1)
        t._accumulate(acc.reshape(n, f))

    return _make(data, (t,), backward)


# --- row-wise softmax family ---------------------------------------------


def _softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(t: Tensor) -> Tensor:
    """Overflow-safe softmax over the last axis; rows sum to one."""
    t = _lift(t)
    if not np.all(np.isfinite(t.data)):
        raise NumericError("softmax requires finite inputs")
    data = _softmax_np(t.data)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        t._accumulate(data * (g - dot))

    return _make(data, (t,), backward)


def log_softmax(t: Tensor) -> Tensor:
    t = _lift(t)
    data = _log_softmax_np(t.data)

    def backward(g):
        t._accumulate(g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return _make(data, (t,), backward)


def cross_entropy_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood from logits: (B, V), (B,) -> (B,)."""
    logits = _lift(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.data.shape[-1]):
        raise ConfigurationError(
            f"target id out of range [0, {logits.data.shape[-1]})"
        )
    logp = _log_softmax_np(logits.data)
    rows = np.arange(logits.data.shape[0])
    data = -logp[rows, targets]

    def backward(g):
        grad = np.exp(logp) * g[:, None]
        grad[rows, targets] -= g
        logits._accumulate(grad)

    return _make(data, (logits,), backward)


def cross_entropy_from_logits(logits: Tensor, target: int) -> Tensor:
    """Scalar cross-entropy of a single logit vector against a class id."""
    logits = _lift(logits)
    if logits.data.ndim != 1:
        raise ConfigurationError("cross_entropy_from_logits expects a vector")
    if not 0 <= int(target) < logits.data.shape[0]:
        raise ConfigurationError(
            f"target {target} out of range [0, {logits.data.shape[0]})"
        )
    row = reshape(logits, (1, -1))
    return reshape(cross_entropy_rows(row, np.array([int(target)])), ())


# --- model-facing composite primitives ------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def mlp_forward(x: Tensor, stack: Sequence[tuple[Tensor, Tensor]],
                activations: Sequence[str]) -> Tensor:
    """Run a fully connected stack with per-layer activation tags.

    ``stack`` is a sequence of (weight, bias) pairs whose dimensions must
    chain; tags are ``relu``, ``softplus``, or ``none``. Intermediates are
    recorded on the graph for the backward pass.
    """
    if len(stack) != len(activations):
        raise ConfigurationError(
            f"{len(stack)} layers but {len(activations)} activation tags"
        )
    out = x
    for i, ((w, b), act) in enumerate(zip(stack, activations)):
        if out.data.shape[-1] != w.data.shape[0]:
            raise ConfigurationError(
                f"layer {i}: input dim {out.data.shape[-1]} does not match "
                f"weight shape {w.data.shape}"
            )
        out = linear(out, w, b)
        if act == "relu":
            out = relu(out)
        elif act == "softplus":
            out = softplus(out)
        elif act != "none":
            raise ConfigurationError(f"unknown activation tag {act!r}")
    return out


@dataclass
class GruWeights:
    """Weights for a single GRU cell; input-to-hidden, hidden-to-hidden, bias
    for the reset, update, and candidate paths."""

    w_xr: Tensor
    w_hr: Tensor
    b_r: Tensor
    w_xu: Tensor
    w_hu: Tensor
    b_u: Tensor
    w_xn: Tensor
    w_hn: Tensor
    b_n: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {
            "xr": self.w_xr, "hr": self.w_hr, "br": self.b_r,
            "xu": self.w_xu, "hu": self.w_hu, "bu": self.b_u,
            "xn": self.w_xn, "hn": self.w_hn, "bn": self.b_n,
        }


def gru_cell(x: Tensor, h_prev: Tensor, w: GruWeights) -> Tensor:
    """One GRU step. Gates stay in (0, 1); returns the next hidden state.

    reset    r = sigmoid(x Wxr + h Whr + br)
    update   u = sigmoid(x Wxu + h Whu + bu)
    cand     n = tanh(x Wxn + (r * h) Whn + bn)
    next     h' = u * h + (1 - u) * n
    """
    if x.data.shape[-1] != w.w_xr.data.shape[0]:
        raise ConfigurationError(
            f"gru input dim {x.data.shape[-1]} does not match {w.w_xr.data.shape}"
        )
    if h_prev.data.shape[-1] != w.w_hr.data.shape[0]:
        raise ConfigurationError(
            f"gru hidden dim {h_prev.data.shape[-1]} does not match {w.w_hr.data.shape}"
        )
    r = sigmoid(add(add(matmul(x, w.w_xr), matmul(h_prev, w.w_hr)), w.b_r))
    u = sigmoid(add(add(matmul(x, w.w_xu), matmul(h_prev, w.w_hu)), w.b_u))
    n = tanh(add(add(matmul(x, w.w_xn), matmul(mul(r, h_prev), w.w_hn)), w.b_n))
    return add(mul(u, h_prev), mul(add(1.0, mul(u, -1.0)), n))


@dataclass
class GaussianParams:
    """Diagonal Gaussian: mean and strictly positive standard deviation."""

    mu: Tensor
    sigma: Tensor


def reparameterize(g: GaussianParams, rng: np.random.Generator) -> Tensor:
    """Sample z = mu + sigma * eps with eps ~ N(0, I).

    Gradient flows to mu and sigma only; eps is a constant draw.
    """
    if g.mu.data.shape != g.sigma.data.shape:
        raise ConfigurationError(
            f"mu/sigma shape mismatch: {g.mu.shape} vs {g.sigma.shape}"
        )
    if np.any(g.sigma.data <= 0):
        raise NumericError("reparameterize requires strictly positive sigma")
    eps = rng.standard_normal(g.mu.data.shape)
    return add(g.mu, mul(g.sigma, Tensor(eps.astype(g.mu.data.dtype, copy=False))))


def kl_gaussians(q: GaussianParams, p: GaussianParams) -> Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over the last axis.

    Returns a scalar for vector inputs, a per-row vector for batched inputs.
    """
    if q.mu.data.shape != p.mu.data.shape:
        raise ConfigurationError(
            f"KL dimension mismatch: {q.mu.shape} vs {p.mu.shape}"
        )
    if np.any(q.sigma.data <= 0) or np.any(p.sigma.data <= 0):
        raise NumericError("kl_gaussians requires strictly positive sigmas")
    d = add(q.mu, mul(p.mu, -1.0))
    var_p = mul(p.sigma, p.sigma)
    ratio = div(add(mul(q.sigma, q.sigma), mul(d, d)), var_p)
    elem = add(add(log(p.sigma), mul(log(q.sigma), -1.0)), mul(add(ratio, -1.0), 0.5))
    return tensor_sum(elem, axis=-1)


# --- parameter store -------------------------------------------------------


class ParamStore:
    """Ordered name -> Tensor map for every learnable weight.

    Iteration order is the insertion order, which is deterministic for a
    fixed construction sequence; names are unique.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._tensors.items()

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}


# --- seeded random streams -------------------------------------------------


def _stream_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Deterministic random source with independent named streams.

    The same (seed, stream name) pair always yields the same draw sequence,
    regardless of which other streams were touched first or in what order.
    Typical stream names: ``init``, ``noise``, ``latent``, ``sampling``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.default_rng(_stream_seed(self.seed, name))
            self._streams[name] = gen
        return gen

    def state(self) -> dict:
        return {
            "seed": self.seed,
            "streams": {
                name: gen.bit_generator.state for name, gen in self._streams.items()
            },
        }

    def set_state(self, state: dict):
        self.seed = int(state["seed"])
        self._streams = {}
        for name, bg_state in state["streams"].items():
            gen = np.random.default_rng(0)
            gen.bit_generator.state = bg_state
            self._streams[name] = gen


# --- finite-difference gradient checking -----------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    max_rel_err: float
    worst_param: str
    total_checked: int
    per_param: list[GradCheckEntry] = field(default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tolerance:.1e}, worst {self.worst_param}, "
            f"{self.total_checked} elements)"
        )


def check_gradient(loss_fn: Callable[[], Tensor], params, tolerance: float = 1e-4,
                   fd_step: float = 1e-5, max_checks: int = 256,
                   sample_seed: int = 0, corrupt: bool = False) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss to central finite differences.

    ``loss_fn`` must be a pure function of the parameter values (re-seed any
    noise inside it). Every parameter element is checked when the total count
    is at most ``max_checks``; otherwise a uniform random subsample of
    ``max_checks`` elements is used. Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-8). ``corrupt=True`` perturbs the analytic
    gradients before comparison, as a negative control that must fail.
    """
    named = dict(params.items()) if isinstance(params, ParamStore) else dict(params)
    for t in named.values():
        t.grad = None
    loss = loss_fn()
    if loss.data.size != 1:
        raise ConfigurationError("check_gradient requires a scalar-valued loss")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named.items()
    }
    if corrupt:
        analytic = {name: g * 1.01 + 1e-3 for name, g in analytic.items()}

    elements = [(name, i) for name, t in named.items() for i in range(t.data.size)]
    if len(elements) > max_checks:
        picker = np.random.default_rng(sample_seed)
        chosen = picker.choice(len(elements), size=max_checks, replace=False)
        elements = [elements[i] for i in sorted(chosen)]

    errs: dict[str, float] = {name: 0.0 for name in named}
    counts: dict[str, int] = {name: 0 for name in named}
    for name, i in elements:
        flat = named[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + fd_step
        f_plus = loss_fn().item()
        flat[i] = orig - fd_step
        f_minus = loss_fn().item()
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * fd_step)
        a = float(analytic[name].reshape(-1)[i])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        errs[name] = max(errs[name], rel)
        counts[name] += 1

    worst = max(errs, key=errs.get)
    report = GradCheckReport(
        passed=errs[worst] < tolerance,
        tolerance=tolerance,
        max_rel_err=errs[worst],
        worst_param=worst,
        total_checked=len(elements),
        per_param=[
            GradCheckEntry(name, errs[name], counts[name])
            for name in named
            if counts[name]
        ],
    )
    return report
