"""Reverse-mode automatic differentiation over numpy float64 arrays.

Tensors live on a Tape.  Every operation appends one record (op kind, input
ids, output id, backward closure).  ``Tape.backward`` walks the records once
in reverse, accumulating adjoints into a dict keyed by tensor id, and finally
writes ``.grad`` on every leaf (unreached leaves get zeros).

All ops are registered in a table so they can also be invoked dynamically via
``apply(op_kind, ...)``; unknown kinds are rejected.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericalError
from .rng import RngStream

Array = np.ndarray

_OPS: dict[str, Callable] = {}


def _register(name: str):
    def deco(fn):
        _OPS[name] = fn
        return fn
    return deco


def apply(op_kind: str, *inputs, **kwargs):
    """Dynamic dispatch into the op table; unknown kinds are rejected."""
    fn = _OPS.get(op_kind)
    if fn is None:
        raise DataError(f"unknown op kind '{op_kind}'; known: {sorted(_OPS)}")
    return fn(*inputs, **kwargs)


def _as_array(values) -> Array:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim > 0 and min(a.shape) < 1:
        raise DataError(f"zero-extent tensor not supported, shape {a.shape}")
    return a


class Tensor:
    """Value node on a tape.  ``grad`` is populated on leaves by backward()."""

    __slots__ = ("values", "tape", "tape_id", "requires_grad", "grad")

    def __init__(self, values: Array, tape: "Tape", tape_id: int, requires_grad: bool):
        self.values = values
        self.tape = tape
        self.tape_id = tape_id
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, id={self.tape_id})"

    # arithmetic sugar; every route lands in a registered op
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self._records: list[tuple[str, int, tuple[int, ...], Callable]] = []
        self._leaves: list[Tensor] = []
        self._count = 0

    def _make(self, values: Array, requires_grad: bool) -> Tensor:
        t = Tensor(_as_array(values), self, self._count, requires_grad)
        self._count += 1
        return t

    def leaf(self, values, requires_grad: bool = True) -> Tensor:
        t = self._make(values, requires_grad)
        if requires_grad:
            self._leaves.append(t)
        return t

    def constant(self, values) -> Tensor:
        return self._make(values, requires_grad=False)

    def record(self, op: str, out_values: Array, inputs: Sequence[Tensor],
               backward_fn: Callable) -> Tensor:
        out = self._make(out_values, requires_grad=any(t.requires_grad for t in inputs))
        if out.requires_grad:
            ids = tuple(t.tape_id if t.requires_grad else -1 for t in inputs)
            self._records.append((op, out.tape_id, ids, backward_fn))
        return out

    def backward(self, loss: Tensor) -> None:
        """Accumulate adjoints from a scalar loss into every leaf's .grad."""
        if loss.tape is not self:
            raise DataError("loss tensor belongs to a different tape")
        if loss.values.size != 1:
            raise DataError(f"backward needs a scalar loss, got shape {loss.values.shape}")
        grads: dict[int, Array] = {loss.tape_id: np.ones_like(loss.values)}
        for op, out_id, in_ids, fn in reversed(self._records):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for tid, gi in zip(in_ids, fn(g)):
                if tid < 0 or gi is None:
                    continue
                acc = grads.get(tid)
                grads[tid] = gi if acc is None else acc + gi
        for t in self._leaves:
            g = grads.get(t.tape_id)
            if g is None:
                t.grad = np.zeros_like(t.values)
            else:
                t.grad = np.asarray(g, dtype=np.float64).reshape(t.values.shape)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise DataError("operation needs at least one Tensor input")


def _wrap(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise DataError("tensors from different tapes cannot be combined")
        return x
    return tape.constant(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


@_register("add")
def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    out = a.values + b.values
    ash, bsh = a.values.shape, b.values.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return tape.record("add", out, (a, b), bwd)


@_register("sub")
def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    out = a.values - b.values
    ash, bsh = a.values.shape, b.values.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return tape.record("sub", out, (a, b), bwd)


@_register("mul")
def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    av, bv = a.values, b.values
    out = av * bv

    def bwd(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return tape.record("mul", out, (a, b), bwd)


@_register("div")
def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    av, bv = a.values, b.values
    out = av / bv

    def bwd(g):
        return (_unbroadcast(g / bv, av.shape),
                _unbroadcast(-g * av / (bv * bv), bv.shape))

    return tape.record("div", out, (a, b), bwd)


@_register("neg")
def neg(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    return tape.record("neg", -a.values, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# matmul and shape ops


@_register("matmul")
def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics, including batched 3-D operands."""
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0:
        raise DataError("matmul requires operands with ndim >= 1")
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    if a2.shape[-1] != b2.shape[-2]:
        raise DataError(
            f"matmul inner extents differ: {av.shape} @ {bv.shape} "
            f"({a2.shape[-1]} vs {b2.shape[-2]})")
    try:
        out2 = np.matmul(a2, b2)
    except ValueError as e:
        raise DataError(f"matmul batch shapes incompatible: {av.shape} @ {bv.shape}") from e

    def bwd(g):
        g2 = g
        if av.ndim == 1:
            g2 = g2[..., None, :] if bv.ndim > 1 else np.reshape(g2, (1, 1))
        if bv.ndim == 1 and av.ndim > 1:
            g2 = g2[..., None]
        ga2 = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb2 = np.matmul(np.swapaxes(a2, -1, -2), g2)
        ga = _unbroadcast(ga2, a2.shape)
        gb = _unbroadcast(gb2, b2.shape)
        if av.ndim == 1:
            ga = ga.reshape(av.shape)
        if bv.ndim == 1:
            gb = gb.reshape(bv.shape)
        return ga, gb

    out = out2
    if av.ndim == 1:
        out = out[..., 0, :] if bv.ndim > 1 else out.reshape(())
    elif bv.ndim == 1:
        out = out[..., 0]
    return tape.record("matmul", out, (a, b), bwd)


@_register("transpose")
def transpose(a, axes=None) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    if axes is None:
        axes = tuple(reversed(range(a.values.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return tape.record("transpose", np.transpose(a.values, axes), (a,),
                       lambda g: (np.transpose(g, inv),))


def swap_last2(a) -> Tensor:
    axes = list(range(a.values.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


@_register("reshape")
def reshape(a, shape) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    old = a.values.shape
    return tape.record("reshape", np.reshape(a.values, shape), (a,),
                       lambda g: (np.reshape(g, old),))


@_register("concat")
def concat(tensors, axis: int = 0) -> Tensor:
    tape = _tape_of(*tensors)
    ts = [_wrap(tape, t) for t in tensors]
    vals = [t.values for t in ts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record("concat", out, ts, bwd)


@_register("stack")
def stack(tensors, axis: int = 0) -> Tensor:
    tape = _tape_of(*tensors)
    ts = [_wrap(tape, t) for t in tensors]
    out = np.stack([t.values for t in ts], axis=axis)

    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    return tape.record("stack", out, ts, bwd)


@_register("gather")
def gather(a, indices, axis: int = 0) -> Tensor:
    """Select slices along an axis; backward scatter-adds into the source."""
    tape = _tape_of(a)
    a = _wrap(tape, a)
    idx = np.asarray(indices, dtype=np.intp)
    n = a.values.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DataError(f"gather index out of range for extent {n}")
    out = np.take(a.values, idx, axis=axis)
    src_shape = a.values.shape

    def bwd(g):
        acc = np.zeros(src_shape, dtype=np.float64)
        acc_m = np.moveaxis(acc, axis, 0)
        g_m = np.moveaxis(g, axis, 0) if idx.ndim == 1 else g
        np.add.at(acc_m, idx, g_m)
        return (acc,)

    return tape.record("gather", out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def _expand_for_reduce(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        ax = axis if isinstance(axis, tuple) else (axis,)
        for i in sorted(a % len(shape) for a in ax):
            g = np.expand_dims(g, i)
    return np.broadcast_to(g, shape)


@_register("sum")
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    shape = a.values.shape
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        return (_expand_for_reduce(g, shape, axis, keepdims).copy(),)

    return tape.record("sum", out, (a,), bwd)


@_register("mean")
def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    shape = a.values.shape
    out = a.values.mean(axis=axis, keepdims=keepdims)
    count = a.values.size // max(out.size, 1)

    def bwd(g):
        return (_expand_for_reduce(g, shape, axis, keepdims) / count,)

    return tape.record("mean", out, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


@_register("sigmoid")
def sigmoid(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return tape.record("sigmoid", out, (a,), bwd)


@_register("tanh")
def tanh(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    out = np.tanh(a.values)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return tape.record("tanh", out, (a,), bwd)


@_register("exp")
def exp(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    out = np.exp(a.values)

    def bwd(g):
        return (g * out,)

    return tape.record("exp", out, (a,), bwd)


@_register("log")
def log(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values

    def bwd(g):
        return (g / v,)

    return tape.record("log", np.log(v), (a,), bwd)


@_register("sqrt")
def sqrt(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    out = np.sqrt(a.values)

    def bwd(g):
        return (g * 0.5 / out,)

    return tape.record("sqrt", out, (a,), bwd)


@_register("rsqrt")
def rsqrt(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values
    out = 1.0 / np.sqrt(v)

    def bwd(g):
        return (g * (-0.5) * out / v,)

    return tape.record("rsqrt", out, (a,), bwd)


@_register("square")
def square(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values

    def bwd(g):
        return (g * 2.0 * v,)

    return tape.record("square", v * v, (a,), bwd)


@_register("absval")
def absval(a) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values

    def bwd(g):
        return (g * np.sign(v),)

    return tape.record("absval", np.abs(v), (a,), bwd)


@_register("leaky_relu")
def leaky_relu(a, slope: float = 0.2) -> Tensor:
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values
    out = np.where(v >= 0, v, slope * v)

    def bwd(g):
        return (g * np.where(v >= 0, 1.0, slope),)

    return tape.record("leaky_relu", out, (a,), bwd)


@_register("softmax")
def softmax(a, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Temperature-scaled softmax; rows along ``axis`` sum to one."""
    if temperature <= 0:
        raise DataError(f"softmax temperature must be > 0, got {temperature}")
    tape = _tape_of(a)
    a = _wrap(tape, a)
    z = a.values / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)

    return tape.record("softmax", out, (a,), bwd)


@_register("layer_norm")
def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    tape = _tape_of(a, gain, bias)
    a, gain, bias = _wrap(tape, a), _wrap(tape, gain), _wrap(tape, bias)
    v = a.values
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    gv = gain.values
    out = xhat * gv + bias.values

    def bwd(g):
        gg = g * gv
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        dx = (gg - m1 - xhat * m2) * inv
        axes = tuple(range(g.ndim - 1))
        dgain = _unbroadcast((g * xhat).sum(axis=axes) if axes else g * xhat,
                             gain.values.shape)
        dbias = _unbroadcast(g.sum(axis=axes) if axes else g, bias.values.shape)
        return dx, dgain, dbias

    return tape.record("layer_norm", out, (a, gain, bias), bwd)


@_register("dropout")
def dropout(a, p: float, rng: RngStream | None = None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise DataError(f"dropout rate must be in [0, 1), got {p}")
    tape = _tape_of(a)
    a = _wrap(tape, a)
    if not training or p == 0.0:
        return a
    if rng is None:
        raise DataError("dropout in training mode needs an RngStream")
    mask = (rng.uniform(a.values.shape) >= p) / (1.0 - p)
    return tape.record("dropout", a.values * mask, (a,), lambda g: (g * mask,))


@_register("straight_through_onehot")
def straight_through_onehot(a, axis: int = -1) -> Tensor:
    """One-hot of the argmax along ``axis`` forward; identity backward."""
    tape = _tape_of(a)
    a = _wrap(tape, a)
    v = a.values
    hard = np.zeros_like(v)
    idx = np.argmax(v, axis=axis)
    np.put_along_axis(hard, np.expand_dims(idx, axis), 1.0, axis=axis)
    return tape.record("straight_through_onehot", hard, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# losses


@_register("squared_error")
def squared_error(a, b) -> Tensor:
    """Sum of elementwise squared differences (squared Frobenius norm)."""
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    if a.values.shape != b.values.shape:
        raise DataError(f"squared_error shape mismatch: {a.values.shape} vs {b.values.shape}")
    diff = a.values - b.values
    out = np.asarray((diff * diff).sum())

    def bwd(g):
        return (2.0 * g * diff, -2.0 * g * diff)

    return tape.record("squared_error", out, (a, b), bwd)


@_register("cross_entropy_with_logits")
def cross_entropy_with_logits(logits, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch; labels are integer classes."""
    tape = _tape_of(logits)
    logits = _wrap(tape, logits)
    v = logits.values
    if v.ndim == 1:
        v2 = v[None, :]
    elif v.ndim == 2:
        v2 = v
    else:
        raise DataError(f"cross_entropy_with_logits expects (B, C) logits, got {v.shape}")
    y = np.asarray(labels, dtype=np.intp).reshape(-1)
    if y.shape[0] != v2.shape[0]:
        raise DataError(f"labels length {y.shape[0]} != batch size {v2.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= v2.shape[1]):
        raise DataError(f"label out of range for {v2.shape[1]} classes")
    z = v2 - v2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1)) + v2.max(axis=1)
    out = np.asarray((lse - v2[np.arange(len(y)), y]).mean())
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    onehot = np.zeros_like(v2)
    onehot[np.arange(len(y)), y] = 1.0
    orig_shape = v.shape

    def bwd(g):
        return (((p - onehot) * (g / len(y))).reshape(orig_shape),)

    return tape.record("cross_entropy_with_logits", out, (logits,), bwd)


@_register("gaussian_kl")
def gaussian_kl(mu, log_var, prior_mu=None) -> Tensor:
    """KL(N(mu, exp(log_var)) || N(prior_mu, I)) summed over the last axis.

    prior_mu defaults to zero; pass a constant array for a non-zero prior.
    """
    tape = _tape_of(mu, log_var)
    mu, log_var = _wrap(tape, mu), _wrap(tape, log_var)
    if mu.values.shape != log_var.values.shape:
        raise DataError(f"gaussian_kl shape mismatch: {mu.values.shape} vs {log_var.values.shape}")
    pm = np.zeros_like(mu.values) if prior_mu is None else np.broadcast_to(
        np.asarray(prior_mu, dtype=np.float64), mu.values.shape)
    mv, lv = mu.values, log_var.values
    ev = np.exp(lv)
    elem = 0.5 * (ev + (mv - pm) ** 2 - 1.0 - lv)
    out = elem.sum(axis=-1)

    def bwd(g):
        ge = np.expand_dims(g, -1)
        return (ge * (mv - pm), ge * 0.5 * (ev - 1.0))

    return tape.record("gaussian_kl", out, (mu, log_var), bwd)


# ---------------------------------------------------------------------------
# stochastic composites


def sample_gaussian_reparam(mu: Tensor, log_var: Tensor, rng: RngStream) -> Tensor:
    """z = mu + exp(log_var / 2) * eps with eps ~ N(0, I).

    log_var may be -inf (a deterministic sentinel giving z = mu exactly) but
    not +inf or NaN.
    """
    if mu.values.shape != log_var.values.shape:
        raise DataError(f"reparam shape mismatch: {mu.values.shape} vs {log_var.values.shape}")
    if np.any(np.isnan(log_var.values)) or np.any(log_var.values == np.inf):
        raise NumericalError("log_var contains NaN or +inf")
    eps = rng.normal(mu.values.shape)
    return add(mu, mul(exp(mul(log_var, 0.5)), eps))


def sample_gumbel_softmax(logits: Tensor, tau: float, rng: RngStream,
                          hard: bool = False) -> Tensor:
    """Gumbel-Softmax over the last axis at temperature tau.

    Soft mode returns the relaxed simplex sample; hard mode snaps to a one-hot
    via a straight-through estimator (soft gradient).
    """
    if tau <= 0:
        raise DataError(f"gumbel temperature must be > 0, got {tau}")
    noise = rng.gumbel(logits.values.shape)
    y = softmax(add(logits, noise), axis=-1, temperature=tau)
    if hard:
        return straight_through_onehot(y, axis=-1)
    return y


# ---------------------------------------------------------------------------
# helpers


def linear(x, w, b) -> Tensor:
    return add(matmul(x, w), b)


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must build its computation from the Tensor it is handed and return a
    scalar Tensor; it is re-evaluated on fresh tapes for the finite
    differences, so it must not capture tensors from other tapes.
    """
    x0 = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x0.copy())
    loss = f(xt)
    if loss.values.size != 1:
        raise DataError("grad_check target must return a scalar")
    tape.backward(loss)
    analytic = xt.grad.reshape(-1)

    def value_at(arr: Array) -> float:
        t2 = Tape()
        out = f(t2.leaf(arr, requires_grad=False))
        val = float(out.values)
        if not np.isfinite(val):
            raise NumericalError(f"non-finite value {val} during grad_check")
        return val

    flat = x0.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        pert = flat.copy()
        pert[i] = flat[i] + step
        hi = value_at(pert.reshape(x0.shape))
        pert[i] = flat[i] - step
        lo = value_at(pert.reshape(x0.shape))
        fd = (hi - lo) / (2.0 * step)
        rel = abs(analytic[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, rel)
    return worst
