"""Reverse-mode differentiation over numpy arrays with an explicit tape.

The tape records one step per operation: a forward closure (used by
``replay_check`` to verify determinism) and a backward closure that routes the
output gradient into the inputs.  All operations are deterministic, sequential
numpy; every output is checked for NaN/inf, which is a hard error.

Only the operations the flow pipeline needs exist here.  There is no
broadcasting beyond what the binary elementwise ops provide and no view
semantics: every op returns a fresh array.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonFiniteValue, ShapeError, UnrecordedNode

INSTANCE_NORM_EPS = 1e-5
DEFAULT_LEAKY_SLOPE = 0.1


class Tape:
    """Records operations so gradients can be pulled back to the leaves.

    A tape is single-writer: build one pipeline per tape.  With
    ``record=False`` the ops still compute values but nothing is stored and
    backward() is unavailable (used for plain inference and finite
    differences).
    """

    def __init__(self, record=True):
        self.record = record
        self._steps = []

    def var(self, value, name=None):
        """Create a leaf variable holding ``value`` (taken as-is, not copied)."""
        return Var(np.asarray(value), self, name)

    def _emit(self, out, fwd, bwd):
        if self.record:
            self._steps.append((out, fwd, bwd))

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every upstream Var."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise UnrecordedNode("loss was not produced under this tape")
        if not self.record:
            raise UnrecordedNode("tape was created with record=False")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for out, _fwd, bwd in reversed(self._steps):
            if out.grad is not None:
                bwd(out.grad)

    def replay_check(self):
        """Recompute every recorded op; True iff all values reproduce exactly."""
        for out, fwd, _bwd in self._steps:
            if not np.array_equal(fwd(), out.value):
                return False
        return True


class Var:
    """A value on a tape. ``grad`` is populated by ``Tape.backward``."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value, tape, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


def backward(tape, loss):
    """Functional alias for ``tape.backward(loss)``."""
    tape.backward(loss)


def _as_var(tape, x):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise UnrecordedNode("operands belong to different tapes")
        return x
    return tape.var(np.asarray(x))


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise UnrecordedNode("at least one operand must be a Var")


def _finite(value, op):
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"non-finite value produced by op '{op}'")
    return value


def _make(tape, value, op, fwd, bwd):
    out = Var(_finite(value, op), tape)
    tape._emit(out, fwd, bwd)
    return out


def _acc(var, g):
    if var.grad is None:
        var.grad = np.array(g, copy=True)
    else:
        var.grad += g


def _unbroadcast(g, shape):
    # reduce a broadcasted gradient back to the operand's shape
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, op, f, da, db):
    tape = _tape_of(a, b)
    a = _as_var(tape, a)
    b = _as_var(tape, b)
    try:
        with np.errstate(all="ignore"):
            value = f(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(f"{op}: {a.value.shape} vs {b.value.shape}") from exc

    def bwd(g):
        _acc(a, _unbroadcast(da(g, a.value, b.value), a.value.shape))
        _acc(b, _unbroadcast(db(g, a.value, b.value), b.value.shape))

    return _make(tape, value, op, lambda: f(a.value, b.value), bwd)


def add(a, b):
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(a, b, "div", lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def scale(a, s):
    s = float(s)
    tape = a.tape

    def bwd(g):
        _acc(a, g * s)

    return _make(tape, a.value * s, "scale", lambda: a.value * s, bwd)


def neg(a):
    return scale(a, -1.0)


def exp(a):
    with np.errstate(all="ignore"):
        value = np.exp(a.value)

    def bwd(g):
        _acc(a, g * value)

    return _make(a.tape, value, "exp", lambda: np.exp(a.value), bwd)


def log(a):
    with np.errstate(all="ignore"):
        value = np.log(a.value)

    def bwd(g):
        _acc(a, g / a.value)

    return _make(a.tape, value, "log", lambda: np.log(a.value), bwd)


def sqrt(a):
    with np.errstate(all="ignore"):
        value = np.sqrt(a.value)

    def bwd(g):
        _acc(a, g / (2.0 * value))

    return _make(a.tape, value, "sqrt", lambda: np.sqrt(a.value), bwd)


def square(a):
    def bwd(g):
        _acc(a, 2.0 * a.value * g)

    return _make(a.tape, a.value * a.value, "square",
                 lambda: a.value * a.value, bwd)


def maximum_scalar(a, s):
    """Elementwise max(x, s); subgradient 1 where x >= s, else 0."""
    s = float(s)

    def bwd(g):
        _acc(a, g * (a.value >= s))

    return _make(a.tape, np.maximum(a.value, s), "maximum_scalar",
                 lambda: np.maximum(a.value, s), bwd)


def matmul(a, b):
    tape = _tape_of(a, b)
    a = _as_var(tape, a)
    b = _as_var(tape, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")

    def bwd(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    return _make(tape, a.value @ b.value, "matmul", lambda: a.value @ b.value, bwd)


def transpose(a):
    def bwd(g):
        _acc(a, g.T)

    return _make(a.tape, a.value.T.copy(), "transpose",
                 lambda: a.value.T.copy(), bwd)


def linear(x, w, b=None):
    """y = x @ w.T + b with w of shape (out, in) and optional b of shape (out,)."""
    tape = _tape_of(x, w, b)
    x = _as_var(tape, x)
    w = _as_var(tape, w)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
        raise ShapeError(f"linear: x {x.value.shape} with w {w.value.shape}")
    if b is not None:
        b = _as_var(tape, b)
        if b.value.shape != (w.value.shape[0],):
            raise ShapeError(f"linear: bias {b.value.shape} with w {w.value.shape}")

    def f():
        y = x.value @ w.value.T
        if b is not None:
            y = y + b.value
        return y

    def bwd(g):
        _acc(x, g @ w.value)
        _acc(w, g.T @ x.value)
        if b is not None:
            _acc(b, g.sum(axis=0))

    return _make(tape, f(), "linear", f, bwd)


def leaky_relu(x, alpha=DEFAULT_LEAKY_SLOPE):
    """y = x for x >= 0 else alpha*x. Subgradient at 0 is 1."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {alpha}")
    if not isinstance(x, Var):
        return np.where(np.asarray(x) >= 0, x, alpha * np.asarray(x))
    mask = x.value >= 0

    def f():
        return np.where(mask, x.value, alpha * x.value)

    def bwd(g):
        _acc(x, g * np.where(mask, 1.0, alpha))

    return _make(x.tape, f(), "leaky_relu", f, bwd)


def instance_norm(x, eps=INSTANCE_NORM_EPS):
    """Standardize each channel over the row axis; no learned affine."""
    if not isinstance(x, Var):
        v = np.asarray(x)
        return (v - v.mean(axis=0)) / np.sqrt(v.var(axis=0) + eps)
    if x.value.ndim != 2:
        raise ShapeError(f"instance_norm expects 2-d input, got {x.value.shape}")

    def f():
        m = x.value.mean(axis=0)
        iv = 1.0 / np.sqrt(x.value.var(axis=0) + eps)
        return (x.value - m) * iv

    inv = 1.0 / np.sqrt(x.value.var(axis=0) + eps)
    y = f()

    def bwd(g):
        # d/dx of (x - mean)/std with biased variance, per channel
        gm = g.mean(axis=0)
        gym = (g * y).mean(axis=0)
        _acc(x, inv * (g - gm - y * gym))

    return _make(x.tape, y, "instance_norm", f, bwd)


def softmax_rows(x):
    """Row softmax with max-subtraction; rows sum to 1."""
    if not isinstance(x, Var):
        v = np.asarray(x)
        e = np.exp(v - v.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    e = np.exp(x.value - x.value.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def f():
        ee = np.exp(x.value - x.value.max(axis=1, keepdims=True))
        return ee / ee.sum(axis=1, keepdims=True)

    def bwd(g):
        _acc(x, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _make(x.tape, y, "softmax_rows", f, bwd)


def logsumexp_rows(x):
    """Stable log-sum-exp over each row, shape (N, 1)."""
    def f():
        m = x.value.max(axis=1, keepdims=True)
        return np.log(np.exp(x.value - m).sum(axis=1, keepdims=True)) + m

    value = f()

    def bwd(g):
        _acc(x, np.exp(x.value - value) * g)

    return _make(x.tape, value, "logsumexp_rows", f, bwd)


def logsumexp_cols(x):
    """Stable log-sum-exp over each column, shape (1, N)."""
    def f():
        m = x.value.max(axis=0, keepdims=True)
        return np.log(np.exp(x.value - m).sum(axis=0, keepdims=True)) + m

    value = f()

    def bwd(g):
        _acc(x, np.exp(x.value - value) * g)

    return _make(x.tape, value, "logsumexp_cols", f, bwd)


def sum_all(x):
    def bwd(g):
        _acc(x, np.broadcast_to(g, x.value.shape).copy())

    return _make(x.tape, np.asarray(x.value.sum()), "sum_all",
                 lambda: np.asarray(x.value.sum()), bwd)


def mean_all(x):
    size = x.value.size

    def bwd(g):
        _acc(x, np.broadcast_to(g / size, x.value.shape).copy())

    return _make(x.tape, np.asarray(x.value.mean()), "mean_all",
                 lambda: np.asarray(x.value.mean()), bwd)


def rowsum(x):
    """Sum over each row, keepdims: (N, C) -> (N, 1)."""
    def bwd(g):
        _acc(x, np.broadcast_to(g, x.value.shape).copy())

    return _make(x.tape, x.value.sum(axis=1, keepdims=True), "rowsum",
                 lambda: x.value.sum(axis=1, keepdims=True), bwd)


def row_min(x):
    """Min over each row, keepdims; subgradient routes to the first argmin."""
    arg = x.value.argmin(axis=1)
    rows = np.arange(x.value.shape[0])

    def f():
        return x.value.min(axis=1, keepdims=True)

    def bwd(g):
        gx = np.zeros_like(x.value)
        gx[rows, arg] = g[:, 0]
        _acc(x, gx)

    return _make(x.tape, f(), "row_min", f, bwd)


def gather_rows(x, idx):
    """y[i] = x[idx[i]]; the adjoint scatter-adds back into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)
    n_rows = x.value.shape[0]

    def bwd(g):
        _acc(x, kernels.segment_sum(g, idx, n_rows))

    return _make(x.tape, x.value[idx], "gather_rows", lambda: x.value[idx], bwd)


def concat_cols(parts):
    tape = _tape_of(*parts)
    parts = [_as_var(tape, p) for p in parts]
    widths = [p.value.shape[1] for p in parts]

    def f():
        return np.concatenate([p.value for p in parts], axis=1)

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            _acc(p, g[:, off : off + w])
            off += w

    return _make(tape, f(), "concat_cols", f, bwd)


def concat_rows(parts):
    tape = _tape_of(*parts)
    parts = [_as_var(tape, p) for p in parts]
    heights = [p.value.shape[0] for p in parts]

    def f():
        return np.concatenate([p.value for p in parts], axis=0)

    def bwd(g):
        off = 0
        for p, h in zip(parts, heights):
            _acc(p, g[off : off + h])
            off += h

    return _make(tape, f(), "concat_rows", f, bwd)


def slice_cols(x, start, stop):
    def f():
        return x.value[:, start:stop].copy()

    def bwd(g):
        gx = np.zeros_like(x.value)
        gx[:, start:stop] = g
        _acc(x, gx)

    return _make(x.tape, f(), "slice_cols", f, bwd)


def rows_group_max(x, gsize):
    """Max over consecutive groups of ``gsize`` rows: (N*g, C) -> (N, C).

    The subgradient routes to exactly one row per (group, channel), ties to
    the lowest row index.
    """
    if x.value.shape[0] % gsize != 0:
        raise ShapeError(f"rows {x.value.shape[0]} not divisible by group {gsize}")
    m = x.value.shape[0]
    value, arg = kernels.group_max(x.value, gsize)

    def f():
        return kernels.group_max(x.value, gsize)[0]

    def bwd(g):
        _acc(x, kernels.group_max_backward(arg, g, m))

    return _make(x.tape, value, "rows_group_max", f, bwd)


def segment_mean(x, seg, n_seg, counts):
    """Mean of the rows of x per segment id; every segment must be non-empty."""
    seg = np.asarray(seg, dtype=np.int64)
    inv_counts = (1.0 / counts).astype(x.value.dtype)[:, None]

    def f():
        return kernels.segment_sum(x.value, seg, n_seg) * inv_counts

    def bwd(g):
        _acc(x, (g * inv_counts)[seg])

    return _make(x.tape, f(), "segment_mean", f, bwd)


def weighted_gather(x, idx, w):
    """y[i] = sum_c w[i, c] * x[idx[i, c]] with constant indices and weights."""
    idx = np.asarray(idx, dtype=np.int64)
    w = np.asarray(w, dtype=x.value.dtype)
    n_rows = x.value.shape[0]

    def f():
        return kernels.weighted_gather(x.value, idx, w)

    def bwd(g):
        _acc(x, kernels.weighted_gather_backward(idx, w, g, n_rows))

    return _make(x.tape, f(), "weighted_gather", f, bwd)


# ---------------------------------------------------------------------------
# MLP stacks


@dataclass
class MlpLayer:
    """One linear layer; ``norm`` enables instance normalization after it."""

    w: object  # (out, in) ndarray or Var
    b: object  # (out,) ndarray or Var, or None
    norm: bool = False


def _shape(x):
    return x.value.shape if isinstance(x, Var) else np.asarray(x).shape


@dataclass
class MlpParams:
    """A stack of layers with shared leaky-ReLU slope.

    Hidden layers run linear -> instance_norm (if layer.norm) -> leaky_relu;
    the final layer is linear only.
    """

    layers: list
    alpha: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"leaky slope must lie in (0, 1), got {self.alpha}")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if _shape(prev.w)[0] != _shape(cur.w)[1]:
                raise ShapeError(
                    f"layer widths do not chain: {_shape(prev.w)} -> {_shape(cur.w)}"
                )

    @property
    def in_width(self):
        return _shape(self.layers[0].w)[1]

    @property
    def out_width(self):
        return _shape(self.layers[-1].w)[0]


def mlp_forward(x, params, tape=None):
    """Run the MLP stack; returns a Var on the input's tape."""
    if not isinstance(x, Var):
        tape = tape if tape is not None else Tape(record=False)
        x = tape.var(np.asarray(x))
    y = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        y = linear(y, layer.w, layer.b)
        if i < last:
            if layer.norm:
                y = instance_norm(y)
            y = leaky_relu(y, params.alpha)
    return y


# ---------------------------------------------------------------------------
# Finite-difference checking


@dataclass
class GradCheckFailure:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    """Outcome of comparing tape gradients against central differences."""

    tol: float
    max_rel_err: float = 0.0
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_err <= self.tol


def _loss_value(f, theta):
    tape = Tape(record=False)
    vars_ = {k: tape.var(v) for k, v in theta.items()}
    return float(f(tape, vars_).value)


def grad_check(f, theta, tol=1e-4, h_scale=1e-5, max_coords_per_param=None, seed=0):
    """Compare tape gradients of ``f`` with central finite differences.

    ``f(tape, vars)`` must return a scalar Var built from the supplied leaf
    vars.  ``theta`` maps names to float64 arrays.  The step is
    h = h_scale * max(1, |theta_i|) per coordinate; the relative error is
    |a - n| / max(1, |a|, |n|).  Large parameters can be spot-checked by
    capping coordinates per parameter (seeded, deterministic).
    """
    tape = Tape()
    vars_ = {k: tape.var(v.copy()) for k, v in theta.items()}
    loss = f(tape, vars_)
    tape.backward(loss)
    grads = {
        k: (vars_[k].grad if vars_[k].grad is not None else np.zeros_like(theta[k]))
        for k in theta
    }

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name in sorted(theta):
        arr = theta[name]
        n_coords = arr.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            coords = np.sort(
                rng.choice(n_coords, size=max_coords_per_param, replace=False)
            )
        else:
            coords = np.arange(n_coords)
        for idx in coords:
            idx = int(idx)
            h = h_scale * max(1.0, abs(float(arr.flat[idx])))
            bumped = {k: (v.copy() if k == name else v) for k, v in theta.items()}
            bumped[name].flat[idx] += h
            f_plus = _loss_value(f, bumped)
            bumped[name].flat[idx] -= 2.0 * h
            f_minus = _loss_value(f, bumped)
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = float(grads[name].flat[idx])
            rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            report.checked += 1
            if rel > report.max_rel_err:
                report.max_rel_err = rel
            if rel > tol:
                report.failures.append(
                    GradCheckFailure(name, idx, analytic, numeric, rel)
                )
    return report
