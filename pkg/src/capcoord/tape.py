"""Scalar/array reverse-mode differentiation for rollout objectives.

A :class:`Tape` records array-valued operations (one node per op, values are
numpy arrays over the product dimension) and replays them in reverse to fill
gradients of :class:`ParamVector` leaves. Ops are module-level functions that
accept either :class:`Var` or plain arrays; with no Var argument they reduce
to plain numpy, so the same dynamics code runs taped and untaped.

Subgradient conventions at kinks: d/dx max(x, 0) = 0 at x = 0, and elementwise
min ties send the gradient to the first argument.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class NumericFault(RuntimeError):
    """Raised when a NaN/Inf value enters a taped (or checked) computation."""


class Var:
    """Handle to one tape node. ``value`` is a numpy array or float."""

    __slots__ = ("value", "tape", "idx")

    def __init__(self, value, tape: "Tape", idx: int):
        self.value = value
        self.tape = tape
        self.idx = idx

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"

    # Arithmetic sugar; constants are fine on either side.
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

    def __neg__(self):
        return mul(self, -1.0)


def value_of(x):
    """Detached numeric value of a Var or passthrough for plain arrays."""
    return x.value if isinstance(x, Var) else x


class Tape:
    """Growable record of operations; acyclic by construction."""

    def __init__(self, check_finite: bool = True):
        self.check_finite = check_finite
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[tuple] = []
        self._ops: list[str] = []
        self._adjoints: list | None = None

    def __len__(self):
        return len(self._ops)

    def emit(self, value, parents: tuple[int, ...], vjps: tuple, op: str) -> Var:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericFault(f"non-finite value at node {len(self._ops)} (op={op})")
        self._parents.append(parents)
        self._vjps.append(vjps)
        self._ops.append(op)
        return Var(value, self, len(self._ops) - 1)

    def leaf(self, value) -> Var:
        """Record a differentiable leaf (parameter or input)."""
        return self.emit(np.asarray(value, dtype=float), (), (), "leaf")

    def backward(self, out: Var) -> None:
        """Reverse sweep from scalar ``out``; adjoints become queryable."""
        if out.tape is not self:
            raise ValueError("output Var does not belong to this tape")
        if np.ndim(out.value) != 0 and np.size(out.value) != 1:
            raise ValueError("backward requires a scalar output")
        adj: list = [None] * len(self._ops)
        adj[out.idx] = np.asarray(1.0)
        for idx in range(out.idx, -1, -1):
            g = adj[idx]
            if g is None:
                continue
            for parent, vjp in zip(self._parents[idx], self._vjps[idx]):
                contrib = vjp(g)
                if adj[parent] is None:
                    adj[parent] = np.array(contrib, dtype=float, copy=True)
                else:
                    adj[parent] = adj[parent] + contrib
        self._adjoints = adj

    def adjoint(self, var: Var):
        """Adjoint of ``var`` from the last backward sweep (0 if unreached)."""
        if self._adjoints is None:
            raise RuntimeError("backward() has not been run")
        g = self._adjoints[var.idx]
        if g is None:
            return np.zeros_like(np.asarray(var.value, dtype=float))
        return np.broadcast_to(g, np.shape(var.value)).astype(float)


# Branch recording: max0/min2 append their branch decisions here when a
# recorder is active; the finite-difference checker uses signatures to detect
# kink crossings.
_branch_sink: list | None = None


@contextmanager
def record_branches(sink: list):
    global _branch_sink
    prev = _branch_sink
    _branch_sink = sink
    try:
        yield sink
    finally:
        _branch_sink = prev


def _note_branch(mask) -> None:
    if _branch_sink is not None:
        _branch_sink.append(np.asarray(mask, dtype=bool).copy())


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    grad = np.asarray(grad, dtype=float)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, fwd, vjp_a, vjp_b, op):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a.idx)
        vjps.append(vjp_a(av, bv))
    if isinstance(b, Var):
        parents.append(b.idx)
        vjps.append(vjp_b(av, bv))
    return tape.emit(out, tuple(parents), tuple(vjps), op)


def _unary(a, fwd, vjp, op):
    tape = _tape_of(a)
    av = value_of(a)
    out = fwd(av)
    if tape is None:
        return out
    return tape.emit(out, (a.idx,), (vjp(av, out),), op)


def add(a, b):
    return _binary(
        a, b, lambda x, y: x + y,
        lambda x, y: lambda g: _unbroadcast(g, np.shape(x)),
        lambda x, y: lambda g: _unbroadcast(g, np.shape(y)),
        "add",
    )


def sub(a, b):
    return _binary(
        a, b, lambda x, y: x - y,
        lambda x, y: lambda g: _unbroadcast(g, np.shape(x)),
        lambda x, y: lambda g: _unbroadcast(-g, np.shape(y)),
        "sub",
    )


def mul(a, b):
    return _binary(
        a, b, lambda x, y: x * y,
        lambda x, y: lambda g: _unbroadcast(g * y, np.shape(x)),
        lambda x, y: lambda g: _unbroadcast(g * x, np.shape(y)),
        "mul",
    )


def max0(a):
    """Elementwise max(x, 0); subgradient 0 at x = 0."""
    av = value_of(a)
    mask = np.asarray(av) > 0
    _note_branch(mask)
    return _unary(a, lambda x: np.maximum(x, 0.0),
                  lambda x, out: lambda g: g * mask, "max0")


def min2(a, b):
    """Elementwise min; ties break toward the first argument."""
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    first = av <= bv
    _note_branch(first)
    return _binary(
        a, b, lambda x, y: np.minimum(x, y),
        lambda x, y: lambda g: _unbroadcast(g * first, np.shape(x)),
        lambda x, y: lambda g: _unbroadcast(g * ~first, np.shape(y)),
        "min2",
    )


def relu(a):
    return max0(a)


def softplus(a):
    # logaddexp avoids overflow for large inputs
    return _unary(a, lambda x: np.logaddexp(0.0, x),
                  lambda x, out: lambda g: g / (1.0 + np.exp(-x)), "softplus")


def tanh(a):
    return _unary(a, np.tanh,
                  lambda x, out: lambda g: g * (1.0 - out * out), "tanh")


def square(a):
    return _unary(a, lambda x: x * x,
                  lambda x, out: lambda g: 2.0 * g * x, "square")


def matmul(a, b):
    """Matrix product (n, k) @ (k, m), both operands 2-d; either may be a Var."""
    if np.ndim(value_of(a)) != 2 or np.ndim(value_of(b)) != 2:
        raise ValueError("matmul operands must be 2-d")
    return _binary(
        a, b, lambda x, y: x @ y,
        lambda x, y: lambda g: np.asarray(g) @ np.asarray(y).T,
        lambda x, y: lambda g: np.asarray(x).T @ np.asarray(g),
        "matvec",
    )


def total(a):
    """Sum of all elements -> scalar."""
    return _unary(a, np.sum,
                  lambda x, out: lambda g: np.full(np.shape(x), float(g)), "sum")


def reshape(a, shape):
    shape = tuple(shape)
    return _unary(
        a, lambda x: np.reshape(x, shape),
        lambda x, out: lambda g: np.reshape(g, np.shape(x)), "reshape")


def take(a, indices):
    """Gather elements along the flattened first axis; vjp scatters."""
    idx = indices

    def fwd(x):
        return np.asarray(x)[idx]

    def vjp(x, out):
        shape = np.shape(x)

        def back(g):
            buf = np.zeros(shape, dtype=float)
            np.add.at(buf, idx, g)
            return buf

        return back

    return _unary(a, fwd, vjp, "take")


def column_stack(cols):
    """Stack 1-d columns (Vars and/or constants) into an (n, F) matrix."""
    tape = _tape_of(*cols)
    vals = [np.asarray(value_of(c), dtype=float) for c in cols]
    n = max((v.shape[0] for v in vals if v.ndim > 0), default=1)
    vals = [np.broadcast_to(v, (n,)) for v in vals]
    out = np.column_stack(vals)
    if tape is None:
        return out
    parents, vjps = [], []
    for j, c in enumerate(cols):
        if isinstance(c, Var):
            parents.append(c.idx)
            shape = np.shape(c.value)
            vjps.append(lambda g, j=j, shape=shape: _unbroadcast(g[:, j], shape))
    return tape.emit(out, tuple(parents), tuple(vjps), "column_stack")


def concat(parts):
    """Concatenate 1-d pieces (Vars and/or constants) into one vector."""
    tape = _tape_of(*parts)
    vals = [np.atleast_1d(np.asarray(value_of(p), dtype=float)) for p in parts]
    out = np.concatenate(vals)
    if tape is None:
        return out
    parents, vjps = [], []
    offset = 0
    for p, v in zip(parts, vals):
        if isinstance(p, Var):
            parents.append(p.idx)
            lo, hi, shape = offset, offset + v.size, np.shape(p.value)
            vjps.append(lambda g, lo=lo, hi=hi, shape=shape: np.asarray(g)[lo:hi].reshape(shape))
        offset += v.size
    return tape.emit(out, tuple(parents), tuple(vjps), "concat")


@dataclass
class ParamVector:
    """Flat parameter store with a paired gradient buffer and named segments."""

    values: np.ndarray
    grads: np.ndarray
    layout: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        if self.values.shape != self.grads.shape:
            raise ValueError("values and grads must have the same shape")
        sizes = sum(int(np.prod(s)) for _, s in self.layout)
        if sizes != self.values.size:
            raise ValueError("layout segments must tile the parameter array")

    @classmethod
    def build(cls, segments: list[tuple[str, tuple[int, ...]]],
              init: np.ndarray | None = None) -> "ParamVector":
        size = sum(int(np.prod(s)) for _, s in segments)
        values = np.zeros(size) if init is None else np.asarray(init, dtype=float).copy()
        return cls(values=values, grads=np.zeros(size), layout=list(segments))

    def _span(self, name: str) -> tuple[int, int, tuple[int, ...]]:
        offset = 0
        for seg, shape in self.layout:
            size = int(np.prod(shape))
            if seg == name:
                return offset, offset + size, shape
            offset += size
        raise KeyError(name)

    def view(self, name: str) -> np.ndarray:
        lo, hi, shape = self._span(name)
        return self.values[lo:hi].reshape(shape)

    def grad_view(self, name: str) -> np.ndarray:
        lo, hi, shape = self._span(name)
        return self.grads[lo:hi].reshape(shape)

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.grads.copy(), list(self.layout))

    def save(self, path: str) -> None:
        """Binary little-endian values plus a plain-text manifest at path.manifest."""
        with open(path, "wb") as fh:
            fh.write(self.values.astype("<f8").tobytes())
        with open(str(path) + ".manifest", "w") as fh:
            fh.write("capcoord-params v1 float64-le\n")
            for name, shape in self.layout:
                fh.write(f"{name} {' '.join(str(d) for d in shape)}\n")

    @classmethod
    def load(cls, path: str) -> "ParamVector":
        with open(str(path) + ".manifest") as fh:
            header = fh.readline()
            if not header.startswith("capcoord-params"):
                raise ValueError(f"unrecognized manifest header: {header!r}")
            layout = []
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                layout.append((parts[0], tuple(int(d) for d in parts[1:])))
        values = np.frombuffer(open(path, "rb").read(), dtype="<f8").astype(float)
        return cls(values=values, grads=np.zeros_like(values), layout=layout)


def param_leaves(tape: Tape, params: ParamVector) -> dict[str, Var]:
    """Register every segment of ``params`` as a differentiable leaf."""
    return {name: tape.leaf(params.view(name)) for name, _ in params.layout}


def backward_into(tape: Tape, out: Var, params: ParamVector,
                  leaves: dict[str, Var]) -> None:
    """Run backward and accumulate segment adjoints into ``params.grads``."""
    tape.backward(out)
    for name, var in leaves.items():
        params.grad_view(name)[...] += tape.adjoint(var)


def check_gradient(fn, params: ParamVector, h: float = 1e-5,
                   rel_tol: float = 1e-4, abs_floor: float = 1e-8):
    """Central finite-difference check of d fn / d params.

    ``fn(params) -> float`` must be deterministic. Coordinates whose +/-h
    evaluations cross a max0/min2 kink (branch signature changes) are skipped.
    Returns (n_checked, n_passed, failures) where failures lists
    (index, analytic, numeric).
    """
    params.zero_grad()
    base_branches: list = []
    with record_branches(base_branches):
        fn(params, want_grad=True)
    analytic = params.grads.copy()

    def signature(pv):
        sink: list = []
        with record_branches(sink):
            val = fn(pv, want_grad=False)
        return val, sink

    checked = passed = 0
    failures = []
    probe = params.copy()
    for j in range(params.values.size):
        orig = params.values[j]
        probe.values[:] = params.values
        probe.values[j] = orig + h
        f_hi, sig_hi = signature(probe)
        probe.values[j] = orig - h
        f_lo, sig_lo = signature(probe)
        if _branches_differ(sig_hi, sig_lo):
            continue
        checked += 1
        numeric = (f_hi - f_lo) / (2 * h)
        scale = max(abs(analytic[j]), abs(numeric), abs_floor)
        if abs(analytic[j] - numeric) / scale <= rel_tol or \
                abs(analytic[j] - numeric) <= abs_floor:
            passed += 1
        else:
            failures.append((j, float(analytic[j]), float(numeric)))
    return checked, passed, failures


def _branches_differ(sig_a: list, sig_b: list) -> bool:
    if len(sig_a) != len(sig_b):
        return True
    return any(a.shape != b.shape or not np.array_equal(a, b)
               for a, b in zip(sig_a, sig_b))
