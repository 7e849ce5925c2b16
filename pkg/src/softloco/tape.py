"""Reverse-mode differentiation tape over complex-capable array values.

A ``Tape`` records the primitive operations of a forward pass as a flat,
topologically ordered arena of nodes and back-propagates adjoints in one
reverse sweep.  Values are numpy arrays (float64 for plain passes,
complex128 for perturbed ones) or bicomplex arrays when the oracle drives
the same code; adjoints follow the value dtype.  With one input component
perturbed by ``h*1j``, the real parts of the input adjoints are the
gradient and the imaginary parts divided by ``h`` are one Hessian column,
so a full Hessian costs M forward/reverse passes instead of a graph of
graphs.

Array-valued nodes are the norm here, not the exception: a single node may
carry the deformation gradients of every element in a mesh.  Each entry of
such a value behaves exactly like one complex-step scalar; batching them
is what keeps pure-Python recording affordable.

Branching (comparisons, ``where`` masks, ``abs``) always keys on real
parts, so a perturbed pass replays exactly the control flow of the real
pass and derivatives are those of the branch actually taken.
"""

import concurrent.futures

import numpy as np

from .bicomplex import BCArray
from .csfd import DEFAULT_H, PerturbStep
from .errors import DomainError, TapeBudgetError

__all__ = [
    "Tape", "Var", "Node", "gradient", "hessian_column", "hessian",
    "sin", "cos", "exp", "log", "sqrt", "tanh", "sinh", "cosh",
    "abs_analytic", "maximum", "minimum", "where", "stack", "concat",
    "vsum", "gather", "scatter_add", "reshape", "swap_last2", "real_of",
    "value_of", "symm_spmatvec",
]


class Node:
    __slots__ = ("op", "value", "parents", "vjps")

    def __init__(self, op, value, parents, vjps):
        self.op = op
        self.value = value
        self.parents = parents
        self.vjps = vjps


class Tape:
    """Append-only record of one forward pass.

    Confine a tape to a single thread; distinct tapes are independent.
    With ``recording=False`` the same code paths evaluate values without
    building a graph (used for line-search probes and the bicomplex
    oracle).
    """

    def __init__(self, h=DEFAULT_H, recording=True, node_budget=50_000_000):
        if isinstance(h, PerturbStep):
            h = h.h
        self.h = float(h)
        self.recording = recording
        self.node_budget = int(node_budget)
        self.nodes = []
        self.inputs = []
        self.abs_zero_hits = 0

    def __len__(self):
        return len(self.nodes)

    def _append(self, node):
        if len(self.nodes) >= self.node_budget:
            raise TapeBudgetError(
                f"tape exceeded node budget of {self.node_budget}")
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _leaf(self, value, op="input"):
        if not self.recording:
            return Var(self, -1, value)
        nid = self._append(Node(op, value, (), ()))
        return Var(self, nid, value)

    def constant(self, value):
        return self._leaf(np.asarray(value), op="const")

    def input(self, value, perturbed=False):
        """Scalar independent variable; optionally carries the h step."""
        if perturbed:
            v = np.complex128(complex(float(value), self.h))
        else:
            v = np.float64(value)
        var = self._leaf(v)
        self.inputs.append(var.id)
        return var

    def input_vector(self, values, perturb=None):
        """Vector of independent variables, one optionally perturbed by h*i."""
        values = np.asarray(values, dtype=float)
        if perturb is None:
            v = values.copy()
        else:
            v = values.astype(np.complex128)
            v[perturb] += 1j * self.h
        var = self._leaf(v)
        self.inputs.append(var.id)
        return var

    def input_bicomplex(self, bc_value):
        var = self._leaf(bc_value)
        self.inputs.append(var.id)
        return var

    def record(self, op, *args):
        """Apply a primitive by name (thin dispatch, mostly for tests)."""
        return _PRIMITIVES[op](*args)

    def reverse_sweep(self, output):
        """Adjoints of every node given a scalar output.

        The output adjoint is seeded with one (in the value dtype); all
        other adjoints start at zero and accumulate additively in a single
        backward pass over the arena.
        """
        if not self.recording:
            raise RuntimeError("cannot sweep a non-recording tape")
        if output.tape is not self:
            raise ValueError("output does not belong to this tape")
        if np.ndim(output.value) != 0:
            raise ValueError("reverse sweep needs a scalar output")
        adjoints = [None] * len(self.nodes)
        seed = np.ones((), dtype=np.asarray(output.value).dtype)
        adjoints[output.id] = seed
        for nid in range(output.id, -1, -1):
            adj = adjoints[nid]
            if adj is None:
                continue
            node = self.nodes[nid]
            for pid, vjp in zip(node.parents, node.vjps):
                contrib = vjp(adj)
                if adjoints[pid] is None:
                    adjoints[pid] = contrib
                else:
                    # never in place: contributions may alias the adjoint
                    adjoints[pid] = adjoints[pid] + contrib
        return adjoints

    def input_adjoints(self, output):
        adj = self.reverse_sweep(output)
        out = []
        for nid in self.inputs:
            a = adj[nid]
            if a is None:
                a = np.zeros_like(np.asarray(self.nodes[nid].value))
            out.append(a)
        return out


class Var:
    """Handle to a tape value; all arithmetic goes through the tape."""

    __slots__ = ("tape", "id", "value")
    __array_ufunc__ = None  # keep numpy from consuming us elementwise

    def __init__(self, tape, nid, value):
        self.tape = tape
        self.id = nid
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value) if not isinstance(self.value, BCArray) \
            else self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, value={self.value!r})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)

    def __abs__(self):
        return abs_analytic(self)

    def __matmul__(self, o):
        from .clinalg import matmul
        return matmul(self, o)

    def __rmatmul__(self, o):
        from .clinalg import matmul
        return matmul(o, self)

    def __getitem__(self, key):
        return gather(self, key)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    # comparisons: real parts only, plain booleans out
    def __lt__(self, o):
        return _real(self.value) < _real(_raw(o))

    def __le__(self, o):
        return _real(self.value) <= _real(_raw(o))

    def __gt__(self, o):
        return _real(self.value) > _real(_raw(o))

    def __ge__(self, o):
        return _real(self.value) >= _real(_raw(o))

    def __float__(self):
        return float(_real(self.value))


# -- value plumbing ---------------------------------------------------------

def _raw(x):
    return x.value if isinstance(x, Var) else x


def _real(v):
    if isinstance(v, BCArray):
        return v.real
    return np.real(v)


def real_of(x):
    """Real part of a value or Var, detached (plain float ndarray)."""
    return np.array(_real(_raw(x)), dtype=float, copy=True)


def value_of(x):
    return _raw(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("expected at least one Var operand")


def _unbroadcast(adj, shape):
    """Sum an adjoint down to the operand's shape (inverse of broadcasting)."""
    if np.shape(adj) == tuple(shape):
        return adj
    if len(shape) == 0:
        return np.sum(adj)
    while np.ndim(adj) > len(shape):
        adj = np.sum(adj, axis=0)
    for i, s in enumerate(shape):
        if s == 1 and np.shape(adj)[i] != 1:
            adj = np.sum(adj, axis=i, keepdims=True)
    return adj


def _emit(t, op, value, parent_vars, vjps):
    if not t.recording:
        return Var(t, -1, value)
    parents, fns = [], []
    for p, f in zip(parent_vars, vjps):
        if isinstance(p, Var) and p.id >= 0:
            if p.tape is not t:
                raise ValueError(f"operand from a different tape in {op}")
            parents.append(p.id)
            fns.append(f)
    nid = t._append(Node(op, value, tuple(parents), tuple(fns)))
    return Var(t, nid, value)


# -- arithmetic primitives ----------------------------------------------------

def add(a, b):
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    out = av + bv
    if not t.recording:
        return Var(t, -1, out)
    sa, sb = np.shape(_real(av)), np.shape(_real(bv))
    return _emit(t, "add", out, (a, b),
                 (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)))


def sub(a, b):
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    out = av - bv
    if not t.recording:
        return Var(t, -1, out)
    sa, sb = np.shape(_real(av)), np.shape(_real(bv))
    return _emit(t, "sub", out, (a, b),
                 (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(-g, sb)))


def mul(a, b):
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    out = av * bv
    if not t.recording:
        return Var(t, -1, out)
    sa, sb = np.shape(_real(av)), np.shape(_real(bv))
    return _emit(t, "mul", out, (a, b),
                 (lambda g: _unbroadcast(g * bv, sa),
                  lambda g: _unbroadcast(g * av, sb)))


def div(a, b):
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    if np.any(_real(bv) == 0.0):
        raise DomainError("division by zero real part")
    out = av / bv
    if not t.recording:
        return Var(t, -1, out)
    sa, sb = np.shape(_real(av)), np.shape(_real(bv))
    return _emit(t, "div", out, (a, b),
                 (lambda g: _unbroadcast(g / bv, sa),
                  lambda g: _unbroadcast(-g * out / bv, sb)))


def neg(a):
    return _emit(a.tape, "neg", -_raw(a), (a,), (lambda g: -g,))


def power(a, n):
    """Integer powers by repeated squaring; real exponents via exp(n log a)."""
    if not isinstance(a, Var):
        return _raw(a) ** n
    if isinstance(n, int) or (isinstance(n, float) and float(n).is_integer()):
        n = int(n)
        if n < 0:
            return power(div(_one_like(a), a), -n)
        if n == 0:
            return _one_like(a)
        result = None
        base = a
        while n:
            if n & 1:
                result = base if result is None else mul(result, base)
            n >>= 1
            if n:
                base = mul(base, base)
        return result
    return exp(mul(log(a), float(n)))


def _one_like(a):
    t = _tape_of(a)
    v = _raw(a)
    if isinstance(v, BCArray):
        one = BCArray(np.ones(v.shape), np.zeros(v.shape))
    else:
        one = np.ones(np.shape(v))
    return t.constant(one) if t.recording else Var(t, -1, one)


def _unary_analytic(name, fn_np, fn_bc, deriv):
    def op(a):
        if not isinstance(a, Var):
            return fn_np(a)
        av = _raw(a)
        out = fn_bc(av) if isinstance(av, BCArray) else fn_np(av)
        return _emit(a.tape, name, out, (a,), (lambda g: g * deriv(av, out),))
    op.__name__ = name
    return op


sin = _unary_analytic("sin", np.sin, lambda v: v.sin(),
                      lambda v, out: np.cos(v))
cos = _unary_analytic("cos", np.cos, lambda v: v.cos(),
                      lambda v, out: -np.sin(v))
tanh = _unary_analytic("tanh", np.tanh, lambda v: v.tanh(),
                       lambda v, out: 1.0 - out * out)
sinh = _unary_analytic("sinh", np.sinh, lambda v: v.sinh(),
                       lambda v, out: np.cosh(v))
cosh = _unary_analytic("cosh", np.cosh, lambda v: v.cosh(),
                       lambda v, out: np.sinh(v))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    av = _raw(a)
    out = av.exp() if isinstance(av, BCArray) else np.exp(av)
    return _emit(a.tape, "exp", out, (a,), (lambda g: g * out,))


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    av = _raw(a)
    if np.any(_real(av) <= 0.0):
        raise DomainError("log requires positive real parts")
    out = av.log() if isinstance(av, BCArray) else np.log(av)
    return _emit(a.tape, "log", out, (a,), (lambda g: g / av,))


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(a)
    av = _raw(a)
    if np.any(_real(av) < 0.0):
        raise DomainError("sqrt requires non-negative real parts")
    out = av.sqrt() if isinstance(av, BCArray) else np.sqrt(av)
    return _emit(a.tape, "sqrt", out, (a,), (lambda g: 0.5 * g / out,))


def abs_analytic(a):
    """Branch-by-real-part absolute value (analytic on each branch)."""
    if not isinstance(a, Var):
        av = _raw(a)
        return _where_value(_real(av) < 0.0,
                            -av if isinstance(av, BCArray) else np.where(_real(av) < 0.0, -av, av),
                            av)
    av = _raw(a)
    re = _real(av)
    a.tape.abs_zero_hits += int(np.count_nonzero(re == 0.0))
    mask = re < 0.0
    out = _where_value(mask, -av if isinstance(av, BCArray) else np.where(mask, -av, av), av)
    return _emit(a.tape, "abs", out, (a,), (lambda g: np.where(mask, -g, g),))


def _where_value(mask, av, bv):
    if isinstance(av, BCArray) or isinstance(bv, BCArray):
        return BCArray.where(mask, av if isinstance(av, BCArray) else BCArray(np.asarray(av, np.complex128), np.zeros(np.shape(av), np.complex128)),
                             bv if isinstance(bv, BCArray) else BCArray(np.asarray(bv, np.complex128), np.zeros(np.shape(bv), np.complex128)))
    return np.where(mask, av, bv)


def where(mask, a, b):
    """Select by a real boolean mask; adjoints flow only to the taken branch."""
    mask = np.asarray(mask, dtype=bool)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return _where_value(mask, _raw(a), _raw(b))
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    out = _where_value(mask, av, bv)
    if not t.recording:
        return Var(t, -1, out)
    sa, sb = np.shape(_real(av)), np.shape(_real(bv))
    return _emit(t, "where", out, (a, b),
                 (lambda g: _unbroadcast(np.where(mask, g, 0.0), sa),
                  lambda g: _unbroadcast(np.where(mask, 0.0, g), sb)))


def maximum(a, b):
    mask = _real(_raw(a)) >= _real(_raw(b))
    return where(mask, a, b)


def minimum(a, b):
    mask = _real(_raw(a)) <= _real(_raw(b))
    return where(mask, a, b)


# -- structure ops ------------------------------------------------------------

def vsum(a, axis=None, keepdims=False):
    av = _raw(a)
    if isinstance(av, BCArray):
        out = av.sum(axis=axis, keepdims=keepdims)
    else:
        out = np.sum(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    if not a.tape.recording:
        return Var(a.tape, -1, out)
    shape = np.shape(_real(av))

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, shape)

    return _emit(a.tape, "sum", out, (a,), (vjp,))


def reshape(a, shape):
    av = _raw(a)
    out = av.reshape(shape) if isinstance(av, BCArray) else np.reshape(av, shape)
    if not isinstance(a, Var):
        return out
    old = np.shape(_real(av))
    return _emit(a.tape, "reshape", out, (a,), (lambda g: np.reshape(g, old),))


def swap_last2(a):
    av = _raw(a)
    out = av.swap_last2() if isinstance(av, BCArray) else np.swapaxes(av, -1, -2)
    if not isinstance(a, Var):
        return out
    return _emit(a.tape, "swapT", out, (a,),
                 (lambda g: np.swapaxes(g, -1, -2),))


def gather(a, key):
    av = _raw(a)
    out = av[key]
    if not isinstance(a, Var):
        return out
    if not a.tape.recording:
        return Var(a.tape, -1, out)
    shape = np.shape(_real(av))

    def vjp(g):
        z = np.zeros(shape, dtype=np.asarray(g).dtype)
        np.add.at(z, key, g)
        return z

    return _emit(a.tape, "gather", out, (a,), (vjp,))


def scatter_add(shape, key, a):
    """Zeros of ``shape`` with ``a`` added at ``key`` (duplicates accumulate)."""
    av = _raw(a)
    if isinstance(av, BCArray):
        out = av.scatter_add(shape, key)
    else:
        out = np.zeros(shape, dtype=np.asarray(av).dtype)
        np.add.at(out, key, av)
    if not isinstance(a, Var):
        return out
    return _emit(a.tape, "scatter", out, (a,), (lambda g: g[key],))


def stack(parts, axis=0):
    t = _tape_of(*parts)
    vals = [_raw(p) for p in parts]
    if any(isinstance(v, BCArray) for v in vals):
        out = BCArray.stack(vals, axis=axis)
    else:
        out = np.stack(vals, axis=axis)
    vjps = [(lambda i: lambda g: np.take(g, i, axis=axis))(i)
            for i in range(len(parts))]
    return _emit(t, "stack", out, parts, vjps)


def concat(parts, axis=0):
    t = _tape_of(*parts)
    vals = [_raw(p) for p in parts]
    if any(isinstance(v, BCArray) for v in vals):
        out = BCArray.concatenate(vals, axis=axis)
    else:
        out = np.concatenate(vals, axis=axis)
    sizes = [np.shape(_real(v))[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def make(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            sl = [slice(None)] * np.ndim(g)
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return vjp

    return _emit(t, "concat", out, parts, [make(i) for i in range(len(parts))])


def symm_spmatvec(S, x):
    """Sparse symmetric matrix times vector; S is a constant real matrix."""
    xv = _raw(x)
    if isinstance(xv, BCArray):
        out = BCArray(S @ xv.z1, S @ xv.z2)
    else:
        out = S @ xv
    if not isinstance(x, Var):
        return out
    return _emit(x.tape, "spmatvec", out, (x,), (lambda g: S @ g,))


_PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "sin": sin, "cos": cos, "exp": exp, "log": log, "sqrt": sqrt,
    "tanh": tanh, "sinh": sinh, "cosh": cosh, "abs": abs_analytic,
    "pow": power, "sum": vsum,
}


# -- differentiation drivers --------------------------------------------------

def gradient(f, a):
    """Gradient of scalar ``f(tape, vector_var)`` at ``a``.

    One unperturbed forward pass plus one reverse sweep; the pass runs in
    plain float64 (the perturbed passes' real parts are bit-identical, so
    this is the canonical gradient).
    """
    t = Tape()
    x = t.input_vector(a)
    y = f(t, x)
    g = t.input_adjoints(y)[0]
    return np.array(np.real(g), dtype=float)


def _hessian_column_counted(f, a, k, h):
    t = Tape(h=h)
    x = t.input_vector(a, perturb=k)
    y = f(t, x)
    g = t.input_adjoints(y)[0]
    return np.array(np.imag(g), dtype=float) / t.h, len(t)


def hessian_column(f, a, k, h=DEFAULT_H):
    """Column k of the Hessian: perturb a[k] by h*i, sweep, read Im/h."""
    col, _ = _hessian_column_counted(f, a, k, h)
    return col


def hessian(f, a, h=DEFAULT_H, workers=1, return_stats=False):
    """Hessian from M independent perturbed passes, one tape each.

    Columns are dispatched to a worker pool and reduced by column index,
    so the result does not depend on the worker count.
    """
    a = np.asarray(a, dtype=float)
    m = a.size
    base_nodes = None
    if return_stats:
        t0 = Tape()
        y0 = f(t0, t0.input_vector(a))
        base_nodes = len(t0)
        del y0, t0
    cols = [None] * m
    node_counts = [0] * m
    if workers <= 1 or m <= 1:
        for k in range(m):
            cols[k], node_counts[k] = _hessian_column_counted(f, a, k, h)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            for k, (c, n) in enumerate(
                    ex.map(lambda kk: _hessian_column_counted(f, a, kk, h),
                           range(m))):
                cols[k], node_counts[k] = c, n
    H = np.column_stack(cols) if m else np.zeros((0, 0))
    if return_stats:
        stats = {
            "tapes": m + 1,  # M column tapes plus the gradient-style base pass
            "forward_nodes": base_nodes,
            "column_nodes": node_counts,
        }
        return H, stats
    return H
