"""Bicomplex arithmetic used as an independent second-derivative oracle.

A bicomplex number is z1 + z2*j with complex z1, z2 and a second imaginary
unit j satisfying j*j = -1, i*j = j*i.  Perturbing one input by h*i and
another by h*j makes the coefficient of i*j equal to h^2 times the mixed
second derivative, with no cancellation, so cross derivatives can be read
off directly.

This module is deliberately self-contained (it does not import the
complex-step scalar or the tape): it exists to check those components, not
to share their bugs.

Addition, multiplication and division are exact in the four channels.
Elementary functions use the infinitesimal j-channel form
f(z1 + z2 j) = f(z1) + f'(z1) z2 j, whose truncation is O(|z2|^2) --
the same second-order term CSFD itself discards, invisible in double
precision for perturbation-sized z2.  (The tempting idempotent splitting
z1 -+ i z2 is NOT used: it recombines the h^2-sized ij channel by
subtracting O(1) numbers and cancels it away entirely.)
"""

import numpy as np


def _coerce(x):
    if isinstance(x, BCArray):
        return x
    a = np.asarray(x)
    return BCArray(a.astype(np.complex128), np.zeros_like(a, dtype=np.complex128))


class BCArray:
    """Array of bicomplex numbers stored as two complex ndarrays."""

    __slots__ = ("z1", "z2")
    __array_ufunc__ = None  # force ndarray <op> BCArray through our r-ops

    def __init__(self, z1, z2):
        self.z1 = np.asarray(z1, dtype=np.complex128)
        self.z2 = np.asarray(z2, dtype=np.complex128)

    # parts, named for how differentiation reads them
    @property
    def real(self):
        return self.z1.real

    @property
    def imag_i(self):
        return self.z1.imag

    @property
    def imag_j(self):
        return self.z2.real

    @property
    def imag_ij(self):
        return self.z2.imag

    @property
    def shape(self):
        return self.z1.shape

    @property
    def ndim(self):
        return self.z1.ndim

    def __repr__(self):
        return f"BCArray(z1={self.z1!r}, z2={self.z2!r})"

    def __add__(self, other):
        o = _coerce(other)
        return BCArray(self.z1 + o.z1, self.z2 + o.z2)

    __radd__ = __add__

    def __sub__(self, other):
        o = _coerce(other)
        return BCArray(self.z1 - o.z1, self.z2 - o.z2)

    def __rsub__(self, other):
        o = _coerce(other)
        return BCArray(o.z1 - self.z1, o.z2 - self.z2)

    def __mul__(self, other):
        o = _coerce(other)
        return BCArray(self.z1 * o.z1 - self.z2 * o.z2,
                       self.z1 * o.z2 + self.z2 * o.z1)

    __rmul__ = __mul__

    def reciprocal(self):
        # (z1 + z2 j)(z1 - z2 j) = z1^2 + z2^2, an ordinary complex scalar
        denom = self.z1 * self.z1 + self.z2 * self.z2
        return BCArray(self.z1 / denom, -self.z2 / denom)

    def __truediv__(self, other):
        return self * _coerce(other).reciprocal()

    def __rtruediv__(self, other):
        return _coerce(other) * self.reciprocal()

    def __neg__(self):
        return BCArray(-self.z1, -self.z2)

    def __pow__(self, n):
        if not (isinstance(n, int) or (isinstance(n, float) and float(n).is_integer())):
            return (self.log() * float(n)).exp()
        n = int(n)
        if n < 0:
            return (_coerce(1.0) / self) ** (-n)
        out = _coerce(np.ones(self.shape))
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __matmul__(self, other):
        o = _coerce(other)
        return BCArray(self.z1 @ o.z1 - self.z2 @ o.z2,
                       self.z1 @ o.z2 + self.z2 @ o.z1)

    def __rmatmul__(self, other):
        return _coerce(other) @ self

    # comparisons look at the leading real part only
    def __lt__(self, other):
        return self.real < _coerce(other).real

    def __le__(self, other):
        return self.real <= _coerce(other).real

    def __gt__(self, other):
        return self.real > _coerce(other).real

    def __ge__(self, other):
        return self.real >= _coerce(other).real

    def _lift(self, value, deriv):
        return BCArray(value, deriv * self.z2)

    def exp(self):
        e = np.exp(self.z1)
        return self._lift(e, e)

    def log(self):
        return self._lift(np.log(self.z1), 1.0 / self.z1)

    def sqrt(self):
        r = np.sqrt(self.z1)
        return self._lift(r, 0.5 / r)

    def sin(self):
        return self._lift(np.sin(self.z1), np.cos(self.z1))

    def cos(self):
        return self._lift(np.cos(self.z1), -np.sin(self.z1))

    def tanh(self):
        t = np.tanh(self.z1)
        return self._lift(t, 1.0 - t * t)

    def sinh(self):
        return self._lift(np.sinh(self.z1), np.cosh(self.z1))

    def cosh(self):
        return self._lift(np.cosh(self.z1), np.sinh(self.z1))

    def abs(self):
        neg = self.real < 0
        return self.where(neg, -self, self)

    # -- structural operations (componentwise) -----------------------------

    def __getitem__(self, key):
        return BCArray(self.z1[key], self.z2[key])

    def reshape(self, *shape):
        return BCArray(self.z1.reshape(*shape), self.z2.reshape(*shape))

    def sum(self, axis=None, keepdims=False):
        return BCArray(self.z1.sum(axis=axis, keepdims=keepdims),
                       self.z2.sum(axis=axis, keepdims=keepdims))

    def swap_last2(self):
        return BCArray(np.swapaxes(self.z1, -1, -2), np.swapaxes(self.z2, -1, -2))

    @staticmethod
    def where(mask, a, b):
        a, b = _coerce(a), _coerce(b)
        return BCArray(np.where(mask, a.z1, b.z1), np.where(mask, a.z2, b.z2))

    @staticmethod
    def stack(parts, axis=0):
        parts = [_coerce(p) for p in parts]
        return BCArray(np.stack([p.z1 for p in parts], axis=axis),
                       np.stack([p.z2 for p in parts], axis=axis))

    @staticmethod
    def concatenate(parts, axis=0):
        parts = [_coerce(p) for p in parts]
        return BCArray(np.concatenate([p.z1 for p in parts], axis=axis),
                       np.concatenate([p.z2 for p in parts], axis=axis))

    def gather(self, key):
        return self[key]

    def scatter_add(self, shape, key):
        z1 = np.zeros(shape, dtype=np.complex128)
        z2 = np.zeros(shape, dtype=np.complex128)
        np.add.at(z1, key, self.z1)
        np.add.at(z2, key, self.z2)
        return BCArray(z1, z2)

    def broadcast_to(self, shape):
        return BCArray(np.broadcast_to(self.z1, shape), np.broadcast_to(self.z2, shape))

    def copy(self):
        return BCArray(self.z1.copy(), self.z2.copy())


def perturbed_input(values, j_index, k_index, h):
    """Vector of bicomplex numbers with h*i at j_index and h*j at k_index."""
    values = np.asarray(values, dtype=float)
    z1 = values.astype(np.complex128)
    z1[j_index] += 1j * h
    z2 = np.zeros_like(z1)
    z2[k_index] += h
    return BCArray(z1, z2)


def second_derivative(out, h):
    """Mixed second derivative from a bicomplex output scalar."""
    o = _coerce(out)
    return float(np.asarray(o.imag_ij)) / (h * h)


def first_derivative(out, h):
    """First derivative carried by the i channel (cross-check use only)."""
    o = _coerce(out)
    return float(np.asarray(o.imag_i)) / h


def hessian(f, a, h=1e-20):
    """Full Hessian of scalar ``f(vector)`` by bicomplex perturbation pairs.

    ``f`` must accept a BCArray and use only operations this class
    provides.  Costs M(M+1)/2 evaluations; intended for validation at
    small M, not production use.
    """
    a = np.asarray(a, dtype=float)
    m = a.size
    H = np.zeros((m, m))
    for j in range(m):
        for k in range(j, m):
            out = f(perturbed_input(a, j, k, h))
            H[j, k] = H[k, j] = second_derivative(out, h)
    return H
