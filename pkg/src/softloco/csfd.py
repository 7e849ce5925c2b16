"""Complex-step scalar arithmetic.

A ``CScalar`` holds a function value in its real part and a directional
perturbation flow (step size ``h`` times a derivative) in its imaginary
part.  Evaluating a real program on ``CScalar`` inputs, with one input
perturbed by ``h*1j``, yields the derivative of the program as
``im / h`` with an O(h^2) truncation error and no subtractive
cancellation, so ``h`` can be made far smaller than any finite-difference
step.

Three rules make the promotion faithful to the underlying real program:

* relational operators and ``max``/``min`` compare real parts only, so the
  perturbed run takes exactly the branches the real run takes;
* elementary functions use their analytic complex extensions (they satisfy
  the Cauchy-Riemann equations near the real axis);
* ``abs`` uses the analytic piecewise form ``+/-(a + bi)`` selected by the
  sign of the real part -- the modulus ``sqrt(a^2 + b^2)`` is not analytic
  and would silently destroy the imaginary channel.
"""

import cmath

from .errors import DomainError

# Default imaginary step.  Small enough that h^2 cross terms underflow
# relative to O(1) values, so retaining them in products is bit-identical
# to truncating them.
DEFAULT_H = 1e-20


class PerturbStep:
    """Imaginary perturbation magnitude used for differentiation."""

    __slots__ = ("h",)

    def __init__(self, h=DEFAULT_H):
        h = float(h)
        if not h > 0.0:
            raise ValueError(f"perturbation step must be positive, got {h}")
        self.h = h

    def __repr__(self):
        return f"PerturbStep({self.h!r})"


class Diagnostics:
    """Counters for events worth surfacing but not worth raising on."""

    def __init__(self):
        self.abs_at_zero = 0

    def reset(self):
        self.abs_at_zero = 0


diagnostics = Diagnostics()


def _lift(x):
    if isinstance(x, CScalar):
        return x
    if isinstance(x, complex):
        return CScalar(x.real, x.imag)
    return CScalar(float(x), 0.0)


class CScalar:
    """One complex number with CSFD semantics.

    Plain value type: freely copyable, no shared state.  All operators,
    elementary functions and comparisons accept ``CScalar`` or real
    operands.
    """

    __slots__ = ("z",)

    def __init__(self, re, im=0.0):
        self.z = complex(re, im)

    @property
    def re(self):
        return self.z.real

    @property
    def im(self):
        return self.z.imag

    def __repr__(self):
        return f"CScalar({self.z.real!r}, {self.z.imag!r})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return CScalar.from_complex(self.z + _lift(other).z)

    __radd__ = __add__

    def __sub__(self, other):
        return CScalar.from_complex(self.z - _lift(other).z)

    def __rsub__(self, other):
        return CScalar.from_complex(_lift(other).z - self.z)

    def __mul__(self, other):
        # Full complex product; the im*im cross term is ~h^2 and falls
        # below round-off of the real part for the default h.
        return CScalar.from_complex(self.z * _lift(other).z)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _lift(other)
        if o.z.real == 0.0:
            raise DomainError("division by zero real part")
        return CScalar.from_complex(self.z / o.z)

    def __rtruediv__(self, other):
        if self.z.real == 0.0:
            raise DomainError("division by zero real part")
        return CScalar.from_complex(_lift(other).z / self.z)

    def __neg__(self):
        return CScalar.from_complex(-self.z)

    def __pos__(self):
        return self

    def __pow__(self, n):
        return power(self, n)

    def __abs__(self):
        return abs_analytic(self)

    # -- relational operators: real parts only ----------------------------

    def __lt__(self, other):
        return self.z.real < _lift(other).z.real

    def __le__(self, other):
        return self.z.real <= _lift(other).z.real

    def __gt__(self, other):
        return self.z.real > _lift(other).z.real

    def __ge__(self, other):
        return self.z.real >= _lift(other).z.real

    def __eq__(self, other):
        return self.z.real == _lift(other).z.real

    def __ne__(self, other):
        return self.z.real != _lift(other).z.real

    def __hash__(self):
        return hash(self.z.real)

    def __float__(self):
        return self.z.real

    @staticmethod
    def from_complex(z):
        out = CScalar.__new__(CScalar)
        out.z = z
        return out


def _unary(fn, x, name, check=None):
    x = _lift(x)
    if check is not None:
        check(x.z.real)
    return CScalar.from_complex(fn(x.z))


def _require_positive(name):
    def check(re):
        if re <= 0.0:
            raise DomainError(f"{name} requires a positive real part, got {re}")

    return check


def sin(x):
    return _unary(cmath.sin, x, "sin")


def cos(x):
    return _unary(cmath.cos, x, "cos")


def tan(x):
    return _unary(cmath.tan, x, "tan")


def exp(x):
    return _unary(cmath.exp, x, "exp")


def log(x):
    return _unary(cmath.log, x, "log", _require_positive("log"))


def sqrt(x):
    x = _lift(x)
    if x.z.real < 0.0:
        raise DomainError(f"sqrt requires a non-negative real part, got {x.z.real}")
    return CScalar.from_complex(cmath.sqrt(x.z))


def tanh(x):
    return _unary(cmath.tanh, x, "tanh")


def sinh(x):
    return _unary(cmath.sinh, x, "sinh")


def cosh(x):
    return _unary(cmath.cosh, x, "cosh")


def power(x, n):
    """x**n: repeated multiplication for integer n, exp(n log x) otherwise.

    Integer exponents stay defined for negative real parts and avoid
    principal-branch surprises; real exponents require a positive real
    part.
    """
    x = _lift(x)
    if isinstance(n, int) or (isinstance(n, float) and n.is_integer()):
        n = int(n)
        if n < 0:
            if x.z.real == 0.0:
                raise DomainError("negative power of zero real part")
            return power(CScalar.from_complex(1.0 / x.z), -n)
        result = CScalar(1.0, 0.0)
        base = x
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result
    if x.z.real <= 0.0:
        raise DomainError("non-integer power requires a positive real part")
    return exp(_lift(n) * log(x))


def abs_analytic(x):
    """Analytic absolute value: negate both parts when the real part is negative.

    At re == 0 the derivative does not exist; we take the positive branch,
    bump ``diagnostics.abs_at_zero`` and keep going (the optimizers treat
    the point as measure-zero).
    """
    x = _lift(x)
    if x.z.real < 0.0:
        return CScalar.from_complex(-x.z)
    if x.z.real == 0.0:
        diagnostics.abs_at_zero += 1
    return x


def maximum(a, b):
    """max by real parts, like the real program would branch."""
    a, b = _lift(a), _lift(b)
    return a if a.z.real >= b.z.real else b


def minimum(a, b):
    a, b = _lift(a), _lift(b)
    return a if a.z.real <= b.z.real else b


def csfd_derivative(f, x0, h=DEFAULT_H):
    """Derivative of a real scalar function at ``x0``.

    ``f`` must be written in terms of the overloads of this module.  The
    estimate Im(f(x0 + h i)) / h carries an O(h^2) truncation error and no
    subtractive cancellation, so any sufficiently small ``h`` works.
    """
    if isinstance(h, PerturbStep):
        h = h.h
    y = f(CScalar(float(x0), h))
    return _lift(y).z.imag / h
