"""Matrix and vector operations with specialized complex adjoint rules.

Vectors and matrices here are array-valued tape variables (each entry one
complex-step scalar).  Reductions like the squared norm or a matrix
product are recorded as single "fat" nodes with hand-written adjoints
instead of elementwise graphs: the squared norm of an N-vector costs one
node rather than 2N-1, and a linear solve backed by a stored real
factorization contributes exactly one node regardless of how the solver
works internally.

No operation in this module conjugates: the complex promotions are the
analytic ones (sum of squares, plain transposes), which is what keeps the
imaginary perturbation channel intact.

The 3x3 SVD is the exception to the fat-node rule: singular values of a
complex matrix are real, so no analytic closed form exists.  Instead the
iterative one-sided Jacobi procedure runs on recorded micro-operations,
with every branch keyed on real parts, and derivatives emerge from the
recorded iteration itself.
"""

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg

from .bicomplex import BCArray
from .errors import DomainError, SingularSystemError
from . import tape as T
from .tape import Var, _emit, _raw, _real, _tape_of, _unbroadcast

# array-valued tape variables; the shape metadata lives on the value
CVec = Var
CMat = Var

_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    _EPS3[_i, _j, _k] = 1.0
    _EPS3[_i, _k, _j] = -1.0


# -- fused reductions (Table-style adjoints) ---------------------------------

def sqnorm(x):
    """Sum of squares over all axes; adjoint 2 * zbar * x."""
    xv = _raw(x)
    out = (xv * xv).sum() if isinstance(xv, BCArray) else np.sum(xv * xv)
    if not isinstance(x, Var):
        return out
    return _emit(x.tape, "sqnorm", out, (x,), (lambda g: 2.0 * g * xv,))


def dot(x, y):
    """Inner product without conjugation; adjoints z̄·y and z̄·x."""
    t = _tape_of(x, y)
    xv, yv = _raw(x), _raw(y)
    out = (xv * yv).sum() if isinstance(xv, BCArray) or isinstance(yv, BCArray) \
        else np.sum(xv * yv)
    return _emit(t, "dot", out, (x, y),
                 (lambda g: g * yv, lambda g: g * xv))


def trace_gram(x):
    """tr(X^T X) over the last two axes, batch dims preserved."""
    xv = _raw(x)
    if isinstance(xv, BCArray):
        out = (xv * xv).sum(axis=(-1, -2))
    else:
        out = np.sum(xv * xv, axis=(-1, -2))
    if not isinstance(x, Var):
        return out
    return _emit(x.tape, "trace_gram", out, (x,),
                 (lambda g: 2.0 * g[..., None, None] * xv,))


def matmul(a, b):
    """Matrix product (last two axes); adjoints Z̄ B^T and A^T Z̄."""
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    out = av @ bv
    sa, sb = _shape(av), _shape(bv)
    return _emit(t, "matmul", out, (a, b),
                 (lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), sa),
                  lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, sb)))


def matvec(a, x):
    """Batched matrix-vector product: (..., m, n) with (..., n)."""
    t = _tape_of(a, x)
    av, xv = _raw(a), _raw(x)
    if isinstance(av, BCArray) or isinstance(xv, BCArray):
        out = (_as_bc(av) @ _as_bc(xv).reshape(_shape(xv) + (1,)))[..., 0]
    else:
        out = (av @ xv[..., None])[..., 0]
    sa, sx = _shape(av), _shape(xv)
    return _emit(t, "matvec", out, (a, x),
                 (lambda g: _unbroadcast(g[..., :, None] * np.asarray(xv)[..., None, :], sa),
                  lambda g: _unbroadcast((np.swapaxes(av, -1, -2) @ g[..., None])[..., 0], sx)))


def cross3(a, b):
    """Cross product over the last axis (length 3)."""
    t = _tape_of(a, b)
    av, bv = _raw(a), _raw(b)
    out = _cross_value(av, bv)
    sa, sb = _shape(av), _shape(bv)
    return _emit(t, "cross3", out, (a, b),
                 (lambda g: _unbroadcast(np.cross(bv, g), sa),
                  lambda g: _unbroadcast(np.cross(g, av), sb)))


def det3(x):
    """Determinant of (..., 3, 3); adjoint z̄ · cof(X).

    The cofactor form needs no inverse, so the adjoint stays defined at
    singular X (it equals z̄ z X^{-T} whenever X is invertible).
    """
    xv = _raw(x)
    out = _det3_value(xv)
    if not isinstance(x, Var):
        return out
    return _emit(x.tape, "det3", out, (x,),
                 (lambda g: g[..., None, None] * _cof3_value(np.asarray(xv)),))


def cof3(x):
    """Cofactor matrix of (..., 3, 3) (the gradient of det)."""
    xv = _raw(x)
    out = _cof3_value(xv)
    if not isinstance(x, Var):
        return out

    def vjp(g):
        return np.einsum("...ip,ijk,pqr,...kr->...jq", g, _EPS3, _EPS3,
                         np.asarray(xv))

    return _emit(x.tape, "cof3", out, (x,), (vjp,))


def _shape(v):
    return v.shape if isinstance(v, BCArray) else np.shape(v)


def _as_bc(v):
    if isinstance(v, BCArray):
        return v
    a = np.asarray(v)
    return BCArray(a.astype(np.complex128), np.zeros(a.shape, np.complex128))


def _cross_value(a, b):
    def c(i, j, k):
        return a[..., j] * b[..., k] - a[..., k] * b[..., j]

    parts = [c(0, 1, 2), c(1, 2, 0), c(2, 0, 1)]
    if isinstance(a, BCArray) or isinstance(b, BCArray):
        return BCArray.stack(parts, axis=-1)
    return np.stack(parts, axis=-1)


def _det3_value(v):
    def e(i, j):
        return v[..., i, j]

    return (e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1))
            - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
            + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0)))


def _cof3_value(v):
    cols = [_cross_value(v[..., :, 1], v[..., :, 2]),
            _cross_value(v[..., :, 2], v[..., :, 0]),
            _cross_value(v[..., :, 0], v[..., :, 1])]
    if isinstance(v, BCArray):
        return BCArray.stack(cols, axis=-1)
    return np.stack(cols, axis=-1)


# -- linear solves -------------------------------------------------------------

class FactorizationHandle:
    """Stored factorization of a constant real matrix.

    Solves A z = r and A^T z = r without refactorizing, for real, complex
    or bicomplex right-hand sides (component by component; the system is
    real and linear).
    """

    def __init__(self, kind, solve_fn, solve_t_fn, shape):
        self.kind = kind
        self._solve = solve_fn
        self._solve_t = solve_t_fn
        self.shape = shape

    def _apply(self, fn, rhs):
        if isinstance(rhs, BCArray):
            return BCArray(self._apply(fn, rhs.z1), self._apply(fn, rhs.z2))
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs):
            return fn(rhs.real) + 1j * fn(rhs.imag)
        return fn(rhs)

    def solve(self, rhs):
        return self._apply(self._solve, rhs)

    def solve_transpose(self, rhs):
        return self._apply(self._solve_t, rhs)


def factorize_cholesky(a):
    """Dense Cholesky; raises if the matrix is not positive definite."""
    a = np.asarray(a, dtype=float)
    try:
        c = scipy.linalg.cho_factor(a, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise SingularSystemError(f"Cholesky factorization failed: {err}") from err

    def solve(r):
        return scipy.linalg.cho_solve(c, r)

    return FactorizationHandle("cholesky", solve, solve, a.shape)


def factorize_lu(a):
    """LU of a dense or sparse real matrix."""
    if sparse.issparse(a):
        try:
            lu = sparse_linalg.splu(a.tocsc())
        except RuntimeError as err:
            raise SingularSystemError(f"sparse LU failed: {err}") from err
        return FactorizationHandle(
            "lu-sparse",
            lambda r: lu.solve(r),
            lambda r: lu.solve(r, trans="T"),
            a.shape)
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise SingularSystemError("matrix has non-finite entries")
    lu, piv = scipy.linalg.lu_factor(a)
    if np.any(np.abs(np.diag(lu)) == 0.0):
        raise SingularSystemError("LU factorization is singular")
    return FactorizationHandle(
        "lu-dense",
        lambda r: scipy.linalg.lu_solve((lu, piv), r, trans=0),
        lambda r: scipy.linalg.lu_solve((lu, piv), r, trans=1),
        a.shape)


def solve_const_matrix(handle, b):
    """z = A^{-1} b through a stored real factorization.

    The forward pass reuses the handle (real and imaginary right-hand
    sides); the reverse pass is one transpose solve.  No solver-iteration
    nodes ever reach the tape.
    """
    bv = _raw(b)
    out = handle.solve(bv)
    if not isinstance(b, Var):
        return out
    return _emit(b.tape, "solve_const", out, (b,),
                 (lambda g: handle.solve_transpose(g),))


def solve_var_matrix(x, b, cond_limit=1e12):
    """z = X^{-1} b with X itself on the tape.

    Adjoints: b̄ = X^{-T} z̄ and X̄ = -b̄ z^T (both contributions applied
    when both operands are variables).  Refuses matrices whose condition
    estimate exceeds ``cond_limit`` rather than returning garbage.
    """
    t = _tape_of(x, b)
    xv, bv = _raw(x), _raw(b)
    xr = _real(xv)
    cond = np.linalg.cond(xr)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularSystemError(
            f"solve_var_matrix: condition estimate {cond:.3e} exceeds {cond_limit:.1e}")
    if isinstance(xv, BCArray) or isinstance(bv, BCArray):
        # j-channel by substitution: the O(|z2|^2) coupling term is the
        # same order CSFD truncates and underflows for perturbation sizes
        xb, bb = _as_bc(xv), _as_bc(bv)
        x1 = np.linalg.solve(xb.z1, bb.z1)
        x2 = np.linalg.solve(xb.z1, bb.z2 - xb.z2 @ x1)
        out = BCArray(x1, x2)
    else:
        out = np.linalg.solve(xv, bv)
    if not t.recording:
        return Var(t, -1, out)
    xt = np.swapaxes(np.asarray(xv), -1, -2)

    def vjp_b(g):
        return np.linalg.solve(xt, g)

    def vjp_x(g):
        bbar = np.linalg.solve(xt, g)
        return -bbar[..., :, None] * np.asarray(out)[..., None, :]

    return _emit(t, "solve_var", out, (b, x), (vjp_b, vjp_x))


# -- differentiable 3x3 SVD / polar -------------------------------------------

def _dot_last(a, b):
    return T.vsum(a * b, axis=-1)


def _expand(c):
    return T.reshape(c, np.shape(_real(_raw(c))) + (1,))


def _columns(f):
    return [f[..., :, 0], f[..., :, 1], f[..., :, 2]]


def _jacobi_orthogonalize(b_cols, v_cols, max_sweeps, tol):
    """Right-rotate column triples until mutually orthogonal.

    Convergence and skip decisions read real parts only, so a perturbed
    run performs exactly the rotations of the real run.
    """
    pairs = ((0, 1), (0, 2), (1, 2))
    for _ in range(max_sweeps):
        re = [T.real_of(c) for c in b_cols]
        worst = 0.0
        for p, q in pairs:
            num = np.abs(np.sum(re[p] * re[q], axis=-1))
            den = np.sqrt(np.sum(re[p] ** 2, axis=-1) * np.sum(re[q] ** 2, axis=-1))
            worst = max(worst, float(np.max(num / np.maximum(den, 1e-300))))
        if worst <= tol:
            return b_cols, v_cols, True
        for p, q in pairs:
            bp, bq = b_cols[p], b_cols[q]
            alpha = _dot_last(bp, bp)
            beta = _dot_last(bq, bq)
            gamma = _dot_last(bp, bq)
            ga = T.real_of(gamma)
            scale = np.sqrt(np.maximum(T.real_of(alpha) * T.real_of(beta), 0.0))
            skip = np.abs(ga) <= tol * np.maximum(scale, 1e-300)
            if np.all(skip):
                continue
            gamma_safe = T.where(skip, np.ones(ga.shape), gamma)
            zeta = (beta - alpha) / (2.0 * gamma_safe)
            sgn = np.where(T.real_of(zeta) < 0.0, -1.0, 1.0)
            tangent = sgn / (T.abs_analytic(zeta) + T.sqrt(1.0 + zeta * zeta))
            c = 1.0 / T.sqrt(1.0 + tangent * tangent)
            s = c * tangent
            c = T.where(skip, np.ones(ga.shape), c)
            s = T.where(skip, np.zeros(ga.shape), s)
            ce, se = _expand(c), _expand(s)
            b_cols[p], b_cols[q] = ce * bp - se * bq, se * bp + ce * bq
            vp, vq = v_cols[p], v_cols[q]
            v_cols[p], v_cols[q] = ce * vp - se * vq, se * vp + ce * vq
    return b_cols, v_cols, False


def _sort_descending(sigmas, u_cols, v_cols):
    # fixed 3-element sorting network; swaps keyed on real parts
    for i, j in ((0, 1), (1, 2), (0, 1)):
        need = T.real_of(sigmas[i]) < T.real_of(sigmas[j])
        need_c = need[..., None]
        si, sj = sigmas[i], sigmas[j]
        sigmas[i] = T.where(need, sj, si)
        sigmas[j] = T.where(need, si, sj)
        ui, uj = u_cols[i], u_cols[j]
        u_cols[i] = T.where(need_c, uj, ui)
        u_cols[j] = T.where(need_c, ui, uj)
        vi, vj = v_cols[i], v_cols[j]
        v_cols[i] = T.where(need_c, vj, vi)
        v_cols[j] = T.where(need_c, vi, vj)
    return sigmas, u_cols, v_cols


def svd3(f, max_sweeps=50, tol=1e-14):
    """SVD of (..., 3, 3) by one-sided Jacobi on recorded micro-ops.

    Returns (U, sigma, V) with singular values non-negative and sorted
    descending.  Raises ConvergenceError if the sweep cap is hit and
    DomainError on rank-deficient inputs (a zero column cannot be
    normalized).
    """
    from .errors import ConvergenceError

    t = _tape_of(f)
    fv = _raw(f)
    batch = _shape(_real(fv))[:-2]
    b_cols = _columns(f)
    eye = np.eye(3)
    v_cols = [t.constant(np.broadcast_to(eye[:, k], batch + (3,)).copy())
              for k in range(3)]
    b_cols, v_cols, ok = _jacobi_orthogonalize(b_cols, v_cols, max_sweeps, tol)
    if not ok:
        raise ConvergenceError(f"svd3 did not converge in {max_sweeps} sweeps")
    sigmas, u_cols = [], []
    for k in range(3):
        s = T.sqrt(_dot_last(b_cols[k], b_cols[k]))
        sigmas.append(s)
        u_cols.append(b_cols[k] / _expand(s))
    sigmas, u_cols, v_cols = _sort_descending(sigmas, u_cols, v_cols)
    u = T.stack(u_cols, axis=-1)
    v = T.stack(v_cols, axis=-1)
    sig = T.stack(sigmas, axis=-1)
    return u, sig, v


def svd3_sym(a, max_sweeps=50, tol=1e-14, sym_tol=1e-12):
    """SVD of a symmetric-real-part (..., 3, 3) matrix.

    The input is symmetrized on entry; a real-part asymmetry beyond
    ``sym_tol`` (relative) is a caller bug and raises.
    """
    av = _real(_raw(a))
    asym = np.max(np.abs(av - np.swapaxes(av, -1, -2)))
    scale = max(float(np.max(np.abs(av))), 1e-300)
    if asym > sym_tol * scale:
        raise DomainError(
            f"svd3_sym: real part asymmetric ({asym:.3e} > {sym_tol:.1e} * {scale:.3e})")
    a_sym = (a + T.swap_last2(a)) * 0.5
    return svd3(a_sym, max_sweeps=max_sweeps, tol=tol)


def polar3(f, max_sweeps=50, tol=1e-14):
    """Rotation factor of the polar decomposition F = R S.

    Uses the general Jacobi SVD of F; if det F < 0 the column of the
    smallest singular value is negated so R is a proper rotation.
    """
    u, sig, v = svd3(f, max_sweeps=max_sweeps, tol=tol)
    det_re = np.linalg.det(np.asarray(_real(_raw(f))))
    scale = np.ones(np.shape(det_re) + (1, 3))
    scale[..., 0, 2] = np.where(det_re < 0.0, -1.0, 1.0)
    return matmul(u * scale, T.swap_last2(v))
