import numpy as np
import pytest

from softloco import bicomplex as B
from softloco import clinalg as L
from softloco import tape as T
from softloco.errors import SingularSystemError

import oracles as OR


def _adjoint_pair(build, x, perturb=None):
    """Input adjoint (re, im/h) of a scalar-output tape function of x."""
    tp = T.Tape()
    xv = tp.input_vector(np.asarray(x, dtype=float).ravel(), perturb=perturb)
    y = build(tp, xv)
    adj = tp.input_adjoints(y)[0]
    return np.real(adj), np.imag(adj) / tp.h


def _compare_routes(fused, elementwise, x, rng, rel=1e-12):
    """Fused vs elementwise adjoints, gradient and Hessian-column flow."""
    k = int(rng.integers(len(np.ravel(x))))
    for perturb in (None, k):
        re_f, im_f = _adjoint_pair(fused, x, perturb)
        re_e, im_e = _adjoint_pair(elementwise, x, perturb)
        scale = max(np.abs(re_e).max(), 1e-300)
        assert np.abs(re_f - re_e).max() <= rel * scale
        scale = max(np.abs(im_e).max(), 1e-30)
        assert np.abs(im_f - im_e).max() <= rel * scale


def test_sqnorm_rule_vs_elementwise(rng):
    for _ in range(20):
        n = int(rng.integers(2, 9))
        x = rng.normal(size=n)
        _compare_routes(lambda tp, v: L.sqnorm(v),
                        lambda tp, v: OR.sqnorm_elementwise(v), x, rng)


def test_dot_rule_vs_elementwise(rng):
    for _ in range(20):
        n = int(rng.integers(2, 9))
        xy = rng.normal(size=2 * n)
        _compare_routes(
            lambda tp, v: L.dot(v[:n], v[n:]),
            lambda tp, v: OR.dot_elementwise(v[:n], v[n:]), xy, rng)


def test_matmul_rules_vs_elementwise(rng):
    for _ in range(10):
        n, k, m = (int(rng.integers(2, 5)) for _ in range(3))
        x = rng.normal(size=n * k + k * m)

        def fused(tp, v):
            a = T.reshape(v[:n * k], (n, k))
            b = T.reshape(v[n * k:], (k, m))
            return L.sqnorm(L.matmul(a, b))

        def elem(tp, v):
            a = T.reshape(v[:n * k], (n, k))
            b = T.reshape(v[n * k:], (k, m))
            return OR.sqnorm_elementwise(
                T.reshape(OR.matmul_elementwise(a, b), (n * m,)))

        _compare_routes(fused, elem, x, rng)


def test_trace_gram_rule_vs_elementwise(rng):
    for _ in range(10):
        n = int(rng.integers(2, 5))
        x = rng.normal(size=n * n)
        _compare_routes(
            lambda tp, v: T.vsum(L.trace_gram(T.reshape(v, (n, n)))),
            lambda tp, v: OR.trace_gram_elementwise(T.reshape(v, (n, n))),
            x, rng)
    # identity checks
    tp = T.Tape(recording=False)
    i3 = T.Var(tp, -1, np.eye(3))
    assert float(T.real_of(L.trace_gram(i3))) == 3.0


def test_det3_rule_vs_elementwise(rng):
    for _ in range(20):
        x = rng.normal(size=9) + np.eye(3).ravel()
        _compare_routes(
            lambda tp, v: L.det3(T.reshape(v, (3, 3))),
            lambda tp, v: OR.det3_elementwise(T.reshape(v, (3, 3))), x, rng)
    tp = T.Tape(recording=False)
    assert float(T.real_of(L.det3(T.Var(tp, -1, np.diag([2.0, 3.0, 4.0]))))) == 24.0


def test_det3_adjoint_defined_at_singular():
    x = np.diag([1.0, 1.0, 0.0]).ravel()  # singular
    re, _ = _adjoint_pair(lambda tp, v: L.det3(T.reshape(v, (3, 3))), x)
    assert np.all(np.isfinite(re))
    # cofactor form: dJ/dX33 = 1 (minor of the zero entry)
    assert re.reshape(3, 3)[2, 2] == pytest.approx(1.0)


def test_cof3_rule_vs_elementwise(rng):
    for _ in range(10):
        x = rng.normal(size=9) + np.eye(3).ravel()
        _compare_routes(
            lambda tp, v: L.sqnorm(L.cof3(T.reshape(v, (3, 3)))),
            lambda tp, v: OR.sqnorm_elementwise(
                T.reshape(OR.cof3_elementwise(T.reshape(v, (3, 3))), (9,))),
            x, rng)


def test_solve_const_matrix(rng):
    a = rng.normal(size=(8, 8))
    a = a @ a.T + 8.0 * np.eye(8)
    handle = L.factorize_cholesky(a)
    x = rng.normal(size=8)
    tp = T.Tape(recording=False)
    z = T.real_of(L.solve_const_matrix(handle, T.Var(tp, -1, x)))
    assert np.linalg.norm(a @ z - x) / np.linalg.norm(x) < 1e-12

    # adjoint vs elementwise route through the explicit inverse
    a_inv = np.linalg.inv(a)

    def fused(tp, v):
        return L.sqnorm(L.solve_const_matrix(handle, v))

    def elem(tp, v):
        return OR.sqnorm_elementwise(L.matvec(tp.constant(a_inv), v))

    _compare_routes(fused, elem, x, rng, rel=1e-9)

    # trivial: A = 2I
    h2 = L.factorize_cholesky(2.0 * np.eye(2))
    tp = T.Tape()
    b = tp.input_vector([2.0, 4.0])
    z = L.solve_const_matrix(h2, b)
    assert np.allclose(T.real_of(z), [1.0, 2.0])
    adj = tp.reverse_sweep(z[0])[b.id]
    assert np.allclose(adj, [0.5, 0.0])


def test_solve_const_keeps_tape_small(rng):
    a = rng.normal(size=(30, 30)) + 30 * np.eye(30)
    handle = L.factorize_lu(a)
    tp = T.Tape()
    b = tp.input_vector(rng.normal(size=30))
    y = L.sqnorm(L.solve_const_matrix(handle, b))
    assert len(tp) == 3  # input, solve node, sqnorm node


def test_solve_var_matrix_vs_cramer(rng):
    for _ in range(10):
        x = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
        b = rng.normal(size=3)
        flat = np.concatenate([x.ravel(), b])

        def fused(tp, v):
            return L.sqnorm(L.solve_var_matrix(T.reshape(v[:9], (3, 3)), v[9:]))

        def elem(tp, v):
            return OR.sqnorm_elementwise(
                OR.solve3_cramer(T.reshape(v[:9], (3, 3)), v[9:]))

        _compare_routes(fused, elem, flat, rng, rel=1e-9)


def test_solve_var_identity_rule():
    # X = I: z = b and Xbar = -zbar z^T when b is held fixed
    tp = T.Tape()
    xv = tp.input_vector(np.eye(3).ravel())
    b = np.array([1.0, 2.0, 3.0])
    z = L.solve_var_matrix(T.reshape(xv, (3, 3)), tp.constant(b))
    adj = tp.reverse_sweep(z[0])[xv.id].reshape(3, 3)
    expect = -np.outer(np.array([1.0, 0, 0]), b)  # -X^-T zbar z^T
    assert np.allclose(adj, expect)


def test_solve_var_condition_guard():
    tp = T.Tape()
    xv = tp.input_vector(np.diag([1.0, 1.0, 1e-15]).ravel())
    with pytest.raises(SingularSystemError):
        L.solve_var_matrix(T.reshape(xv, (3, 3)), tp.constant(np.ones(3)))


def test_solve_var_bicomplex_flow(rng):
    x = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
    b = rng.normal(size=3)
    flat = np.concatenate([x.ravel(), b])

    def f(tp, v):
        return L.sqnorm(L.solve_var_matrix(T.reshape(v[:9], (3, 3)), v[9:]))

    h_tape = T.hessian(f, flat)

    def f_bc(v_bc):
        tp = T.Tape(recording=False)
        return f(tp, tp.input_bicomplex(v_bc)).value

    h_bc = B.hessian(f_bc, flat)
    scale = np.abs(h_bc).max()
    assert np.abs(h_tape - h_bc).max() / scale < 1e-10


def test_svd3_reconstruction_and_order(rng):
    f = np.eye(3) + 0.4 * rng.normal(size=(6, 3, 3))
    tp = T.Tape(recording=False)
    u, s, v = L.svd3(T.Var(tp, -1, f.copy()))
    uv, sv, vv = T.real_of(u), T.real_of(s), T.real_of(v)
    rec = uv @ (sv[..., None] * np.swapaxes(vv, -1, -2))
    assert np.abs(rec - f).max() < 1e-10 * np.abs(f).max()
    assert np.abs(np.swapaxes(uv, -1, -2) @ uv - np.eye(3)).max() < 1e-10
    assert np.abs(np.swapaxes(vv, -1, -2) @ vv - np.eye(3)).max() < 1e-10
    assert np.all(sv >= 0)
    assert np.all(np.diff(sv, axis=-1) <= 1e-12)


def test_svd3_sym_examples():
    tp = T.Tape(recording=False)
    u, s, v = L.svd3_sym(T.Var(tp, -1, np.diag([3.0, 2.0, 1.0])))
    assert np.allclose(T.real_of(s), [3.0, 2.0, 1.0])
    u, s, v = L.svd3_sym(T.Var(tp, -1, np.eye(3)))
    assert np.allclose(T.real_of(s), [1.0, 1.0, 1.0])


def test_svd3_sigma_derivative():
    # d sigma_1 / d A_11 = 1 for A = diag(3,2,1)
    tp = T.Tape(h=1e-20)
    flat = tp.input_vector(np.diag([3.0, 2.0, 1.0]).ravel(), perturb=0)
    _, s, _ = L.svd3_sym(T.reshape(flat, (3, 3)))
    assert np.imag(s.value[0]) / tp.h == pytest.approx(1.0, rel=1e-12)


def test_polar3_of_scaled_rotation():
    th = 0.3
    r = np.array([[np.cos(th), -np.sin(th), 0.0],
                  [np.sin(th), np.cos(th), 0.0],
                  [0.0, 0.0, 1.0]])
    tp = T.Tape(recording=False)
    out = T.real_of(L.polar3(T.Var(tp, -1, (2.0 * r)[None])))
    assert np.abs(out[0] - r).max() < 1e-12


def test_polar3_reflection_fix():
    tp = T.Tape(recording=False)
    out = T.real_of(L.polar3(T.Var(tp, -1, np.diag([1.0, 1.0, -2.0])[None])))
    assert np.linalg.det(out[0]) == pytest.approx(1.0, rel=1e-12)
    assert np.abs(out[0] @ out[0].T - np.eye(3)).max() < 1e-12
