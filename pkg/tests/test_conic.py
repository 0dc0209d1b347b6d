import numpy as np
import pytest

from risrobust.conic import (ConicProgram, hermitian_embed, kron, lift, s_procedure_lmi, schur_lift,
                             sign_definiteness_lmi, svec_vec_identity, vec)
from risrobust.validate import s_procedure_soundness, sign_definiteness_soundness


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_hermitian_embed_identity():
    np.testing.assert_allclose(hermitian_embed(np.eye(2)), np.eye(4))


def test_hermitian_embed_spectrum(rng):
    ev = np.linalg.eigvalsh(hermitian_embed(np.array([[0, 1j], [-1j, 0]])))
    np.testing.assert_allclose(ev, [-1, -1, 1, 1], atol=1e-12)
    A = crandn(rng, 4, 4)
    H = A + A.conj().T
    direct = np.sort(np.repeat(np.linalg.eigvalsh(H), 2))
    np.testing.assert_allclose(np.linalg.eigvalsh(hermitian_embed(H)), direct, atol=1e-10)


def test_hermitian_embed_rejects_non_hermitian():
    p = ConicProgram()
    with pytest.raises(ValueError):
        p.add_psd(lift(np.array([[1.0, 1.0], [0.0, 1.0]])))


def _schur_prog(t, r):
    p = ConicProgram()
    s = p.var("s")
    p.add_psd(schur_lift(lift(t) + s * 0.0, lift(r)))
    p.minimize(s * 0.0)
    p.add_ge(s, 0.0)
    p.add_ge(-s, -1.0)
    return p.solve()


def test_schur_lift():
    assert _schur_prog(1.0, np.zeros(2)).ok
    r = np.array([0.6, 0.8j])
    assert _schur_prog(0.99, r).status == "infeasible"
    B = schur_lift(lift(1.0), lift(r)).const
    assert np.linalg.eigvalsh(B).min() == pytest.approx(0.0, abs=1e-12)


def test_solve_scalar_and_trace():
    p = ConicProgram()
    x = p.var("x")
    p.add_ge(x, 1.0)
    p.minimize(x)
    rep = p.solve()
    assert rep.ok and rep.value(x) == pytest.approx(1.0, abs=1e-6)
    q = ConicProgram()
    X = q.hermitian_var("X", 2)
    q.add_psd(X - np.eye(2))
    q.minimize(X.trace().real)
    rep = q.solve()
    assert rep.ok and rep.objective == pytest.approx(2.0, abs=1e-6)


def test_maximize_reports_program_sense():
    p = ConicProgram()
    x = p.var("x")
    p.add_ge(-x, -3.0)
    p.maximize(x)
    rep = p.solve()
    assert rep.objective == pytest.approx(3.0, abs=1e-6)


@pytest.mark.parametrize("backend", ["cvxopt", "clarabel", "clarabel-noeq"])
def test_backends_agree(backend):
    p = ConicProgram()
    z = p.complex_var("z", 2)
    t = p.var("t")
    p.add_soc(t, z - np.array([1.0, 1j]))
    p.add_ge(z.real.sum(), 3.0)
    p.minimize(t)
    rep = p.solve(backend=backend, fallback=False)
    assert rep.ok and rep.objective == pytest.approx(np.sqrt(2.0), abs=1e-6)


def test_infeasible_and_unbounded_reported():
    p = ConicProgram()
    x = p.var("x", nonneg=True)
    p.add_ge(-x, 1.0)
    p.minimize(x)
    assert p.solve().status == "infeasible"
    q = ConicProgram()
    y = q.var("y")
    q.minimize(y)
    q.add_ge(-y, -1.0)
    assert q.solve().status in ("unbounded", "numerical_failure")


def test_s_procedure_trivial_and_infeasible():
    p = ConicProgram()
    blk, rhos = s_procedure_lmi(p, np.zeros((2, 2)), np.zeros(2), 1.0, 1.0)
    p.add_psd(blk)
    p.minimize(rhos[0])
    rep = p.solve()
    assert rep.ok and rep.value(rhos[0]) == pytest.approx(0.0, abs=1e-6)
    q = ConicProgram()
    blk, _ = s_procedure_lmi(q, np.zeros((2, 2)), np.array([1.0, 0.0]), 0.5, 1.0)
    q.add_psd(blk)
    q.minimize(lift(0.0))
    assert q.solve().status == "infeasible"


def test_sign_definiteness_scalar_case():
    p = ConicProgram()
    blk, _ = sign_definiteness_lmi(p, 2.0 * np.eye(1), [np.eye(1)], [np.eye(1)], [1.0])
    p.add_psd(blk)
    p.minimize(lift(0.0))
    assert p.solve().ok
    q = ConicProgram()
    blk, taus = sign_definiteness_lmi(q, 1.9 * np.eye(1), [np.eye(1)], [np.eye(1)], [1.0])
    q.add_psd(blk)
    q.minimize(lift(0.0))
    assert q.solve().status == "infeasible"


def test_sign_definiteness_zero_radius_reduces():
    p = ConicProgram()
    E = np.eye(2)
    blk, taus = sign_definiteness_lmi(p, E, [np.eye(2)], [np.eye(2)], [0.0])
    assert taus == [] and np.allclose(lift(blk).const, E)
    with pytest.raises(ValueError):
        sign_definiteness_lmi(p, E, [np.eye(2)] * 3, [np.eye(2)] * 3, [1.0] * 3)


def test_robust_transform_sampling(rng):
    assert s_procedure_soundness(rng, instances=3, samples=2000) <= 1e-6
    assert sign_definiteness_soundness(rng, instances=3, samples=2000) <= 1e-6


def test_vec_and_kron():
    np.testing.assert_array_equal(vec(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4])
    B = np.arange(4.0).reshape(2, 2) + 1j
    K = kron(np.eye(2), B)
    K = lift(K).const if not isinstance(K, np.ndarray) else K
    np.testing.assert_allclose(K, np.block([[B, np.zeros((2, 2))], [np.zeros((2, 2)), B]]))


def test_trace_vec_identity(rng):
    for _ in range(20):
        A, B, C, D = (crandn(rng, 3, 3) for _ in range(4))
        lhs, rhs = svec_vec_identity(A, B, C, D)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_affine_expression_algebra(rng):
    p = ConicProgram()
    X = p.complex_var("X", (2, 3))
    A = crandn(rng, 3, 2)
    x0 = crandn(rng, 2, 3)
    vals = {"X.re": x0.real.ravel(), "X.im": x0.imag.ravel()}
    np.testing.assert_allclose((A @ X).value(vals), A @ x0, atol=1e-12)
    np.testing.assert_allclose(vec(X).value(vals), x0.ravel(order="F"), atol=1e-12)
    np.testing.assert_allclose(X.H.value(vals), x0.conj().T, atol=1e-12)
