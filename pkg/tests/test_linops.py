import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpadmm.applications import MaskOperator, gradient_operator
from tpadmm.linops import (LinearMap, SpdSystem, cg_solve, diagonal, identity,
                           jacobi_preconditioner, matrix, min_eig_lower_bound,
                           operator_norm_sq, power_iteration, vstack, zero)


def adjoint_gap(op, rng, probes=100):
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(op.domain_dim)
        v = rng.standard_normal(op.range_dim)
        lhs = op.apply(u) @ v
        rhs = u @ op.apply_adjoint(v)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


def shipped_operators():
    rng = np.random.default_rng(3)
    grad = gradient_operator(5, 4, 2)
    mask = MaskOperator((rng.random(40) > 0.3).astype(float))
    M = matrix(rng.standard_normal((7, 40)))
    return {
        "gradient": grad,
        "mask": mask,
        "grad_after_mask": grad @ mask,
        "sum": grad.gram() + identity(40).scaled(2.0),
        "stack": vstack(grad, mask, M),
        "difference": M - M.scaled(0.5),
        "negation": -grad,
        "transpose": grad.T,
    }


@pytest.mark.parametrize("name", sorted(shipped_operators()))
def test_adjoint_consistency(name):
    op = shipped_operators()[name]
    assert adjoint_gap(op, np.random.default_rng(0)) < 1e-10


def test_dense_materialization_matches_apply():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((6, 4))
    op = matrix(M)
    np.testing.assert_allclose(op.to_dense(), M)
    np.testing.assert_allclose(op.T.to_dense(), M.T)
    np.testing.assert_allclose((op.T @ op).to_dense(), M.T @ M, atol=1e-12)


def test_dense_limit_enforced():
    big = identity(2000)
    with pytest.raises(ValueError):
        big.to_dense()


def test_shape_mismatch_raises():
    op = matrix(np.ones((3, 2)))
    with pytest.raises(ValueError):
        op.apply(np.ones(3))
    with pytest.raises(ValueError):
        op.apply_adjoint(np.ones(2))
    with pytest.raises(ValueError):
        op @ matrix(np.ones((4, 4)))


@pytest.mark.oracle
def test_gradient_norm_matches_dense_eigendecomposition():
    grad = gradient_operator(4, 4)
    D = grad.to_dense()
    oracle = np.linalg.eigvalsh(D.T @ D).max()
    est = operator_norm_sq(grad)
    assert est.converged
    assert abs(est.value - oracle) <= 1e-8


@pytest.mark.parametrize("w,h", [(3, 3), (8, 5), (16, 16)])
def test_gradient_norm_below_classical_bound(w, h):
    D = gradient_operator(w, h).to_dense()
    top = np.linalg.eigvalsh(D.T @ D).max()
    assert top <= 8.0
    assert operator_norm_sq(gradient_operator(w, h)).value <= 8.0 + 1e-9


def test_norm_of_scaled_identity_and_zero():
    assert abs(operator_norm_sq(identity(5).scaled(3.0)).value - 9.0) < 1e-12
    assert operator_norm_sq(zero(4, 3)).value == 0.0


def test_power_iteration_is_deterministic():
    sym = lambda v: np.arange(1.0, 7.0) * v
    a = power_iteration(sym, 6)
    b = power_iteration(sym, 6)
    assert a.value == b.value and a.iterations == b.iterations
    assert abs(a.value - 6.0) < 1e-10


@pytest.mark.oracle
def test_cg_matches_dense_solve_5x5():
    rng = np.random.default_rng(5)
    G = rng.standard_normal((5, 5))
    S = G @ G.T + 0.5 * np.eye(5)
    rhs = rng.standard_normal(5)
    res = cg_solve(SpdSystem(matrix(S)), rhs, tol=1e-14)
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(S, rhs), atol=1e-8)


def test_cg_with_jacobi_preconditioner():
    rng = np.random.default_rng(6)
    d = rng.uniform(1, 100, 30)
    G = rng.standard_normal((30, 30)) * 0.1
    S = np.diag(d) + G @ G.T
    rhs = rng.standard_normal(30)
    res = cg_solve(SpdSystem(matrix(S)), rhs, tol=1e-13, precond=jacobi_preconditioner(np.diag(S)))
    np.testing.assert_allclose(res.x, np.linalg.solve(S, rhs), rtol=1e-8, atol=1e-10)


def test_cg_zero_rhs_returns_zero():
    res = cg_solve(SpdSystem(identity(4).scaled(2.0)), np.zeros(4))
    assert np.all(res.x == 0) and res.converged


def test_cg_rejects_indefinite():
    S = matrix(np.diag([1.0, -1.0, 2.0]))
    with pytest.raises(np.linalg.LinAlgError):
        cg_solve(SpdSystem(S), np.array([1.0, 1.0, 1.0]))


@pytest.mark.parametrize("dims", [(4, 4), (8, 8), (16, 16)])
def test_cg_on_shipped_spd_compositions(dims):
    w, h = dims
    grad = gradient_operator(w, h)
    rng = np.random.default_rng(w)
    mask = MaskOperator((rng.random(w * h) > 0.4).astype(float))
    for op in (identity(w * h).scaled(2.0) + grad.gram(), mask.gram() + grad.gram().scaled(0.5) + identity(w * h).scaled(0.1)):
        S = op.to_dense()
        rhs = rng.standard_normal(w * h)
        res = cg_solve(SpdSystem(op), rhs, tol=1e-13, max_iter=2000)
        ref = np.linalg.solve(S, rhs)
        assert np.linalg.norm(res.x - ref) <= 1e-7 * np.linalg.norm(ref)


def test_min_eig_lower_bound_scaled_identity_weight():
    # Wbar = 2 I and any A, beta: the floor is exactly 2
    grad = gradient_operator(6, 6)
    for beta in (0.0, 0.5, 3.0):
        op = identity(36).scaled(2.0) + grad.gram().scaled(beta) if beta else identity(36).scaled(2.0)
        assert min_eig_lower_bound(SpdSystem(op, eig_floor=2.0)) == 2.0


def test_min_eig_lower_bound_inverse_iteration():
    rng = np.random.default_rng(2)
    G = rng.standard_normal((10, 10))
    S = G @ G.T + np.eye(10)
    lb = min_eig_lower_bound(SpdSystem(matrix(S)))
    true = np.linalg.eigvalsh(S).min()
    assert lb <= true
    assert lb >= 0.95 * true


def test_min_eig_lower_bound_singular_raises():
    grad = gradient_operator(4, 4)
    with pytest.raises(ValueError):
        min_eig_lower_bound(SpdSystem(grad.gram()))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_gradient_adjoint_property(w, h, c, seed):
    grad = gradient_operator(w, h, c)
    assert adjoint_gap(grad, np.random.default_rng(seed), probes=5) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_norm_monotone_under_contraction(n, seed, shrink):
    rng = np.random.default_rng(seed)
    M = matrix(rng.standard_normal((n, n)))
    P = diagonal(shrink * rng.uniform(-1, 1, n))
    full = operator_norm_sq(M).value
    comp = operator_norm_sq(M @ P).value
    assert comp <= full * (1 + 1e-8) + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_composition_dense_consistency(n, m, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    B = rng.standard_normal((n, m))
    comp = matrix(A) @ matrix(B) + identity(m).scaled(2.0)
    np.testing.assert_allclose(comp.to_dense(), A @ B + 2 * np.eye(m), atol=1e-12)
