import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from gapblowup import linalg as la


def poisson1d(m):
    main = 2.0 * np.ones(m)
    off = -np.ones(m - 1)
    return la.CsrMatrix.from_dense(np.diag(main) + np.diag(off, 1) + np.diag(off, -1))


def poisson2d(m):
    t = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    a = (sp.kron(sp.identity(m), t) + sp.kron(t, sp.identity(m))).tocoo()
    return la.CsrMatrix.from_coo(a.row, a.col, a.data, a.shape)


def advection_diffusion(m, peclet=5.0):
    # upwinded -u'' + c u' on m interior points, h = 1/(m+1)
    h = 1.0 / (m + 1)
    c = peclet
    main = (2.0 / h**2 + c / h) * np.ones(m)
    lo = (-1.0 / h**2 - c / h) * np.ones(m - 1)
    up = (-1.0 / h**2) * np.ones(m - 1)
    return la.CsrMatrix.from_dense(np.diag(main) + np.diag(lo, -1) + np.diag(up, 1))


# ---------------------------------------------------------------- CSR


def test_identity_spmv():
    x = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(la.spmv(la.CsrMatrix.identity(3), x), x)


def test_poisson_kills_affine():
    a = poisson1d(10)
    x = 0.3 + 0.7 * np.arange(10)
    y = la.spmv(a, x)
    assert np.allclose(y[1:-1], 0.0, atol=1e-14)


def test_random_matches_dense():
    rng = np.random.default_rng(7)
    d = rng.normal(size=(5, 5)) * (rng.random((5, 5)) < 0.6)
    x = rng.normal(size=5)
    a = la.CsrMatrix.from_dense(d)
    assert np.max(np.abs(a @ x - d @ x)) <= 1e-14


def test_spmv_dimension_error():
    with pytest.raises(la.DimensionError):
        la.spmv(la.CsrMatrix.identity(3), np.ones(4))


def test_csr_validation():
    with pytest.raises(ValueError):
        la.CsrMatrix((2, 2), np.array([0, 2, 2]), np.array([1, 0]), np.array([1.0, 2.0]))
    with pytest.raises(la.DimensionError):
        la.CsrMatrix((2, 2), np.array([0, 1]), np.array([0]), np.array([1.0]))
    with pytest.raises(la.DimensionError):
        la.CsrMatrix((2, 2), np.array([0, 1, 2]), np.array([0, 5]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        la.CsrMatrix((2, 2), np.array([0, 2, 1]), np.array([0, 1]), np.array([1.0, 1.0]))


def test_from_coo_sums_duplicates():
    a = la.CsrMatrix.from_coo([0, 0, 1], [1, 1, 0], [1.0, 2.0, 4.0], (2, 2))
    assert np.array_equal(a.toarray(), [[0.0, 3.0], [4.0, 0.0]])
    assert a.asymmetry() == pytest.approx(1.0 / 4.0)
    assert np.array_equal(a.transpose().toarray(), [[0.0, 4.0], [3.0, 0.0]])


@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_spmv_bitwise_deterministic(m, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(m, m)) * (rng.random((m, m)) < 0.3)
    a = la.CsrMatrix.from_dense(d)
    x = rng.normal(size=m)
    assert np.array_equal(a @ x, a @ x)


# ---------------------------------------------------------------- Thomas


def test_thomas_identity():
    t = la.Tridiagonal(np.zeros(4), np.ones(5), np.zeros(4))
    rhs = np.arange(5.0)
    assert np.array_equal(la.thomas_solve(t, rhs), rhs)


def test_thomas_quadratic_manufactured():
    m = 50
    h = 1.0 / (m + 1)
    x = h * np.arange(1, m + 1)
    exact = x * (1 - x)  # -u'' = 2, u(0) = u(1) = 0
    t = la.Tridiagonal(-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1))
    got = la.thomas_solve(t, 2 * h * h * np.ones(m))
    assert np.max(np.abs(got - exact)) < 1e-12


def test_thomas_vs_dense():
    rng = np.random.default_rng(3)
    lo, up = rng.normal(size=3), rng.normal(size=3)
    diag = 4 + rng.random(4)
    t = la.Tridiagonal(lo, diag, up)
    rhs = rng.normal(size=4)
    assert np.max(np.abs(la.thomas_solve(t, rhs) - np.linalg.solve(t.toarray(), rhs))) < 1e-13


def test_thomas_zero_pivot():
    t = la.Tridiagonal(np.array([1.0]), np.array([1.0, 1.0]), np.array([1.0]))
    with pytest.raises(la.SingularMatrixError):
        la.thomas_solve(t, np.ones(2))


def test_thomas_rows_of_very_different_scale():
    # row scales spanning 28 orders must not trip the pivot test
    s = 10.0 ** np.linspace(-14, 14, 30)
    t = la.Tridiagonal(-s[1:], 3 * s, -s[:-1])
    x = np.linspace(1, 2, 30)
    got = la.thomas_solve(t, t.matvec(x))
    assert np.max(np.abs(got - x)) < 1e-12


@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_thomas_residual_dominant(m, seed):
    rng = np.random.default_rng(seed)
    lo, up = rng.normal(size=m - 1), rng.normal(size=m - 1)
    diag = np.abs(np.concatenate([[0], lo])) + np.abs(np.concatenate([up, [0]])) + 1 + rng.random(m)
    t = la.Tridiagonal(lo, diag, up)
    rhs = rng.normal(size=m)
    x = la.thomas_solve(t, rhs)
    assert np.max(np.abs(t.matvec(x) - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_tridiagonal_shape_check():
    with pytest.raises(la.DimensionError):
        la.Tridiagonal(np.zeros(2), np.ones(4), np.zeros(3))


# ---------------------------------------------------------------- Krylov


def test_pcg_identity_one_iteration():
    x, rep = la.pcg_solve(la.CsrMatrix.identity(6), np.arange(1.0, 7.0))
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(x, np.arange(1.0, 7.0))


def test_pcg_poisson_vs_dense():
    a = poisson2d(32)
    rhs = np.ones(a.shape[0])
    x, rep = la.pcg_solve(a, rhs, tol=1e-12, max_iter=2000)
    ref = np.linalg.solve(a.toarray(), rhs)
    assert rep.converged
    assert abs(x.max() - ref.max()) < 1e-8


def test_jacobi_not_worse_than_none():
    a = poisson2d(32)
    rhs = np.ones(a.shape[0])
    x0, r0 = la.pcg_solve(a, rhs, tol=1e-10, max_iter=2000)
    x1, r1 = la.pcg_solve(a, rhs, tol=1e-10, max_iter=2000, preconditioner="jacobi")
    assert r1.iterations <= r0.iterations
    assert np.max(np.abs(x0 - x1)) < 1e-8 * np.max(np.abs(x0))


@pytest.mark.parametrize("pc", ["ssor", "ssor(1.2)", "amg"])
def test_other_preconditioners_converge(pc):
    a = poisson2d(24)
    rhs = np.ones(a.shape[0])
    x, rep = la.pcg_solve(a, rhs, tol=1e-10, preconditioner=pc)
    assert rep.converged
    assert rep.preconditioner.startswith(pc.split("(")[0])


def test_preconditioner_spec_errors():
    a = poisson1d(4)
    with pytest.raises(ValueError):
        la.make_preconditioner(a, "ilu")
    with pytest.raises(ValueError):
        la.make_preconditioner(a, "ssor(2.5)")


def test_amg_setup_leaves_global_rng_alone():
    np.random.seed(11)
    expected = np.random.random()
    np.random.seed(11)
    la.make_preconditioner(poisson2d(16), "amg")
    assert np.random.random() == expected


def test_pcg_deterministic_with_amg():
    a = poisson2d(24)
    rhs = np.linspace(0, 1, a.shape[0])
    x1, _ = la.pcg_solve(a, rhs, preconditioner="amg")
    x2, _ = la.pcg_solve(a, rhs, preconditioner="amg")
    assert np.array_equal(x1, x2)


def test_pcg_rejects_asymmetric():
    with pytest.raises(la.ContractError):
        la.pcg_solve(advection_diffusion(8), np.ones(8))


def test_pcg_rejects_indefinite():
    a = la.CsrMatrix.from_dense(np.diag([1.0, -1.0]))
    with pytest.raises(la.ContractError):
        la.pcg_solve(a, np.ones(2))


def test_pcg_max_iter_is_data():
    a = poisson2d(16)
    x, rep = la.pcg_solve(a, np.ones(a.shape[0]), tol=1e-14, max_iter=3)
    assert not rep.converged and rep.iterations == 3


def test_pcg_bad_tol():
    with pytest.raises(ValueError):
        la.pcg_solve(la.CsrMatrix.identity(2), np.ones(2), tol=0.0)


def test_zero_rhs():
    x, rep = la.pcg_solve(poisson1d(5), np.zeros(5))
    assert rep.converged and rep.iterations == 0 and not x.any()


def test_bicgstab_identity():
    x, rep = la.bicgstab_solve(la.CsrMatrix.identity(5), np.ones(5))
    assert rep.iterations == 1 and rep.converged


def test_bicgstab_advection_diffusion_vs_dense():
    a = advection_diffusion(64)
    rhs = np.ones(64)
    x, rep = la.bicgstab_solve(a, rhs, tol=1e-12, preconditioner="jacobi")
    ref = np.linalg.solve(a.toarray(), rhs)
    assert rep.converged
    assert np.max(np.abs(x - ref)) < 1e-8 * np.max(np.abs(ref))


def test_bicgstab_agrees_with_pcg():
    a = poisson2d(16)
    rhs = np.sin(np.arange(a.shape[0]))
    x1, _ = la.pcg_solve(a, rhs, tol=1e-12)
    x2, _ = la.bicgstab_solve(a, rhs, tol=1e-12)
    assert np.max(np.abs(x1 - x2)) < 1e-8


def test_pcg_error_energy_norm_nonincreasing():
    a = poisson2d(10)
    rhs = np.cos(np.arange(a.shape[0]))
    dense = a.toarray()
    exact = np.linalg.solve(dense, rhs)
    errs = []
    la.pcg_solve(a, rhs, tol=1e-13, callback=lambda x: errs.append(float((x - exact) @ dense @ (x - exact))))
    assert len(errs) > 3
    assert all(b <= a_ * (1 + 1e-10) + 1e-28 for a_, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("solver", [la.pcg_solve, la.bicgstab_solve])
def test_reported_residual_is_true_residual(solver):
    a = poisson2d(12)
    rhs = np.linspace(-1, 2, a.shape[0])
    x, rep = solver(a, rhs, tol=1e-9, preconditioner="jacobi")
    true = np.linalg.norm(rhs - a.toarray() @ x) / np.linalg.norm(rhs)
    assert abs(rep.relative_residual - true) <= 1e-13
    assert rep.converged == (rep.relative_residual <= 1e-9)
    assert set(rep.as_dict()) >= {"solver", "preconditioner", "iterations", "relative_residual", "converged"}
