import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix, diags, identity

from slitsphere.eigen import IndefinitePencil, SolverOptions, smallest_eigenpairs
from slitsphere.fem import apply_constraints, build_antisymmetry_constraint, build_zero_mean_constraint

from conftest import HALF, cached_system


def _laplacian_1d(n):
    """Neumann path Laplacian: singular, kernel = constants."""
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    return diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1], format="csr")


class TestTrivial:
    def test_identity_pencil(self):
        A = identity(5, format="csr")
        p = smallest_eigenpairs(A, A, SolverOptions(k=1))[0]
        assert p.value == 1.0
        assert p.residual == 0.0

    def test_diagonal(self):
        pairs = smallest_eigenpairs(diags([1.0, 2.0, 3.0]).tocsr(), identity(3).tocsr(), SolverOptions(k=2))
        assert [p.value for p in pairs] == pytest.approx([1.0, 2.0], abs=1e-14)

    def test_bad_options(self):
        with pytest.raises(ValueError):
            SolverOptions(k=0)
        with pytest.raises(ValueError):
            SolverOptions(tol=0.0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            smallest_eigenpairs(identity(2).tocsr(), identity(2).tocsr(), SolverOptions(k=3))

    def test_indefinite(self):
        K = diags([-1.0, 2.0, 3.0]).tocsr()
        with pytest.raises(IndefinitePencil):
            smallest_eigenpairs(K, identity(3).tocsr(), SolverOptions(k=1))


class TestSparsePath:
    n = 1500

    def _pencil(self):
        K = _laplacian_1d(self.n) * self.n ** 2
        M = diags(np.linspace(1.0, 2.0, self.n)).tocsr() / self.n
        return K, M

    def test_matches_dense(self):
        K, M = self._pencil()
        u = np.ones(self.n)
        pairs = smallest_eigenpairs(K, M, SolverOptions(k=3), deflation=(u, M @ u))
        ref = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 3])
        np.testing.assert_allclose([p.value for p in pairs], ref[1:], rtol=1e-9)
        for p in pairs:
            assert p.converged and p.residual < 1e-8
            assert abs((M @ u) @ p.vector) < 1e-10

    def test_normalization_orthogonality(self):
        K, M = self._pencil()
        u = np.ones(self.n)
        pairs = smallest_eigenpairs(K, M, SolverOptions(k=3), deflation=(u, M @ u))
        Y = np.column_stack([p.vector for p in pairs])
        np.testing.assert_allclose(Y.T @ (M @ Y), np.eye(3), atol=1e-10)
        for p in pairs:
            assert p.value == pytest.approx(p.vector @ (K @ p.vector), rel=1e-14)
            assert p.vector[np.argmax(np.abs(p.vector))] > 0

    def test_deterministic_seed(self):
        K, M = self._pencil()
        u = np.ones(self.n)
        a = smallest_eigenpairs(K, M, SolverOptions(k=2, seed=3), deflation=(u, M @ u))
        b = smallest_eigenpairs(K, M, SolverOptions(k=2, seed=3), deflation=(u, M @ u))
        for p, q in zip(a, b):
            assert p.value == q.value
            np.testing.assert_array_equal(p.vector, q.vector)

    def test_degenerate_cluster(self):
        # two copies of the same pencil: every eigenvalue is double
        K, M = self._pencil()
        from scipy.sparse import block_diag
        K2, M2 = block_diag([K, K]).tocsr(), block_diag([M, M]).tocsr()
        pairs = smallest_eigenpairs(K2, M2, SolverOptions(k=2, shift=1.0))
        assert pairs[0].value == pytest.approx(0.0, abs=1e-8)
        assert pairs[1].value == pytest.approx(0.0, abs=1e-8)
        Y = np.column_stack([p.vector for p in pairs])
        np.testing.assert_allclose(Y.T @ (M2 @ Y), np.eye(2), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2 ** 31))
def test_random_dense_pencils(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, n))
    K = csr_matrix(A @ A.T + 1e-3 * np.eye(n))
    M = csr_matrix(B @ B.T + n * np.eye(n))
    k = min(3, n - 3)
    pairs = smallest_eigenpairs(K, M, SolverOptions(k=k))
    ref = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True)[:k]
    np.testing.assert_allclose([p.value for p in pairs], ref, rtol=1e-9, atol=1e-12)
    assert all(a <= b for a, b in zip([p.value for p in pairs], [p.value for p in pairs][1:]))


class TestOnSlitSystems:
    def test_dense_and_arpack_agree(self):
        system = cached_system(20, HALF)
        Kc, Mc = apply_constraints(system.K, system.M, build_antisymmetry_constraint(system))
        a = smallest_eigenpairs(Kc, Mc, SolverOptions(k=2, dense_below=0))
        b = smallest_eigenpairs(Kc, Mc, SolverOptions(k=2, dense_below=10 ** 6))
        np.testing.assert_allclose([p.value for p in a], [p.value for p in b], rtol=1e-9)

    def test_unslit_antisymmetric_n40(self):
        system = cached_system(40, (0.0, 0.0, 0.0))
        Kc, Mc = apply_constraints(system.K, system.M, build_antisymmetry_constraint(system))
        p = smallest_eigenpairs(Kc, Mc, SolverOptions(k=1))[0]
        assert p.value == pytest.approx(2.0, rel=1e-2)
        assert p.residual < 1e-8

    def test_deflated_enriched(self):
        system = cached_system(20, HALF)
        zc = build_zero_mean_constraint(system)
        pairs = smallest_eigenpairs(system.K, system.M, SolverOptions(k=3), deflation=zc.deflation)
        for p in pairs:
            assert abs(system.mean_weights @ p.vector) < 1e-10
            assert p.value > 0.5
