import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import EXAMPLE_B, example_b_spec, grid, lower, unit_box
from oracles import T_by_linear_solve, cofactor_det
from wmpsys import sysmodel as sm
from wmpsys.sysmodel import AnisotropicSpec, Box, IsotropicSpec, SingularMatrixError, SpecError


def _containing_T(a):
    """T built from the minor that deletes the row and column holding a^{ji}."""
    a = np.asarray(a, dtype=float)
    A, B = sm.assemble_A_B(a)
    n = a.shape[0]
    T = np.empty((n, n))
    for j in range(n):
        for i in range(n):
            sub = np.delete(np.delete(A, i, axis=0), j, axis=1)  # a^{ji} sits at A[i, j]
            T[j, i] = (-1) ** (i + j) * cofactor_det(sub) / cofactor_det(B)
    return T


def test_A_and_B_layout():
    a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
    A, B = sm.assemble_A_B(a)
    assert A[0, 1] == a[1, 0]  # A[r, c] = a^{cr}
    assert np.array_equal(B, A[1:, 1:])


def test_T_for_scalar_equation():
    bundle = sm.test_matrix_T([[3.0]])
    assert bundle.T.tolist() == [[1.0]]
    assert bundle.detB == 1.0 and bundle.detA == 3.0
    assert sm.residual_system22([[3.0]], bundle.T) == 0.0


def test_T_on_symmetric_example():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    bundle = sm.test_matrix_T(a)
    assert np.allclose(bundle.T, [[1.0, -0.5], [-0.5, 1.0]])
    assert bundle.detA / bundle.detB == pytest.approx(1.5)
    assert sm.residual_system22(a, bundle.T) <= 1e-15


def test_positional_minors_solve_the_system_for_nonsymmetric_a():
    a = np.array([[2.0, 1.0], [0.0, 2.0]])
    T = sm.test_matrix_T(a).T
    assert np.allclose(T, T_by_linear_solve(a), atol=1e-14)
    assert sm.residual_system22(a, T) <= 1e-15
    # the reading that deletes the row/column holding a^{ji} does not solve it
    assert sm.residual_system22(a, _containing_T(a)) > 0.1


def test_conventions_agree_for_symmetric_a():
    rng = np.random.default_rng(2)
    G = rng.normal(size=(4, 4))
    a = G @ G.T + 4 * np.eye(4)
    assert np.allclose(sm.test_matrix_T(a).T, _containing_T(a), atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_T_matches_linear_solve_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        a = rng.normal(size=(n, n)) + n * np.eye(n)
        bundle = sm.test_matrix_T(a)
        T_ref = T_by_linear_solve(a)
        assert np.max(np.abs(bundle.T - T_ref)) <= 1e-10 * np.max(np.abs(T_ref))
        assert bundle.T[0, 0] == pytest.approx(1.0)
        lhs = sum(a[l, 0] * bundle.T[0, l] for l in range(n))
        assert lhs == pytest.approx(bundle.detA / bundle.detB, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-2, 2, allow_nan=False))))
def test_T_solves_cancellation_system(M):
    n = M.shape[0]
    a = M + 2.5 * n * np.eye(n)
    bundle = sm.test_matrix_T(a)
    assert sm.residual_system22(a, bundle.T) <= 1e-10
    # A T^T = (det A / det B) I
    A = bundle.A_mat
    assert np.allclose(A @ bundle.T.T, bundle.detA / bundle.detB * np.eye(n),
                       atol=1e-10 * np.max(np.abs(A)) * np.max(np.abs(bundle.T)))


def test_T_singular_B_reports_point():
    a = np.array([[1.0, 1.0], [1.0, 0.0]])
    with pytest.raises(SingularMatrixError) as info:
        sm.test_matrix_T(a, point=(0.25, 0.5))
    assert info.value.point == (0.25, 0.5)


def test_T_stacked_singular_points_to_the_bad_sample():
    a = np.stack([np.eye(2), [[1.0, 1.0], [1.0, 0.0]], np.eye(2)])
    pts = np.array([[0.0, 0.0], [0.3, 0.4], [1.0, 1.0]])
    with pytest.raises(SingularMatrixError) as info:
        sm.test_matrix_T(a, pts)
    assert info.value.point == (0.3, 0.4)


def test_T_batched_equals_pointwise():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(7, 3, 3)) + 3 * np.eye(3)
    batch = sm.test_matrix_T(a)
    for k in range(7):
        assert np.allclose(batch.T[k], sm.test_matrix_T(a[k]).T, rtol=0, atol=1e-14)


# -- specs ---------------------------------------------------------------------------

def test_box():
    box = Box((0, -1), (2, 1))
    assert box.dim == 2 and box.volume == 4.0
    assert box.contains((2.0, 0.0)) and not box.contains((2.1, 0.0))
    with pytest.raises(SpecError):
        Box((0.0,), (0.0,))
    with pytest.raises(SpecError):
        Box((0.0,), (1.0, 2.0))


def test_isotropic_spec_validation():
    with pytest.raises(SpecError):
        IsotropicSpec(2, 2, grid([["1"]], 2), lower(2, 2), unit_box(2))
    with pytest.raises(SpecError):
        IsotropicSpec(1, 2, grid([["1"]], 1), lower(1, 2), unit_box(2))
    with pytest.raises(SpecError):
        IsotropicSpec(1, 2, grid([["1"]], 2), lower(1, 2), unit_box(1))


def test_lower_order_validation():
    good = lower(2, 2)
    with pytest.raises(SpecError):
        sm.LowerOrderData(good.C, good.D, good.f[:1], good.g, good.theta).check(2, 2)
    with pytest.raises(SpecError):
        sm.LowerOrderData(good.C, good.D, good.f, good.g, 2.0).check(2, 2)
    with pytest.raises(SpecError):
        sm.LowerOrderData(good.C, good.D, good.f, good.g, 4.0, nu=0.0).check(2, 2)
    assert good.theta == 4.0 and good.nu == 1.0


def test_isotropic_principal_values_are_diagonal_in_pq():
    spec = IsotropicSpec(2, 2, grid([["1 + x1", "2"], ["3", "4"]], 2), lower(2, 2), unit_box(2))
    ap = spec.principal_values(np.array([[0.5, 0.0]]))
    assert ap.shape == (1, 2, 2, 2, 2)
    assert ap[0, 0, 0].tolist() == [[1.5, 0.0], [0.0, 1.5]]
    assert ap[0, 1, 0].tolist() == [[3.0, 0.0], [0.0, 3.0]]


def _aniso_grid(n, m, entries):
    return [[[[entries(i, j, p, q) for q in range(m)] for p in range(m)] for j in range(n)]
            for i in range(n)]


def test_anisotropic_requires_pq_symmetry():
    bad = _aniso_grid(1, 2, lambda i, j, p, q: "1" if p == q else ("0.5" if p < q else "0.2"))
    with pytest.raises(SpecError, match="symmetric"):
        AnisotropicSpec.from_grid(1, 2, grid(bad, 2), lower(1, 2), unit_box(2))
    ok = _aniso_grid(1, 2, lambda i, j, p, q: "1" if p == q else ("0.5" if p < q else "0.50"))
    spec = AnisotropicSpec.from_grid(1, 2, grid(ok, 2), lower(1, 2), unit_box(2))
    assert spec.principal_values(np.zeros((1, 2)))[0, 0, 0].tolist() == [[1.0, 0.5], [0.5, 1.0]]


def test_anisotropic_h11_must_be_one():
    a = grid(_aniso_grid(2, 1, lambda i, j, p, q: "1" if i == j else "0"), 1)
    with pytest.raises(SpecError, match="h"):
        AnisotropicSpec.from_grid(2, 1, a, lower(2, 1), unit_box(1), h=grid([["2", "0"], ["0", "1"]], 1))
    with pytest.raises(SpecError, match="symmetric"):
        AnisotropicSpec.from_grid(2, 1, a, lower(2, 1), unit_box(1), h=grid([["1", "0.1"], ["0", "1"]], 1))
    spec = AnisotropicSpec.from_grid(2, 1, a, lower(2, 1), unit_box(1))
    with pytest.raises(SpecError):
        spec.h_values(np.zeros((1, 1)))


# -- blocks, E and the (H) matrices --------------------------------------------------

def test_example_b_blocks():
    spec, _ = example_b_spec()
    blocks = sm.point_blocks(spec, (0.3, 0.6))
    b = np.array(EXAMPLE_B["b"])
    G = np.array(EXAMPLE_B["G"])
    for p in range(2):
        for q in range(2):
            assert np.allclose(blocks.M_blocks[p, q], G[p, q] * b.T)
            assert blocks.L[p, q] == pytest.approx(G[p, q] ** 2 * np.linalg.det(b))
            inv = np.linalg.inv(blocks.M_blocks[p, q])
            # M_pq^{-1}[i, j] = v[j, i] / L_pq
            assert np.allclose(inv, blocks.v[:, :, p, q].T / blocks.L[p, q], atol=1e-14)


def test_containing_reading_of_block_cofactors_fails_on_example_b():
    spec, _ = example_b_spec()
    blocks = sm.point_blocks(spec, (0.5, 0.5))
    M = blocks.M_blocks[0, 0]
    inv = np.linalg.inv(M)
    containing = np.array([[(-1) ** (i + j) * cofactor_det(np.delete(np.delete(M, j, 0), i, 1))
                            for j in range(2)] for i in range(2)])
    assert not np.allclose(inv, containing.T / blocks.L[0, 0])


def test_example_b_E_F_and_M():
    spec, _ = example_b_spec()
    pts = np.array([[0.1, 0.9], [0.5, 0.5]])
    hs = sm.solve_E(spec, pts)
    expected = np.array([[1.0, 0.0], [-0.5, 1.0]])
    assert np.allclose(hs.E, expected, atol=1e-12)
    assert np.max(hs.independence_residual) <= 1e-12
    assert np.max(hs.weight_identity_residual) <= 1e-12
    assert np.allclose(hs.f_pq, np.array(EXAMPLE_B["G"]) * 1.0)  # f_pq = g_pq det b
    V, F, Mbig = sm.build_VFM(spec, hs.E, pts)
    assert np.allclose(V, np.eye(2))
    assert np.allclose(F, EXAMPLE_B["G"])
    assert np.allclose(Mbig, np.kron(np.eye(2), EXAMPLE_B["G"]))


@pytest.mark.parametrize("seed", range(5))
def test_E_matches_linear_solve_of_every_block(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    b = rng.uniform(-0.4, 0.4, (n, n))
    b[1:, 0] = 0.0
    b += 2.0 * np.eye(n)
    G = np.array([[1.5, 0.4], [0.4, 1.2]])
    spec = sm.example6_build(grid(b.tolist(), m), grid(G.tolist(), m), lower(n, m), unit_box(m))
    hs = sm.solve_E(spec, np.array([[0.2, 0.7]]))
    L = np.linalg.det(G[:, :, None, None] * b.T[None, None])
    for p in range(m):
        for q in range(m):
            M_pq = G[p, q] * b.T
            f_pq = L[p, q] / G[p, q] ** (n - 1)
            assert np.allclose(hs.E[0], f_pq * np.linalg.solve(M_pq, np.eye(n)), atol=1e-12)
    # closed forms of the product family
    assert np.allclose(hs.E[0], np.linalg.det(b) * np.linalg.inv(b).T, atol=1e-12)
    assert hs.E[0, 0, 0] == pytest.approx(np.linalg.det(b[1:, 1:]))


def test_default_normalization_without_f():
    spec, _ = example_b_spec()
    plain = AnisotropicSpec(spec.n, spec.m, spec.a_upper, spec.lower, spec.domain, spec.h_upper)
    hs = sm.solve_E(plain, np.array([[0.5, 0.5]]))
    # f_11 = 1: E = M_11^{-1} H = (2 b^T)^{-1}
    assert np.allclose(hs.E[0], np.linalg.inv(2.0 * np.array(EXAMPLE_B["b"]).T))
    assert hs.independence_residual[0] <= 1e-14
    assert np.allclose(hs.f_pq[0], np.array(EXAMPLE_B["G"]) / 2.0)


def test_independence_fails_for_unrelated_blocks():
    # a^{ij}_11 and a^{ij}_22 use different b matrices: no common E
    def entry(i, j, p, q):
        if p != q:
            return "0"
        b = [[2.0, 0.5], [0.0, 1.0]] if p == 0 else [[1.0, 0.0], [0.7, 3.0]]
        return repr(b[i][j])

    a = grid(_aniso_grid(2, 2, entry), 2)
    spec = AnisotropicSpec.from_grid(2, 2, a, lower(2, 2), unit_box(2),
                                     h=grid([["1", "0"], ["0", "1"]], 2))
    hs = sm.solve_E(spec, np.array([[0.5, 0.5]]))
    assert hs.independence_residual[0] > 1e-3


def test_solve_E_raises_on_singular_first_block():
    a = grid(_aniso_grid(2, 1, lambda i, j, p, q: "1"), 1)
    spec = AnisotropicSpec.from_grid(2, 1, a, lower(2, 1), unit_box(1),
                                     h=grid([["1", "0"], ["0", "1"]], 1))
    with pytest.raises(SingularMatrixError):
        sm.solve_E(spec, np.array([[0.5]]))


def test_solve_E_needs_h():
    a = grid(_aniso_grid(1, 1, lambda *k: "1"), 1)
    spec = AnisotropicSpec.from_grid(1, 1, a, lower(1, 1), unit_box(1))
    with pytest.raises(SpecError):
        sm.solve_E(spec, np.array([[0.5]]))


def test_example6_build_validates_shapes():
    with pytest.raises(SpecError):
        sm.example6_build(grid([["1", "0"]], 2), grid([["1"]], 2))


def test_example6_with_varying_coefficients():
    b = grid([["2 + x1", "x2"], ["0", "1 + x1*x2"]], 2)
    G = grid([["1 + x2", "0.3"], ["0.3", "2"]], 2)
    spec = sm.example6_build(b, G, lower(2, 2), unit_box(2))
    pts = np.random.default_rng(0).uniform(0, 1, (10, 2))
    hs = sm.solve_E(spec, pts)
    bv = np.stack([[[fld.values(pts[k:k + 1])[0] for fld in row] for row in b] for k in range(10)])
    for k in range(10):
        assert np.allclose(hs.E[k], np.linalg.det(bv[k]) * np.linalg.inv(bv[k]).T, atol=1e-12)
    assert np.max(hs.independence_residual) <= 1e-12
