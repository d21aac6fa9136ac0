import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubalnet.tensor import (
    ShapeError,
    SingularTubeError,
    TransformMatrix,
    facewise_product,
    frobenius_norm,
    frontal_slice,
    hadamard,
    horizontal_slice,
    identity_tube,
    lateral_slice,
    m_product,
    mode3_product,
    sum_dim2,
    t_transpose,
    to_transform_domain,
    tubal_inverse,
    with_frontal_slice,
    with_lateral_slice,
)
from tubalnet.transform import dct_transform, identity_transform, random_orthogonal_transform


def tube(*vals):
    return np.array(vals, dtype=float).reshape(1, 1, -1)


def loop_mode3(a, mat):
    n1, n2, n3 = a.shape
    out = np.zeros((n1, n2, mat.shape[0]))
    for i in range(n1):
        for j in range(n2):
            for p in range(mat.shape[0]):
                for k in range(n3):
                    out[i, j, p] += mat[p, k] * a[i, j, k]
    return out


def loop_facewise(a, b):
    l, p, n = a.shape
    m = b.shape[1]
    out = np.zeros((l, m, n))
    for k in range(n):
        for i in range(l):
            for j in range(m):
                acc = 0.0
                for q in range(p):
                    acc += a[i, q, k] * b[q, j, k]
                out[i, j, k] = acc
    return out


HADAMARD_2 = TransformMatrix(np.array([[1.0, 1.0], [1.0, -1.0]]))


def all_transforms(n3, seed=0):
    return [identity_transform(n3), dct_transform(n3), random_orthogonal_transform(n3, seed)]


class TestMode3:
    def test_permutation(self):
        out = mode3_product(tube(1, 2), np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(out, tube(2, 1))

    def test_identity_leaves_tensor(self):
        a = np.random.default_rng(0).standard_normal((3, 4, 5))
        np.testing.assert_array_equal(mode3_product(a, np.eye(5)), a)

    def test_all_ones_hadamard_matrix(self):
        out = mode3_product(np.ones((2, 2, 2)), np.array([[1.0, 1.0], [1.0, -1.0]]))
        expected = loop_mode3(np.ones((2, 2, 2)), np.array([[1.0, 1.0], [1.0, -1.0]]))
        np.testing.assert_array_equal(out, expected)
        np.testing.assert_array_equal(out[..., 0], 2.0)
        np.testing.assert_array_equal(out[..., 1], 0.0)

    def test_rectangular_matrix_changes_depth(self):
        a = np.random.default_rng(1).standard_normal((2, 3, 4))
        mat = np.random.default_rng(2).standard_normal((6, 4))
        out = mode3_product(a, mat)
        assert out.shape == (2, 3, 6)
        np.testing.assert_allclose(out, loop_mode3(a, mat), atol=1e-12)

    def test_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 2, 3\).*\(2, 2\)"):
            mode3_product(np.ones((2, 2, 3)), np.eye(2))


class TestFacewise:
    def test_tubes(self):
        np.testing.assert_array_equal(facewise_product(tube(1, 2), tube(3, 4)), tube(3, 8))

    def test_identity_stack(self):
        b = np.random.default_rng(0).standard_normal((3, 4, 2))
        eye = np.repeat(np.eye(3)[:, :, None], 2, axis=2)
        np.testing.assert_array_equal(facewise_product(eye, b), b)

    def test_against_triple_loop(self):
        a = np.arange(1, 13, dtype=float)
        b = np.arange(1, 13, dtype=float)
        # slice-major fill: slice k holds entries 6k+1 .. 6k+6, row-major
        a = np.transpose(a.reshape(2, 2, 3), (1, 2, 0))
        b = np.transpose(b.reshape(2, 3, 2), (1, 2, 0))
        out = facewise_product(a, b)
        assert out.shape == (2, 2, 2)
        np.testing.assert_array_equal(out, loop_facewise(a, b))
        np.testing.assert_array_equal(out[:, :, 0], a[:, :, 0] @ b[:, :, 0])

    @pytest.mark.parametrize("sa,sb", [((2, 3, 2), (2, 2, 2)), ((2, 3, 2), (3, 2, 3))])
    def test_shape_errors(self, sa, sb):
        with pytest.raises(ShapeError):
            facewise_product(np.ones(sa), np.ones(sb))


class TestMProduct:
    def test_identity_transform_is_facewise_exactly(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((4, 2, 5))
        np.testing.assert_array_equal(m_product(a, b, identity_transform(5)), facewise_product(a, b))

    def test_hand_evaluated_tube(self):
        np.testing.assert_allclose(m_product(tube(1, 2), tube(3, 4), HADAMARD_2), tube(11, 10), atol=1e-14)

    def test_associativity(self):
        rng = np.random.default_rng(4)
        a, b, c = (rng.standard_normal((2, 2, 3)) for _ in range(3))
        for m in all_transforms(3):
            left = m_product(m_product(a, b, m), c, m)
            right = m_product(a, m_product(b, c, m), m)
            np.testing.assert_allclose(left, right, atol=1e-10)

    def test_transform_size_mismatch(self):
        with pytest.raises(ShapeError):
            m_product(np.ones((2, 2, 3)), np.ones((2, 2, 3)), dct_transform(4))

    def test_scaled_orthogonal_transform_flagged(self):
        assert HADAMARD_2.orthogonal_scaled
        assert HADAMARD_2.scale == pytest.approx(2.0)
        np.testing.assert_allclose(HADAMARD_2.inverse, HADAMARD_2.matrix / 2)

    def test_non_orthogonal_transform(self):
        m = TransformMatrix(np.array([[2.0, 1.0], [0.0, 1.0]]))
        assert not m.orthogonal_scaled
        a = np.random.default_rng(5).standard_normal((2, 2, 2))
        np.testing.assert_allclose(m_product(a, a, m), loop_mode3(loop_facewise(loop_mode3(a, m.matrix), loop_mode3(a, m.matrix)), m.inverse), atol=1e-12)

    def test_singular_matrix_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            TransformMatrix(np.ones((2, 2)))


class TestTranspose:
    def test_identity_transform_slice_transpose(self):
        a = np.random.default_rng(0).standard_normal((2, 3, 4))
        out = t_transpose(a, identity_transform(4))
        for k in range(4):
            np.testing.assert_array_equal(out[:, :, k], a[:, :, k].T)

    @pytest.mark.parametrize("m", all_transforms(4), ids=lambda m: m.name)
    def test_transform_domain_definition(self, m):
        a = np.random.default_rng(1).standard_normal((2, 3, 4))
        a_hat = to_transform_domain(a, m)
        t_hat = to_transform_domain(t_transpose(a, m), m)
        for k in range(4):
            np.testing.assert_allclose(t_hat[:, :, k], a_hat[:, :, k].T, atol=1e-12)

    @pytest.mark.parametrize("m", all_transforms(4), ids=lambda m: m.name)
    def test_involution_and_reversal(self, m):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 2, 4))
        np.testing.assert_allclose(t_transpose(t_transpose(a, m), m), a, atol=1e-12)
        lhs = t_transpose(m_product(a, b, m), m)
        rhs = m_product(t_transpose(b, m), t_transpose(a, m), m)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestElementwiseAndReductions:
    def test_hadamard(self):
        a = np.random.default_rng(0).standard_normal((2, 3, 2))
        np.testing.assert_array_equal(hadamard(a, np.ones_like(a)), a)
        np.testing.assert_array_equal(hadamard(a, np.zeros_like(a)), 0.0)
        np.testing.assert_array_equal(hadamard(tube(1, 2, 3), tube(4, 5, 6)), tube(4, 10, 18))
        with pytest.raises(ShapeError):
            hadamard(a, np.ones((3, 2, 2)))

    def test_sum_dim2(self):
        lat = np.random.default_rng(1).standard_normal((3, 1, 2))
        np.testing.assert_array_equal(sum_dim2(lat), lat)
        np.testing.assert_array_equal(sum_dim2(np.ones((2, 3, 2))), np.full((2, 1, 2), 3.0))

    def test_sum_dim2_against_loop(self):
        a = np.random.default_rng(2).standard_normal((4, 5, 3))
        expected = np.zeros((4, 1, 3))
        for i in range(4):
            for k in range(3):
                for j in range(5):
                    expected[i, 0, k] += a[i, j, k]
        np.testing.assert_array_equal(sum_dim2(a), expected)

    def test_slices_round_trip(self):
        a = np.random.default_rng(3).standard_normal((3, 4, 2))
        assert horizontal_slice(a, 1).shape == (1, 4, 2)
        lat = lateral_slice(a, 2)
        assert lat.shape == (3, 1, 2)
        np.testing.assert_array_equal(with_lateral_slice(np.zeros_like(a), 2, lat)[:, 2, :], a[:, 2, :])
        np.testing.assert_array_equal(with_frontal_slice(a, 1, frontal_slice(a, 1)), a)
        assert frobenius_norm(a) == pytest.approx(np.linalg.norm(a.ravel()))


class TestTubalInverse:
    @pytest.mark.parametrize("m", all_transforms(3), ids=lambda m: m.name)
    def test_identity_tube_is_own_inverse(self, m):
        e = identity_tube(m)
        np.testing.assert_allclose(tubal_inverse(e, m), e, atol=1e-12)

    def test_elementwise_under_identity(self):
        np.testing.assert_array_equal(tubal_inverse(tube(2, 4), identity_transform(2)), tube(0.5, 0.25))

    @pytest.mark.parametrize("m", all_transforms(5), ids=lambda m: m.name)
    def test_multiply_back(self, m):
        x = np.random.default_rng(4).standard_normal((1, 1, 5))
        np.testing.assert_allclose(m_product(tubal_inverse(x, m), x, m), identity_tube(m), atol=1e-10)

    def test_singular(self):
        with pytest.raises(SingularTubeError):
            tubal_inverse(tube(1, 1), HADAMARD_2)
        with pytest.raises(ShapeError):
            tubal_inverse(np.ones((2, 1, 2)), HADAMARD_2)


def random_transform(kind, n3, seed):
    return {"identity": identity_transform, "dct": dct_transform}.get(kind, lambda n: random_orthogonal_transform(n, seed))(n3)


dims = st.integers(1, 5)
kinds = st.sampled_from(["identity", "dct", "rand-orth"])


@settings(max_examples=100, deadline=None)
@given(l=dims, p=dims, q=dims, r=dims, n3=dims, kind=kinds, seed=st.integers(0, 2**31))
def test_algebra_properties(l, p, q, r, n3, kind, seed):
    rng = np.random.default_rng(seed)
    m = random_transform(kind, n3, seed)
    a, b, b2, c = (
        rng.standard_normal((l, p, n3)),
        rng.standard_normal((p, q, n3)),
        rng.standard_normal((p, q, n3)),
        rng.standard_normal((q, r, n3)),
    )
    np.testing.assert_allclose(m_product(m_product(a, b, m), c, m), m_product(a, m_product(b, c, m), m), atol=1e-10)
    np.testing.assert_allclose(m_product(a, b + b2, m), m_product(a, b, m) + m_product(a, b2, m), atol=1e-10)
    np.testing.assert_allclose(
        t_transpose(m_product(a, b, m), m), m_product(t_transpose(b, m), t_transpose(a, m), m), atol=1e-10
    )
    np.testing.assert_allclose(mode3_product(mode3_product(a, m.matrix), m.inverse), a, atol=1e-10)
    assert np.max(np.abs(facewise_product(a, b) - loop_facewise(a, b))) <= 1e-12
