import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sciunfold import apply_phi, apply_phi_transpose, build_operator, pixel_index, simulate_measurement
from sciunfold.errors import ShapeError
from sciunfold.operator import dense_phi, gaussian_noise, unvec, vec

from conftest import dense_measurement_matrix, vec_cube


def test_psi_small_example():
    mask = np.zeros((2, 2, 2))
    mask[:, :, 0] = [[1, 0], [0, 1]]
    mask[:, :, 1] = [[1, 1], [0, 0]]
    op = build_operator(mask)
    np.testing.assert_array_equal(op.psi, [[2, 1], [0, 1]])


@pytest.mark.parametrize("fill, expected", [(1.0, 8.0), (0.0, 0.0)])
def test_psi_constant_masks(fill, expected):
    op = build_operator(np.full((4, 4, 8), fill))
    assert np.all(op.psi == expected)


def test_rejects_non_binary_mask():
    with pytest.raises(ValueError):
        build_operator(np.full((2, 2, 2), 0.5))


def test_operator_is_immutable_copy():
    mask = np.ones((2, 2, 2))
    op = build_operator(mask)
    mask[0, 0, 0] = 0
    assert op.psi[0, 0] == 2
    with pytest.raises(ValueError):
        op.mask[0, 0, 0] = 0


def test_apply_phi_examples():
    op = build_operator(np.ones((1, 1, 2)))
    assert apply_phi(op, np.array([0.2, 0.5]).reshape(1, 1, 2))[0, 0] == pytest.approx(0.7, abs=1e-15)

    cube = np.random.default_rng(0).random((3, 3, 4))
    assert np.all(apply_phi(build_operator(np.zeros((3, 3, 4))), cube) == 0)

    first_only = np.zeros((3, 3, 4))
    first_only[:, :, 0] = 1
    np.testing.assert_array_equal(apply_phi(build_operator(first_only), cube), cube[:, :, 0])


def test_apply_phi_shape_mismatch():
    op = build_operator(np.ones((2, 2, 2)))
    with pytest.raises(ShapeError):
        apply_phi(op, np.ones((2, 2, 3)))
    with pytest.raises(ShapeError):
        apply_phi_transpose(op, np.ones((3, 2)))


def test_transpose_examples():
    op = build_operator(np.ones((2, 2, 3)))
    np.testing.assert_array_equal(apply_phi_transpose(op, np.ones((2, 2))), np.ones((2, 2, 3)))
    assert np.all(apply_phi_transpose(op, np.zeros((2, 2))) == 0)


def test_adjoint_against_dense_matrix(rng):
    mask = (rng.random((3, 3, 4)) < 0.5).astype(float)
    op = build_operator(mask)
    x = rng.standard_normal((3, 3, 4))
    y = rng.standard_normal((3, 3))
    phi = dense_measurement_matrix(mask)
    np.testing.assert_allclose(vec(apply_phi(op, x)), phi @ vec_cube(x), atol=1e-14)
    np.testing.assert_allclose(vec(apply_phi_transpose(op, y)), phi.T @ vec(y), atol=1e-14)
    lhs = np.vdot(apply_phi(op, x), y)
    rhs = np.vdot(x, apply_phi_transpose(op, y))
    assert abs(lhs - rhs) <= 1e-12


def test_dense_phi_matches_reference(rng):
    mask = (rng.random((2, 3, 3)) < 0.5).astype(float)
    np.testing.assert_array_equal(dense_phi(build_operator(mask)), dense_measurement_matrix(mask))


def test_vec_roundtrip(rng):
    cube = rng.random((2, 3, 4))
    np.testing.assert_array_equal(unvec(vec(cube), cube.shape), cube)


@pytest.mark.parametrize("r, c, n", [(0, 0, 0), (1, 0, 1), (0, 1, 2)])
def test_pixel_index(r, c, n):
    assert pixel_index(r, c, n_rows=2) == n


dims = st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))


@settings(max_examples=60, deadline=None)
@given(dims.flatmap(lambda d: st.tuples(
    arrays(np.float64, d, elements=st.sampled_from([0.0, 1.0])),
    arrays(np.float64, d, elements=st.floats(-10, 10)),
    arrays(np.float64, d[:2], elements=st.floats(-10, 10)),
    arrays(np.float64, d, elements=st.floats(-10, 10)),
    st.floats(-3, 3), st.floats(-3, 3))))
def test_adjointness_and_linearity(case):
    mask, x, y, z, a, b = case
    op = build_operator(mask)
    lhs = np.vdot(apply_phi(op, x), y)
    rhs = np.vdot(x, apply_phi_transpose(op, y))
    assert abs(lhs - rhs) <= 1e-12 * max(np.linalg.norm(x) * np.linalg.norm(y), 1e-300) + 1e-300
    combo = apply_phi(op, a * x + b * z)
    ref = a * apply_phi(op, x) + b * apply_phi(op, z)
    scale = np.abs(a * x).sum() + np.abs(b * z).sum()
    assert np.all(np.abs(combo - ref) <= 1e-12 * max(scale, 1.0))


@settings(max_examples=30, deadline=None)
@given(dims.flatmap(lambda d: arrays(np.float64, d, elements=st.sampled_from([0.0, 1.0]))))
def test_phi_phit_is_diag_psi(mask):
    op = build_operator(mask)
    phi = dense_measurement_matrix(mask)
    expected = np.diag(op.psi.reshape(-1, order="F"))
    np.testing.assert_array_equal(phi @ phi.T, expected)


def test_simulate_zero_noise_equals_phi(rng):
    op = build_operator((rng.random((4, 4, 3)) < 0.5).astype(float))
    video = rng.random((4, 4, 3))
    np.testing.assert_array_equal(simulate_measurement(video, op, 0.0, seed=5), apply_phi(op, video))


def test_simulate_is_deterministic(rng):
    mask = (rng.random((4, 4, 3)) < 0.5).astype(float)
    video = rng.random((4, 4, 3))
    a = simulate_measurement(video, mask, 0.01, seed=42)
    b = simulate_measurement(video, mask, 0.01, seed=42)
    c = simulate_measurement(video, mask, 0.01, seed=43)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_simulate_noise_statistics():
    y = simulate_measurement(np.zeros((64, 64, 2)), np.ones((64, 64, 2)), 0.01, seed=9)
    assert 0.008 <= y.std() <= 0.012
    assert abs(y.mean()) < 0.001


def test_simulate_rejects_negative_noise():
    with pytest.raises(ValueError):
        simulate_measurement(np.zeros((2, 2, 2)), np.ones((2, 2, 2)), -0.1, seed=0)


def test_box_muller_stream_is_standard_normal():
    z = gaussian_noise((200_000,), seed=3)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    # odd lengths take a prefix of the paired stream
    np.testing.assert_array_equal(gaussian_noise((5,), seed=3), gaussian_noise((6,), seed=3)[:5])
