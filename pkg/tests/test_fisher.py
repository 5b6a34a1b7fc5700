"""Fisher encoding against finite-difference and direct-density oracles."""

import numpy as np
import pytest

from mppfv.errors import InputError
from mppfv.fisher import (FisherVector, encode_fv, l2_normalize, power_normalize)
from mppfv.gmm import GmmModel

from oracles import fisher_vector_direct, fisher_vector_fd


def _random_model(rng, k, d):
    weights = rng.dirichlet(np.ones(k) * 5.0)
    means = rng.standard_normal((k, d))
    sigmas = rng.uniform(0.5, 1.5, (k, d))
    return GmmModel(weights, means, sigmas)


def test_descriptor_at_the_mean_of_a_single_gaussian():
    # gamma = 1, z = 0: mean block vanishes, every sigma entry is -1/sqrt(2).
    model = GmmModel(np.array([1.0]), np.array([[0.3, -0.7, 2.0]]),
                     np.array([[0.9, 1.1, 0.4]]))
    fv = encode_fv(model, model.means.copy())
    np.testing.assert_allclose(fv.mean_grad, 0.0, atol=1e-12)
    np.testing.assert_allclose(fv.sigma_grad, -1.0 / np.sqrt(2.0), atol=1e-12)


def test_model_samples_drive_the_encoding_toward_zero():
    # Descriptors drawn from the model itself: the expected gradient is zero,
    # so the empirical encoding shrinks as 1/sqrt(n).
    rng = np.random.default_rng(0)
    model = GmmModel(np.array([0.4, 0.6]),
                     np.array([[-1.0, 0.5], [1.0, -0.5]]),
                     np.array([[0.8, 1.2], [1.1, 0.6]]))
    n = 50_000
    comp = rng.choice(2, size=n, p=model.weights)
    x = model.means[comp] + rng.standard_normal((n, 2)) * model.sigmas[comp]
    fv = encode_fv(model, x)
    assert np.abs(fv.vector).max() < 0.05


def test_matches_finite_difference_gradient_on_golden_model():
    weights = np.array([0.35, 0.65])
    means = np.array([[0.0, 1.0], [1.5, -0.5]])
    sigmas = np.array([[0.8, 1.2], [0.6, 1.0]])
    model = GmmModel(weights, means, sigmas)
    xs = np.array([[0.2, 0.4], [1.0, -1.0], [-0.5, 1.5]])
    fv = encode_fv(model, xs)
    fd_mean, fd_sigma = fisher_vector_fd(weights, means, sigmas, xs)
    np.testing.assert_allclose(fv.mean_grad, fd_mean, rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(fv.sigma_grad, fd_sigma, rtol=1e-4, atol=1e-6)


def test_matches_direct_per_descriptor_oracle():
    rng = np.random.default_rng(1)
    model = _random_model(rng, 3, 4)
    xs = rng.standard_normal((7, 4))
    fv = encode_fv(model, xs)
    want_mean, want_sigma = fisher_vector_direct(model.weights, model.means,
                                                 model.sigmas, xs)
    np.testing.assert_allclose(fv.mean_grad, want_mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(fv.sigma_grad, want_sigma, rtol=1e-10, atol=1e-12)


def test_additivity_over_subsets():
    # encode(concat(A, B)) == (|A| FV_A + |B| FV_B) / (|A| + |B|), exactly the
    # algebra that lets one Fisher vector decompose by scale.
    rng = np.random.default_rng(2)
    model = _random_model(rng, 2, 3)
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal((9, 3))
    fv_all = encode_fv(model, np.concatenate([a, b])).vector
    fv_a = encode_fv(model, a).vector
    fv_b = encode_fv(model, b).vector
    combined = (len(a) * fv_a + len(b) * fv_b) / (len(a) + len(b))
    np.testing.assert_allclose(fv_all, combined, atol=1e-12)


def test_descriptor_order_never_changes_the_encoding():
    rng = np.random.default_rng(3)
    model = _random_model(rng, 2, 3)
    xs = rng.standard_normal((20, 3))
    forward_order = encode_fv(model, xs).vector
    shuffled = encode_fv(model, xs[rng.permutation(20)]).vector
    np.testing.assert_allclose(shuffled, forward_order, atol=1e-12)


def test_empty_subset_rejected():
    model = GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(InputError):
        encode_fv(model, np.zeros((0, 2)))


class TestPowerNormalize:
    def test_square_root_arithmetic(self):
        fv = FisherVector.from_vector(np.array([4.0, -9.0]), k=1, d=1)
        out = power_normalize(fv)
        np.testing.assert_allclose(out.vector, [2.0, -3.0], atol=1e-12)
        assert out.power_normalized

    def test_alpha_one_is_identity(self):
        fv = FisherVector.from_vector(np.array([0.3, -1.7, 0.0, 2.0]), k=1, d=2)
        np.testing.assert_allclose(power_normalize(fv, alpha=1.0).vector, fv.vector)

    def test_zero_vector_stays_zero(self):
        fv = FisherVector.from_vector(np.zeros(4), k=1, d=2)
        np.testing.assert_array_equal(power_normalize(fv).vector, np.zeros(4))

    def test_double_application_refused(self):
        fv = power_normalize(FisherVector.from_vector(np.ones(2), k=1, d=1))
        with pytest.raises(InputError):
            power_normalize(fv)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_unit_vector_unchanged(self):
        v = np.array([0.0, 1.0])
        np.testing.assert_allclose(l2_normalize(v), v)

    def test_zero_vector_flagged(self):
        fv = FisherVector.from_vector(np.zeros(4), k=1, d=2)
        out = l2_normalize(fv)
        assert out.zero_norm and out.l2_normalized
        np.testing.assert_array_equal(out.vector, np.zeros(4))

    def test_fisher_vector_norm_becomes_one(self):
        rng = np.random.default_rng(4)
        fv = FisherVector.from_vector(rng.standard_normal(8), k=2, d=2)
        out = l2_normalize(fv)
        assert np.linalg.norm(out.vector) == pytest.approx(1.0, abs=1e-12)


def test_vector_layout_and_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    model = _random_model(rng, 2, 3)
    fv = encode_fv(model, rng.standard_normal((4, 3)))
    assert fv.vector.shape == (2 * 2 * 3,)
    np.testing.assert_array_equal(fv.vector[:6], fv.mean_grad.ravel())
    np.testing.assert_array_equal(fv.vector[6:], fv.sigma_grad.ravel())

    path = tmp_path / "fv.mppf"
    out = l2_normalize(power_normalize(fv))
    out.save(path)
    loaded = FisherVector.load(path)
    assert loaded.power_normalized and loaded.l2_normalized
    np.testing.assert_allclose(loaded.vector, out.vector, atol=1e-7)
