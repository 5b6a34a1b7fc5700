"""Projection fitting against analytic and sample-covariance oracles."""

import warnings

import numpy as np
import pytest

from mppfv.errors import InputError
from mppfv.pca import PcaModel, fit_pca, project, subsample


def test_points_on_a_line_recover_the_diagonal_direction():
    t = np.linspace(-3, 3, 50)
    pts = np.stack([t, t], axis=1)  # y = x exactly
    with pytest.warns(UserWarning, match="rank"):  # rank 1 < 2 requested dims
        model = fit_pca(pts, 2)
    np.testing.assert_allclose(np.abs(model.components[0]),
                               [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-9)
    assert model.explained_variance[1] == pytest.approx(0.0, abs=1e-12)


def test_known_diagonal_covariance_eigenvalues_recovered():
    # Independent oracle: the true covariance is diagonal with known entries,
    # so the top eigenvalues must come back within sampling error.
    rng = np.random.default_rng(42)
    variances = np.linspace(9.0, 0.5, 64)
    x = rng.standard_normal((10_000, 64)) * np.sqrt(variances)
    model = fit_pca(x, 16)
    np.testing.assert_allclose(model.explained_variance, variances[:16], rtol=0.05)


def test_complete_basis_reconstructs_exactly():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((40, 6))
    model = fit_pca(x, 6)
    projected = project(model, x)
    back = projected @ model.components + model.mean
    np.testing.assert_allclose(back, x, atol=1e-6)


def test_identity_projection_leaves_data_unchanged():
    model = PcaModel(mean=np.zeros(3), components=np.eye(3),
                     explained_variance=np.ones(3))
    x = np.random.default_rng(4).standard_normal((7, 3))
    np.testing.assert_allclose(project(model, x), x, atol=1e-12)


def test_projecting_the_mean_gives_zero():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((100, 5)) + 3.0
    model = fit_pca(x, 3)
    np.testing.assert_allclose(project(model, model.mean[None, :]), 0.0, atol=1e-9)


def test_golden_4to2_projection_matches_hand_multiply():
    mean = np.array([1.0, 2.0, 3.0, 4.0])
    rows = np.array([[0.5, 0.5, 0.5, 0.5],
                     [0.5, -0.5, 0.5, -0.5]])
    model = PcaModel(mean=mean, components=rows, explained_variance=np.ones(2))
    x = np.array([[2.0, 4.0, 0.0, 8.0]])
    # Hand multiply: centered = (1, 2, -3, 4); rows @ centered = (2.0, -4.0).
    np.testing.assert_allclose(project(model, x), [[2.0, -4.0]], atol=1e-12)


def test_rows_orthonormal_and_variance_ordered():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((500, 12)) @ rng.standard_normal((12, 12))
    model = fit_pca(x, 8)
    gram = model.components @ model.components.T
    np.testing.assert_allclose(gram, np.eye(8), atol=1e-10)
    projected = project(model, x)
    variances = projected.var(axis=0)
    assert (np.diff(variances) <= 1e-9).all()
    # Centered data projects to (empirically) zero-mean coordinates.
    assert np.abs(projected.mean(axis=0)).max() <= 1e-6 * x.std()


def test_rank_deficient_fit_warns_and_completes_orthonormally():
    rng = np.random.default_rng(7)
    base = rng.standard_normal((30, 2))
    x = np.concatenate([base, base @ rng.standard_normal((2, 3))], axis=1)  # rank 2 in 5-D
    with pytest.warns(UserWarning, match="rank"):
        model = fit_pca(x, 4)
    gram = model.components @ model.components.T
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-8)


def test_dim_mismatch_rejected():
    model = PcaModel(np.zeros(3), np.eye(3), np.ones(3))
    with pytest.raises(InputError):
        project(model, np.zeros((2, 5)))


def test_subsample_seeded_and_without_replacement():
    x = np.arange(100, dtype=np.float64)[:, None]
    a = subsample(x, 10, seed=3)
    b = subsample(x, 10, seed=3)
    np.testing.assert_array_equal(a, b)
    assert len(np.unique(a)) == 10
    np.testing.assert_array_equal(subsample(x, 200, seed=0), x)


def test_round_trip_through_file(tmp_path):
    rng = np.random.default_rng(8)
    model = fit_pca(rng.standard_normal((200, 10)), 4)
    path = tmp_path / "proj.mppp"
    model.save(path)
    loaded = PcaModel.load(path)
    assert loaded.d_in == 10 and loaded.d_out == 4 and not loaded.whiten
    np.testing.assert_allclose(loaded.components, model.components, atol=1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # no warnings on a clean load/project
        project(loaded, rng.standard_normal((5, 10)))
