"""All five pooling strategies, their identities, and the scale-balance property."""

import numpy as np
import pytest

from mppfv.descriptors import DescriptorSet
from mppfv.errors import InputError
from mppfv.fisher import encode_fv, l2_normalize, power_normalize
from mppfv.gmm import GmmModel
from mppfv.pooling import (PooledRepresentation, pool, pool_ap, pool_csf,
                           pool_mpp, pool_mpp_sp, pool_nfk, sp_region_masks)

from oracles import fisher_vector_direct, sp_region_of


def _model(rng, k=2, d=2):
    return GmmModel(rng.dirichlet(np.ones(k) * 4.0),
                    rng.standard_normal((k, d)),
                    rng.uniform(0.5, 1.4, (k, d)))


def _dset(rng, counts, d=2, num_scales=None, centers=None):
    """Descriptor set with `counts[s-1]` entries at scale s."""
    n = sum(counts)
    scales = np.concatenate([np.full(c, s + 1, np.int32) for s, c in enumerate(counts)])
    if centers is None:
        centers = rng.uniform(0.1, 0.9, (n, 2)).astype(np.float32)
    return DescriptorSet(
        vectors=rng.standard_normal((n, d)).astype(np.float32),
        scales=scales,
        centers=centers,
        edges=np.full(n, 0.3, np.float32),
        num_scales=num_scales or len(counts),
    )


def _improved_fk(model, vectors):
    return l2_normalize(power_normalize(encode_fv(model, vectors))).vector


class TestMpp:
    def test_single_scale_equals_improved_fisher_kernel(self):
        rng = np.random.default_rng(0)
        model = _model(rng)
        dset = _dset(rng, [6])
        got = pool_mpp(model, dset)
        want = _improved_fk(model, dset.vectors)
        np.testing.assert_allclose(got.vector, want, atol=1e-12)

    def test_identical_scales_collapse_to_single_scale_result(self):
        rng = np.random.default_rng(1)
        model = _model(rng)
        base = _dset(rng, [5])
        twice = DescriptorSet(
            vectors=np.concatenate([base.vectors, base.vectors]),
            scales=np.concatenate([base.scales, base.scales + 1]),
            centers=np.concatenate([base.centers, base.centers]),
            edges=np.concatenate([base.edges, base.edges]),
            num_scales=2,
        )
        got = pool_mpp(model, twice)
        want = pool_mpp(model, base)
        np.testing.assert_allclose(got.vector, want.vector, atol=1e-12)

    def test_golden_three_scale_composition_by_hand(self):
        # Step-by-step composition with the direct-density oracle:
        # per-scale FV -> l2 -> average -> power -> l2.
        rng = np.random.default_rng(2)
        model = _model(rng)
        dset = _dset(rng, [3, 4, 5])
        acc = np.zeros(2 * model.K * model.dim)
        for s in (1, 2, 3):
            mg, sg = fisher_vector_direct(model.weights, model.means, model.sigmas,
                                          dset.for_scale(s).vectors.astype(np.float64))
            flat = np.concatenate([mg.ravel(), sg.ravel()])
            acc += flat / np.linalg.norm(flat)
        acc /= 3.0
        want = np.sign(acc) * np.sqrt(np.abs(acc))
        want /= np.linalg.norm(want)
        got = pool_mpp(model, dset)
        np.testing.assert_allclose(got.vector, want, atol=1e-10)
        assert got.scale_counts == (3, 4, 5)

    def test_declared_scale_without_descriptors_is_an_error(self):
        rng = np.random.default_rng(3)
        model = _model(rng)
        dset = _dset(rng, [4, 3], num_scales=3)  # scale 3 declared, empty
        with pytest.raises(InputError):
            pool_mpp(model, dset)
        # Restricting to the populated scales works.
        pool_mpp(model, dset, scales=(1, 2))


class TestNfk:
    def test_single_scale_equals_mpp(self):
        rng = np.random.default_rng(4)
        model = _model(rng)
        dset = _dset(rng, [7])
        np.testing.assert_allclose(pool_nfk(model, dset).vector,
                                   pool_mpp(model, dset).vector, atol=1e-12)

    def test_decomposes_into_count_weighted_per_scale_vectors(self):
        # Unnormalized pooled-over-everything FV = sum_s (|x_s|/|X|) FV_s.
        rng = np.random.default_rng(5)
        model = _model(rng)
        dset = _dset(rng, [3, 6, 2])
        total = len(dset)
        whole = encode_fv(model, dset.vectors).vector
        recombined = np.zeros_like(whole)
        for s in (1, 2, 3):
            sub = dset.for_scale(s)
            recombined += (len(sub) / total) * encode_fv(model, sub.vectors).vector
        np.testing.assert_allclose(whole, recombined, atol=1e-12)

    def test_differs_from_mpp_when_scale_norms_differ(self):
        rng = np.random.default_rng(6)
        model = _model(rng)
        dset = _dset(rng, [2, 30])  # very unbalanced: norms and counts differ
        mpp = pool_mpp(model, dset).vector
        nfk = pool_nfk(model, dset).vector
        assert np.abs(mpp - nfk).max() > 1e-3

    def test_equal_norm_degenerate_case_matches_mpp(self):
        # If per-scale unnormalized FVs already have equal l2 norms, the two
        # poolings agree after the final normalizations.
        rng = np.random.default_rng(7)
        model = _model(rng)
        base = _dset(rng, [5])
        # Mirror the same descriptors into scale 2 (equal norms, equal counts).
        dset = DescriptorSet(
            vectors=np.concatenate([base.vectors, base.vectors]),
            scales=np.concatenate([np.ones(5, np.int32), np.full(5, 2, np.int32)]),
            centers=np.concatenate([base.centers, base.centers]),
            edges=np.concatenate([base.edges, base.edges]),
            num_scales=2,
        )
        np.testing.assert_allclose(pool_mpp(model, dset).vector,
                                   pool_nfk(model, dset).vector, atol=1e-9)


class TestCsf:
    def test_single_scale_equals_mpp(self):
        rng = np.random.default_rng(8)
        model = _model(rng)
        dset = _dset(rng, [6])
        np.testing.assert_allclose(pool_csf(model, dset).vector,
                                   pool_mpp(model, dset).vector, atol=1e-12)

    def test_two_identical_scales_give_duplicated_block_over_sqrt2(self):
        rng = np.random.default_rng(9)
        model = _model(rng)
        base = _dset(rng, [5])
        dset = DescriptorSet(
            vectors=np.concatenate([base.vectors, base.vectors]),
            scales=np.concatenate([np.ones(5, np.int32), np.full(5, 2, np.int32)]),
            centers=np.concatenate([base.centers, base.centers]),
            edges=np.concatenate([base.edges, base.edges]),
            num_scales=2,
        )
        v = _improved_fk(model, base.vectors)
        want = np.concatenate([v, v]) / np.sqrt(2.0)
        np.testing.assert_allclose(pool_csf(model, dset).vector, want, atol=1e-12)

    def test_length_is_scales_times_block(self):
        rng = np.random.default_rng(10)
        model = _model(rng, k=2, d=3)
        dset = _dset(rng, [4, 4, 4], d=3)
        rep = pool_csf(model, dset)
        assert rep.length == 3 * 2 * model.K * model.dim


class TestAp:
    def test_one_vector_comes_back_normalized(self):
        v = np.array([[3.0, 4.0]])
        rep = pool_ap(v)
        np.testing.assert_allclose(rep.vector, [0.6, 0.8], atol=1e-12)

    def test_opposite_vectors_cancel_to_flagged_zero(self):
        rep = pool_ap(np.array([[1.0, -2.0], [-1.0, 2.0]]))
        np.testing.assert_array_equal(rep.vector, np.zeros(2))
        assert rep.zero_blocks == ("all",)

    def test_mean_matches_brute_force_sum(self):
        rng = np.random.default_rng(11)
        vs = rng.standard_normal((10, 6))
        brute = vs.sum(axis=0) / 10.0
        brute /= np.linalg.norm(brute)
        np.testing.assert_allclose(pool_ap(vs).vector, brute, atol=1e-12)


class TestSpatialPyramid:
    def test_all_centers_in_middle_third(self):
        rng = np.random.default_rng(12)
        model = _model(rng)
        centers = np.column_stack([rng.uniform(0, 1, 8),
                                   np.full(8, 0.5)]).astype(np.float32)
        dset = _dset(rng, [8], centers=centers)
        rep = pool_mpp_sp(model, dset)
        assert rep.length == 4 * 2 * model.K * model.dim
        assert set(rep.zero_blocks) == {"top", "bottom"}
        block = 2 * model.K * model.dim
        whole, top, middle, bottom = (rep.vector[i * block: (i + 1) * block]
                                      for i in range(4))
        np.testing.assert_array_equal(top, 0.0)
        np.testing.assert_array_equal(bottom, 0.0)
        # Whole and middle hold the same descriptors.
        np.testing.assert_allclose(whole, middle, atol=1e-12)

    def test_whole_block_equals_plain_mpp(self):
        rng = np.random.default_rng(13)
        model = _model(rng)
        dset = _dset(rng, [6, 10])
        rep = pool_mpp_sp(model, dset)
        block = 2 * model.K * model.dim
        whole = rep.vector[:block]
        plain = pool_mpp(model, dset).vector
        # Up to the final global normalization the whole block is plain MPP.
        np.testing.assert_allclose(whole / np.linalg.norm(whole), plain, atol=1e-10)

    def test_routing_matches_independent_predicate(self):
        rng = np.random.default_rng(14)
        dset = _dset(rng, [20, 20])
        masks = sp_region_masks(dset)
        for i in range(len(dset)):
            region = sp_region_of(float(dset.centers[i, 1]))
            assert masks[region][i]
            assert masks["whole"][i]
            for other in ("top", "middle", "bottom"):
                if other != region:
                    assert not masks[other][i]


class TestSharedInvariants:
    def test_final_norm_is_one_for_all_strategies(self):
        rng = np.random.default_rng(15)
        model = _model(rng)
        dset = _dset(rng, [4, 6, 3])
        reps = [
            pool_mpp(model, dset),
            pool_nfk(model, dset),
            pool_csf(model, dset),
            pool_mpp_sp(model, dset),
            pool_ap(dset.vectors),
        ]
        for rep in reps:
            assert np.linalg.norm(rep.vector) == pytest.approx(1.0, abs=1e-9), rep.strategy

    def test_scale_balance_decomposition(self):
        # MPP: every scale contributes a unit vector with weight exactly 1/N.
        # NFK: scale s contributes |x_s|/|X| times its unnormalized FV.
        rng = np.random.default_rng(16)
        model = _model(rng)
        dset = _dset(rng, [2, 25, 7])
        n_scales = 3
        total = len(dset)

        mpp_pre = np.zeros(2 * model.K * model.dim)
        nfk_pre = np.zeros_like(mpp_pre)
        nfk_contrib_norms = []
        for s in (1, 2, 3):
            sub = dset.for_scale(s)
            unnorm = encode_fv(model, sub.vectors).vector
            unit = unnorm / np.linalg.norm(unnorm)
            # Each MPP contribution is a unit vector at weight 1/N: its norm
            # is exactly 1/N regardless of descriptor count.
            assert np.linalg.norm(unit / n_scales) == pytest.approx(1.0 / n_scales,
                                                                    abs=1e-12)
            mpp_pre += unit / n_scales
            contrib = (len(sub) / total) * unnorm
            nfk_contrib_norms.append(np.linalg.norm(contrib))
            nfk_pre += contrib

        np.testing.assert_allclose(encode_fv(model, dset.vectors).vector, nfk_pre,
                                   atol=1e-12)
        # NFK contribution norms scale with |x_s| * ||FV_s||, so the dense
        # scale dominates.
        assert nfk_contrib_norms[1] == max(nfk_contrib_norms)

        got = pool_mpp(model, dset).vector
        want = np.sign(mpp_pre) * np.sqrt(np.abs(mpp_pre))
        want /= np.linalg.norm(want)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_dispatch_by_name(self):
        rng = np.random.default_rng(17)
        model = _model(rng)
        dset = _dset(rng, [4, 4])
        for name in ("mpp", "nfk", "csf", "mpp-sp", "ap"):
            rep = pool(name, model if name != "ap" else None, dset)
            assert rep.strategy == name

    def test_pooled_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        model = _model(rng)
        dset = _dset(rng, [4, 5])
        rep = pool_csf(model, dset)
        path = tmp_path / "rep.mppf"
        rep.save(path)
        loaded = PooledRepresentation.load(path)
        assert loaded.strategy == "csf"
        np.testing.assert_allclose(loaded.vector, rep.vector, atol=1e-7)
