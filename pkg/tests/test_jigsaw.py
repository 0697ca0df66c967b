"""Unit tests for permutation sets, tile shuffling, and the jigsaw head."""

import numpy as np
import pytest

from spssl import jigsaw as jig
from spssl.autodiff import Tensor
from spssl.encoder import TokenBundle

RNG = np.random.default_rng(0)


class TestHamming:
    def test_identical_is_zero(self):
        p = np.arange(9)
        assert jig.hamming(p, p) == 0

    def test_swap_is_two(self):
        p = np.arange(9)
        q = p.copy()
        q[0], q[1] = q[1], q[0]
        assert jig.hamming(p, q) == 2

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            jig.hamming(np.arange(8), np.arange(8))


class TestPairwiseRecount:
    def test_singleton_convention(self):
        assert jig.pairwise_min_mean_hamming(np.arange(9)[None]) == (9, 9.0)

    def test_two_element_oracle(self):
        p = np.arange(9)
        q = np.roll(p, 1)
        dmin, dmean = jig.pairwise_min_mean_hamming(np.stack([p, q]))
        assert dmin == 9 and dmean == 9.0

    def test_matches_naive_double_loop(self):
        perms = jig.random_permutation_set(12, seed=3).perms
        dmin, dmean = jig.pairwise_min_mean_hamming(perms)
        ds = [jig.hamming(perms[i], perms[j])
              for i in range(12) for j in range(i + 1, 12)]
        assert dmin == min(ds)
        assert dmean == pytest.approx(np.mean(ds))


class TestGeneration:
    def test_k1_and_k2_boundaries(self):
        s1 = jig.generate_permutation_set(1, seed=0)
        assert s1.size == 1 and s1.min_hamming == 9
        s2 = jig.generate_permutation_set(2, seed=0)
        # a full derangement of the first pick always exists
        assert s2.min_hamming == 9

    def test_set_is_distinct_and_valid(self):
        s = jig.generate_permutation_set(50, seed=1)
        assert len({tuple(p) for p in s.perms}) == 50
        for p in s.perms:
            np.testing.assert_array_equal(np.sort(p), np.arange(9))

    def test_greedy_beats_random_min_distance(self):
        greedy = jig.generate_permutation_set(100, seed=0)
        rand = jig.random_permutation_set(100, seed=0)
        assert greedy.min_hamming > rand.min_hamming

    def test_deterministic_per_seed(self):
        a = jig.generate_permutation_set(20, seed=5)
        b = jig.generate_permutation_set(20, seed=5)
        np.testing.assert_array_equal(a.perms, b.perms)

    def test_recorded_stats_match_recount(self):
        s = jig.generate_permutation_set(30, seed=2)
        dmin, dmean = jig.pairwise_min_mean_hamming(s.perms)
        assert s.min_hamming == dmin
        assert s.mean_hamming == pytest.approx(dmean)

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            jig.generate_permutation_set(0, seed=0)

    def test_serialize_roundtrip(self):
        s = jig.generate_permutation_set(10, seed=4)
        parsed = jig.PermutationSet.parse(s.serialize())
        np.testing.assert_array_equal(parsed.perms, s.perms)
        assert parsed.min_hamming == s.min_hamming
        assert parsed.seed == s.seed

    def test_parse_rejects_other_files(self):
        with pytest.raises(ValueError):
            jig.PermutationSet.parse("something else\n")


class TestShuffling:
    def _image(self, side=9):
        return RNG.random((side, side, 3)).astype(np.float32)

    def test_identity_permutation_is_noop(self):
        img = self._image()
        np.testing.assert_array_equal(jig.shuffle_patches(img, np.arange(9)), img)

    def test_roundtrip_many_permutations(self):
        img = self._image(18)
        rng = np.random.default_rng(1)
        for _ in range(50):
            perm = rng.permutation(9)
            back = jig.reconstruct(jig.shuffle_patches(img, perm), perm)
            np.testing.assert_array_equal(back, img)

    def test_cell_placement_contract(self):
        # cell i of the output holds cell perm[i] of the input
        img = self._image()
        tiles = jig.extract_tiles(img)
        perm = np.array([4, 0, 8, 2, 6, 1, 7, 3, 5])
        shuffled_tiles = jig.extract_tiles(jig.shuffle_patches(img, perm))
        for i in range(9):
            np.testing.assert_array_equal(shuffled_tiles[i], tiles[perm[i]])

    def test_composition_oracle(self):
        img = self._image()
        rng = np.random.default_rng(2)
        for _ in range(20):
            p, q = rng.permutation(9), rng.permutation(9)
            twice = jig.shuffle_patches(jig.shuffle_patches(img, p), q)
            once = jig.shuffle_patches(img, jig.compose(p, q))
            np.testing.assert_array_equal(twice, once)

    def test_rejects_indivisible_side(self):
        with pytest.raises(ValueError):
            jig.shuffle_patches(RNG.random((10, 10, 3)), np.arange(9))


class TestHead:
    def _bundles(self, dim=8, tokens=4):
        rng = np.random.default_rng(3)
        return [TokenBundle(Z=Tensor(rng.standard_normal((tokens, dim))),
                            z=Tensor(rng.standard_normal((1, dim))))
                for _ in range(9)]

    def test_param_shapes(self):
        params = jig.init_jigsaw_head_params(16, 100, RNG)
        assert params["jig.fc1.w"].shape == (9 * 16, 384)
        assert params["jig.fc2.w"].shape == (384, 100)

    def test_forward_shape(self):
        params = jig.init_jigsaw_head_params(8, 25, RNG)
        logits = jig.jigsaw_head_forward(self._bundles(), params)
        assert logits.shape == (25,)  # one score per candidate permutation

    def test_key_set_is_order_invariant(self):
        # permuting the tile order permutes pooled rows but never changes
        # any row's value, because keys/values are the union of all tiles
        bundles = self._bundles()
        perm = np.array([3, 1, 4, 0, 8, 2, 7, 5, 6])
        base = jig.pooled_tile_features(bundles).data
        moved = jig.pooled_tile_features([bundles[i] for i in perm]).data
        np.testing.assert_allclose(moved, base[perm], atol=1e-10)

    def test_forward_requires_nine_tiles(self):
        params = jig.init_jigsaw_head_params(8, 25, RNG)
        with pytest.raises(ValueError):
            jig.jigsaw_head_forward(self._bundles()[:5], params)

    def test_mixed_dims_rejected(self):
        bundles = self._bundles()
        bundles[0] = TokenBundle(Z=Tensor(np.zeros((4, 6))), z=Tensor(np.zeros((1, 6))))
        from spssl import autodiff as ad
        with pytest.raises(ad.ShapeError):
            jig.pooled_tile_features(bundles)
