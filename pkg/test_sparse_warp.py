#!/usr/bin/env python3
"""Tests for sparse attention over sampled keys."""

import math
import time
import unittest

import numpy as np

from hrwarp.attention import AttentionConfig, dense_warp
from hrwarp.key_sampler import KeyIndexSet, SamplerConfig, ScoreConstraints, sample_key_indices
from hrwarp.local_edit import PairTransform, apply_pair_transform
from hrwarp.sparse_warp import (
    dedupe_keys,
    exhaustive_keys,
    keys_to_tensor,
    sparse_attention_field,
    sparse_attention_weights,
    sparse_attentive_warp,
    sparse_warp,
)
from hrwarp.tensor_io import ArgumentError, Coord, FeatureMap, Image, Mask, normalize_array


def unit_features(height, width, channels, seed):
    rng = np.random.default_rng(seed)
    return FeatureMap(normalize_array(rng.standard_normal((height, width, channels))))


def random_image(height, width, seed):
    return Image(np.random.default_rng(seed).random((height, width, 3)))


class TestDedupeKeys(unittest.TestCase):
    """Test per-query key deduplication."""

    def live(self, coords):
        return dedupe_keys(KeyIndexSet.from_coords(coords)).coords((0, 0))

    def test_identical_keys_collapse(self):
        """Test that repeats of one key leave a single entry."""
        self.assertEqual(self.live([Coord(2.0, 3.0)] * 4), [Coord(2.0, 3.0)])

    def test_distinct_keys_kept(self):
        """Test that keys 0.2 px apart are both kept."""
        self.assertEqual(len(self.live([Coord(1.0, 1.0), Coord(1.2, 1.0)])), 2)

    def test_sub_resolution_keys_collide(self):
        """Test that keys 0.05 px apart are merged."""
        self.assertEqual(self.live([Coord(1.0, 1.0), Coord(1.05, 1.0)]), [Coord(1.0, 1.0)])

    def test_first_occurrence_order(self):
        """Test that the surviving keys keep their original order."""
        coords = [Coord(3.0, 0.0), Coord(1.0, 2.0), Coord(3.0, 0.0), Coord(0.0, 0.0), Coord(1.0, 2.0)]
        self.assertEqual(self.live(coords), [Coord(3.0, 0.0), Coord(1.0, 2.0), Coord(0.0, 0.0)])

    def test_empty_key_set(self):
        """Test that an empty key set passes through."""
        keys = KeyIndexSet(ys=np.zeros((2, 2, 0)), xs=np.zeros((2, 2, 0)), scores=np.zeros((2, 2, 0)))
        self.assertEqual(dedupe_keys(keys).size, 0)

    def test_invalid_entries_stay_invalid(self):
        """Test that already-removed keys never shadow live ones."""
        keys = KeyIndexSet.from_coords([Coord(1.0, 1.0), Coord(1.0, 1.0)])
        valid = np.array([[[False, True]]])
        masked = KeyIndexSet(ys=keys.ys, xs=keys.xs, scores=keys.scores, valid=valid)
        np.testing.assert_array_equal(dedupe_keys(masked).valid, valid)


class TestSparseAttentionWeights(unittest.TestCase):
    """Test the per-query softmax."""

    def test_equal_scores(self):
        """Test that two equally scoring keys split the weight."""
        u_x = FeatureMap(np.array([[[1.0, 0.0], [1.0, 0.0]]]))
        u_c = FeatureMap(np.array([[[1.0, 0.0], [1.0, 0.0]]]))
        keys = KeyIndexSet.from_coords([Coord(0.0, 0.0), Coord(0.0, 1.0)], 1, 2)
        weights = sparse_attention_weights(u_c, u_x, keys, (0, 0))
        np.testing.assert_allclose(weights, [0.5, 0.5])

    def test_log_three_gap(self):
        """Test scores (ln 3, 0) at gamma 1."""
        log3 = math.log(3.0)
        u_x = FeatureMap(np.array([[[log3], [0.0]]]))
        u_c = FeatureMap(np.array([[[1.0], [1.0]]]))
        keys = KeyIndexSet.from_coords([Coord(0.0, 0.0), Coord(0.0, 1.0)], 1, 2)
        weights = sparse_attention_weights(u_c, u_x, keys, (0, 0), AttentionConfig(gamma=1.0))
        np.testing.assert_allclose(weights, [0.75, 0.25], atol=1e-7)

    def test_query_score_offset_leaves_weights(self):
        """Test that shifting one query's constrained scores by a constant keeps its weights."""
        rng = np.random.default_rng(6)
        shape = (4, 4, 6)
        keys = KeyIndexSet(
            ys=rng.uniform(0.0, 3.0, size=shape), xs=rng.uniform(0.0, 3.0, size=shape), scores=np.zeros(shape)
        )
        u_x = unit_features(4, 4, 5, 7)
        u_c = unit_features(4, 4, 5, 8)
        editable = np.zeros((4, 4), dtype=bool)
        editable[0, :2] = True
        sc = ScoreConstraints(excluded_mask=Mask(editable))
        cfg = AttentionConfig(gamma=10.0)

        q = (2, 1)
        # a constant source channel against a value at q alone shifts only q's scores by 2.3
        extra_c = np.zeros((4, 4, 1))
        extra_c[q] = 2.3
        shifted_x = FeatureMap(np.concatenate([u_x.data, np.ones((4, 4, 1))], axis=-1))
        shifted_c = FeatureMap(np.concatenate([u_c.data, extra_c], axis=-1))

        np.testing.assert_allclose(
            sparse_attention_weights(shifted_c, shifted_x, keys, q, cfg, sc),
            sparse_attention_weights(u_c, u_x, keys, q, cfg, sc),
            rtol=0,
            atol=1e-6,
        )
        np.testing.assert_allclose(
            sparse_attention_field(shifted_c, shifted_x, keys, cfg, sc),
            sparse_attention_field(u_c, u_x, keys, cfg, sc),
            rtol=0,
            atol=1e-6,
        )

    def test_single_key(self):
        """Test that a lone key gets all the weight."""
        features = unit_features(2, 2, 4, 0)
        keys = KeyIndexSet.from_coords([Coord(1.0, 0.5)], 2, 2)
        np.testing.assert_array_equal(sparse_attention_weights(features, features, keys, (1, 1)), [1.0])

    def test_empty_key_set(self):
        """Test that a query without live keys is an error."""
        features = unit_features(1, 1, 4, 0)
        keys = KeyIndexSet.from_coords([Coord(0.0, 0.0)])
        empty = KeyIndexSet(ys=keys.ys, xs=keys.xs, scores=keys.scores, valid=np.zeros((1, 1, 1), dtype=bool))
        with self.assertRaises(ArgumentError):
            sparse_attention_weights(features, features, empty, (0, 0))
        with self.assertRaises(ArgumentError):
            sparse_attention_field(features, features, empty)

    def test_masked_keys_get_zero_weight(self):
        """Test that keys inside the excluded mask are driven to zero weight."""
        features = unit_features(3, 3, 4, 1)
        keys = KeyIndexSet.from_coords([Coord(0.0, 0.0), Coord(1.0, 1.0), Coord(2.0, 2.0)], 3, 3)
        editable = np.zeros((3, 3), dtype=bool)
        editable[1, 1] = True
        sc = ScoreConstraints(excluded_mask=Mask(editable))
        field = sparse_attention_field(features, features, keys, AttentionConfig(), sc)
        np.testing.assert_array_equal(field[..., 1], 0.0)
        np.testing.assert_allclose(field.sum(axis=-1), 1.0)


class TestSparseAttentiveWarp(unittest.TestCase):
    """Test the bilinear gather blend."""

    def test_identity_keys(self):
        """Test that each query keyed to itself reproduces the image."""
        image = random_image(5, 6, 0)
        rows, cols = np.indices((5, 6)).astype(np.float64)
        keys = KeyIndexSet(ys=rows[..., None], xs=cols[..., None], scores=np.zeros((5, 6, 1)))
        warped = sparse_attentive_warp(image, keys, np.ones((5, 6, 1)))
        np.testing.assert_array_equal(warped.data, image.data)

    def test_fractional_key(self):
        """Test a single key at the centre of a 2x2 image."""
        values = np.array([[0.0, 0.1], [0.2, 0.3]])
        image = Image(np.repeat(values[..., None], 3, axis=-1))
        keys = KeyIndexSet.from_coords([Coord(0.5, 0.5)], 2, 2)
        warped = sparse_attentive_warp(image, keys, np.ones((2, 2, 1)))
        np.testing.assert_allclose(warped.data, 0.15, atol=1e-12)

    def test_weight_shape_mismatch(self):
        """Test that misaligned weights are rejected."""
        keys = KeyIndexSet.from_coords([Coord(0.0, 0.0)], 2, 2)
        with self.assertRaises(ArgumentError):
            sparse_attentive_warp(random_image(2, 2, 0), keys, np.ones((2, 2, 2)))


class TestSparseWarp(unittest.TestCase):
    """Test the full sparse warp."""

    def test_exhaustive_keys_match_dense(self):
        """Test that every-pixel keys reproduce the dense warp."""
        image = random_image(16, 16, 1)
        u_x = unit_features(16, 16, 8, 2)
        u_c = unit_features(16, 16, 8, 3)
        cfg = AttentionConfig(gamma=10.0)

        started = time.perf_counter()
        sparse = sparse_warp(image, u_x, u_c, exhaustive_keys(16, 16), cfg)
        elapsed = time.perf_counter() - started
        dense = dense_warp(image, u_x, u_c, cfg)

        self.assertLess(float(np.max(np.abs(sparse.warped.data - dense.warped.data))), 1e-5)
        self.assertLess(elapsed, 1.0)

    def test_weights_sum_to_one(self):
        """Test normalised weights for sampled keys on a 32x32 grid."""
        u_x = unit_features(32, 32, 8, 4)
        u_c = FeatureMap(apply_pair_transform(u_x.data, PairTransform(2, 3, False)))
        sampling = sample_key_indices(u_x, u_c, SamplerConfig(iterations=5, decay_cutoff=5))
        result = sparse_warp(random_image(32, 32, 5), u_x, u_c, sampling.keys)
        self.assertGreaterEqual(result.weight_sums.size, 1000)
        np.testing.assert_allclose(result.weight_sums, 1.0, atol=1e-9)
        self.assertTrue(np.all(result.weights >= 0))

    def test_key_order_does_not_matter(self):
        """Test that permuting keys changes the output only by rounding."""
        image = random_image(8, 8, 6)
        u_x = unit_features(8, 8, 6, 7)
        u_c = unit_features(8, 8, 6, 8)
        keys = sample_key_indices(u_x, u_c, SamplerConfig(iterations=4, decay_cutoff=4)).keys
        order = np.random.default_rng(9).permutation(keys.size)
        shuffled = KeyIndexSet(ys=keys.ys[..., order], xs=keys.xs[..., order], scores=keys.scores[..., order])
        first = sparse_warp(image, u_x, u_c, keys, AttentionConfig(gamma=10.0))
        second = sparse_warp(image, u_x, u_c, shuffled, AttentionConfig(gamma=10.0))
        self.assertLess(float(np.max(np.abs(first.warped.data - second.warped.data))), 1e-6)

    def test_translation_recovered(self):
        """Test that the warp reproduces a translated image on the interior."""
        shift = PairTransform(2, 3, False)
        image = random_image(64, 64, 10)
        u_x = unit_features(64, 64, 16, 0)
        u_c = FeatureMap(apply_pair_transform(u_x.data, shift))
        sampling = sample_key_indices(u_x, u_c, SamplerConfig(seed=0))
        result = sparse_warp(image, u_x, u_c, sampling.keys, evaluations=sampling.evaluations)

        truth = apply_pair_transform(image.data, shift)
        interior = (slice(shift.dy, None), slice(shift.dx, None))
        self.assertLess(float(np.mean(np.abs(result.warped.data[interior] - truth[interior]))), 1e-3)
        self.assertEqual(result.evaluations, sampling.evaluations)


class TestKeysToTensor(unittest.TestCase):
    """Test the key dump layout."""

    def test_triples(self):
        """Test (y, x, weight) ordering with zero weight for removed keys."""
        keys = KeyIndexSet.from_coords([Coord(1.0, 2.0), Coord(1.0, 2.0), Coord(0.5, 0.0)], 1, 1)
        keys = dedupe_keys(keys)
        weights = np.array([[[0.6, 0.0, 0.4]]])
        packed = keys_to_tensor(keys, weights)
        self.assertEqual(packed.channels, 9)
        np.testing.assert_allclose(packed.data[0, 0], [1.0, 2.0, 0.6, 1.0, 2.0, 0.0, 0.5, 0.0, 0.4], atol=1e-7)


if __name__ == "__main__":
    unittest.main()
