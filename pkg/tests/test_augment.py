import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacm import augment
from adacm.augment import AugmentPolicy, crop_flip, strong_augment, substream, weak_augment


def rng(seed=0):
    return np.random.default_rng(seed)


class TestWeak:
    def test_zero_jitter_no_flip_is_identity(self):
        policy = AugmentPolicy("weak", jitter=0.0, pad=0, flip=False)
        v = rng().normal(size=9)
        img = rng(1).random((5, 5))
        np.testing.assert_array_equal(weak_augment(v, rng(2), policy), v)
        np.testing.assert_array_equal(weak_augment(img, rng(2), policy), img)

    def test_same_seed_same_output(self):
        img = rng(1).random((6, 6))
        v = rng(3).normal(size=8)
        for x in (img, v):
            a = weak_augment(x, substream(4, 0, 7, augment.VIEW_A))
            b = weak_augment(x, substream(4, 0, 7, augment.VIEW_A))
            assert a.tobytes() == b.tobytes()

    def test_views_differ(self):
        v = rng(3).normal(size=8)
        a = weak_augment(v, substream(4, 0, 7, augment.VIEW_A))
        b = weak_augment(v, substream(4, 0, 7, augment.VIEW_B))
        assert not np.array_equal(a, b)

    def test_crop_flip_hand_grid(self):
        img = np.arange(1, 17, dtype=float).reshape(4, 4)
        # pad 1 then crop rows 1..4, cols 0..3: shift right by one column
        shifted = np.array([
            [0, 1, 2, 3],
            [0, 5, 6, 7],
            [0, 9, 10, 11],
            [0, 13, 14, 15],
        ], dtype=float)
        mirrored = shifted[:, ::-1]
        np.testing.assert_array_equal(crop_flip(img, 1, (1, 0), False), shifted)
        np.testing.assert_array_equal(crop_flip(img, 1, (1, 0), True), mirrored)
        assert mirrored[0].tolist() == [3, 2, 1, 0]

    def test_weak_image_is_some_crop_flip(self):
        img = rng(5).random((4, 4))
        policy = AugmentPolicy("weak", pad=1)
        out = weak_augment(img, rng(9), policy)
        candidates = [crop_flip(img, 1, (r, c), f) for r in range(3) for c in range(3) for f in (False, True)]
        assert any(np.array_equal(out, cand) for cand in candidates)

    def test_single_pixel_passes_through(self):
        img = np.array([[0.3]])
        np.testing.assert_array_equal(weak_augment(img, rng()), img)

    def test_jitter_scales_with_per_dimension_std(self):
        policy = AugmentPolicy("weak", jitter=0.5)
        scale = np.array([1.0, 0.0, 10.0])
        draws = np.stack([weak_augment(np.zeros(3), rng(s), policy, scale) for s in range(2000)])
        assert np.all(draws[:, 1] == 0.0)
        np.testing.assert_allclose(draws.std(axis=0)[[0, 2]], [0.5, 5.0], rtol=0.08)


class TestStrong:
    def test_empty_pool_is_identity(self):
        policy = AugmentPolicy("strong", pool=())
        img = rng(1).random((5, 5))
        np.testing.assert_array_equal(strong_augment(img, rng(), policy), img)

    def test_reproducible(self):
        img = rng(1).random((6, 6))
        a = strong_augment(img, substream(1, 2, 3, augment.VIEW_STRONG))
        b = strong_augment(img, substream(1, 2, 3, augment.VIEW_STRONG))
        assert a.tobytes() == b.tobytes()

    def test_cutout_only_zeroes_one_rectangle(self):
        policy = AugmentPolicy("strong", pool=("cutout",), n_ops=2)
        img = rng(1).random((8, 8)) + 0.1  # strictly positive
        out = strong_augment(img, rng(17), policy)
        zero = out == 0.0
        rows, cols = np.flatnonzero(zero.any(axis=1)), np.flatnonzero(zero.any(axis=0))
        assert zero.sum() > 0
        # the zeroed cells form exactly the bounding rectangle
        box = np.zeros_like(zero)
        box[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1] = True
        np.testing.assert_array_equal(zero, box)
        np.testing.assert_array_equal(out[~zero], img[~zero])
        # rectangle size follows the drawn magnitude
        g = rng(17)
        g.choice(1, size=1, replace=False)
        m = g.uniform(*augment.DEFAULT_MAGNITUDES["cutout"])
        side = max(1, int(round(m * 8)))
        assert (rows.max() - rows.min() + 1, cols.max() - cols.min() + 1) == (side, side)

    def test_vector_pool_used_for_vectors(self):
        v = rng(2).normal(size=16)
        policy = AugmentPolicy("strong", pool=augment.IMAGE_POOL)
        np.testing.assert_array_equal(strong_augment(v, rng(), policy), v)

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError):
            AugmentPolicy("strong", pool=("shear",))


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([(7,), (4, 4), (1, 5, 5), (3, 6, 6), (1, 1)]), st.integers(0, 2**31))
    def test_shape_preserved(self, shape, seed):
        x = rng(seed).random(shape)
        assert weak_augment(x, rng(seed)).shape == shape
        assert strong_augment(x, rng(seed + 1)).shape == shape

    @staticmethod
    def _blob():
        # smooth image; pixel noise would make any crop look like a huge change
        yy, xx = np.mgrid[0:8, 0:8]
        return np.exp(-((yy - 3.5) ** 2 + (xx - 2.5) ** 2) / 8)

    @pytest.mark.parametrize("kind", ["vector", "image"])
    def test_strong_displaces_more_than_weak(self, kind):
        x = rng(0).normal(size=16) if kind == "vector" else self._blob()
        weak = [np.linalg.norm(weak_augment(x, substream(0, 0, k, 1)) - x) for k in range(1000)]
        strong = [np.linalg.norm(strong_augment(x, substream(0, 0, k, 3)) - x) for k in range(1000)]
        assert np.mean(strong) > np.mean(weak)

    def test_batch_matches_per_sample(self):
        x = rng(0).normal(size=(5, 4))
        aug = augment.Augmenter(3)
        batch = aug.weak_batch(x, [10, 11, 12, 13, 14], 2, augment.VIEW_A)
        for row, i, out in zip(x, range(10, 15), batch):
            np.testing.assert_array_equal(out, weak_augment(row, substream(3, 2, i, augment.VIEW_A)))
