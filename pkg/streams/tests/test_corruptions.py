import numpy as np
from django.test import SimpleTestCase

from streams import corruptions
from streams.corruptions import (
    EXCLUDED_KINDS, KINDS, SEVERITIES, SEVERITY_TABLE, Corruption, apply, corrupt_set, disk_kernel,
    image_seed, motion_kernel, null_strength, random_zero, severity_table_rows, transform,
)
from streams.exceptions import CorruptionError

from .helpers import tiny_set


def _image(seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(32, 32, 3), dtype=np.uint8)


class SeverityTableTests(SimpleTestCase):
    def test_fourteen_asset_free_kinds(self):
        self.assertEqual(len(KINDS), 14)
        self.assertFalse(set(KINDS) & set(EXCLUDED_KINDS))

    def test_strength_is_monotone_in_severity(self):
        for kind, ladder in SEVERITY_TABLE.items():
            strengths = [ladder.strength(s) for s in SEVERITIES]
            if ladder.increasing:
                self.assertEqual(strengths, sorted(set(strengths)), kind)
            else:
                self.assertEqual(strengths, sorted(set(strengths), reverse=True), kind)

    def test_table_rows(self):
        rows = severity_table_rows()
        # defocus blur carries two parameters per severity
        self.assertEqual(len(rows), 14 * 5 + 5)
        self.assertIn(('gaussian-noise', 3, 'sigma', 18), rows)
        self.assertIn(('defocus-blur', 1, 'alias_blur', 0.4), rows)

    def test_invalid_corruptions(self):
        with self.assertRaises(CorruptionError):
            Corruption('fog', 1)
        with self.assertRaises(CorruptionError):
            Corruption('gaussian-noise', 6)
        with self.assertRaises(CorruptionError):
            Corruption('gaussian-noise', -1)
        self.assertEqual(Corruption('gaussian-noise', 0).severity, 0)
        with self.assertRaises(CorruptionError):
            null_strength('snow')


class TransformTests(SimpleTestCase):
    def test_null_strength_is_identity(self):
        image = _image()
        for kind in KINDS:
            np.testing.assert_array_equal(transform(image, kind, null_strength(kind), seed=3), image, kind)

    def test_output_is_uint8_of_the_same_shape(self):
        image = _image()
        for kind in KINDS:
            out = apply(image, Corruption(kind, 5, seed=1))
            self.assertEqual(out.dtype, np.uint8, kind)
            self.assertEqual(out.shape, image.shape, kind)

    def test_same_seed_same_bytes(self):
        image = _image()
        for kind in KINDS:
            first = apply(image, Corruption(kind, 3, seed=11))
            np.testing.assert_array_equal(first, apply(image, Corruption(kind, 3, seed=11)), kind)

    def test_noise_grows_with_severity(self):
        image = np.full((32, 32, 3), 128, dtype=np.uint8)
        deviations = [
            np.abs(apply(image, Corruption('gaussian-noise', s, seed=0)).astype(float) - 128).mean()
            for s in SEVERITIES
        ]
        self.assertEqual(deviations, sorted(deviations))

    def test_contrast_pulls_towards_the_mean(self):
        image = _image()
        out = apply(image, Corruption('contrast', 5))
        self.assertLess(out.astype(float).std(), image.astype(float).std())

    def test_random_zero(self):
        image = np.full((8, 8, 3), 200, dtype=np.uint8)
        np.testing.assert_array_equal(random_zero(image, 0.0), image)
        self.assertFalse(random_zero(image, 1.0).any())
        partial = random_zero(image, 0.5, seed=2)
        # whole pixels are zeroed, never single channels
        self.assertTrue(np.all(partial.any(axis=-1) == partial.all(axis=-1)))
        with self.assertRaises(CorruptionError):
            random_zero(image, 1.5)

    def test_kernels_are_normalized(self):
        self.assertAlmostEqual(disk_kernel(1.5, 0.1).sum(), 1.0)
        kernel = motion_kernel(3)
        self.assertAlmostEqual(kernel.sum(), 1.0)
        self.assertEqual(np.count_nonzero(kernel), 3)

    def test_rejects_bad_images(self):
        with self.assertRaises(CorruptionError):
            transform(np.zeros((4, 4)), 'contrast', 0.5)
        with self.assertRaises(CorruptionError):
            transform(np.full((4, 4, 3), 300), 'contrast', 0.5)
        with self.assertRaises(CorruptionError):
            transform(_image(), 'frost', 1)


class CorruptSetTests(SimpleTestCase):
    def test_keeps_labels_and_ids(self):
        data = tiny_set(6)
        out = corrupt_set(data, Corruption('impulse-noise', 2, seed=5))
        np.testing.assert_array_equal(out.labels, data.labels)
        np.testing.assert_array_equal(out.ids, data.ids)
        self.assertEqual(out.provenance, 'impulse-noise:2:5')

    def test_noise_depends_on_the_image_id(self):
        data = tiny_set(2)
        same = data.take([0, 0])
        same = type(same)(same.images, same.labels, np.array([0, 1]))
        out = corrupt_set(same, Corruption('gaussian-noise', 3, seed=5))
        self.assertFalse(np.array_equal(out.images[0], out.images[1]))

    def test_image_seed(self):
        self.assertEqual(image_seed(5, 3), 6)
        self.assertEqual(corruptions.image_seed(0, 123), 123)


class NoiseStatisticsTests(SimpleTestCase):
    def test_impulse_noise_alters_the_table_fraction_of_pixels(self):
        for severity in SEVERITIES:
            p = SEVERITY_TABLE['impulse-noise'].value(severity)
            fractions = []
            for seed in range(30):
                image = _image(seed)
                out = apply(image, Corruption('impulse-noise', severity, seed=seed))
                fraction = (out != image).any(axis=-1).mean()
                self.assertLess(abs(fraction - p), 0.04, (severity, seed))
                fractions.append(fraction)
            self.assertLess(abs(np.mean(fractions) - p), 0.02, severity)

    def test_impulse_noise_hits_whole_pixels(self):
        image = np.full((32, 32, 3), 128, dtype=np.uint8)
        out = apply(image, Corruption('impulse-noise', 5, seed=4))
        hit = (out != image).any(axis=-1)
        self.assertTrue(np.all((out[hit] == 0) | (out[hit] == 255)))
        self.assertTrue(np.all(out[hit].min(axis=-1) == out[hit].max(axis=-1)))

    def test_gaussian_noise_is_zero_mean(self):
        image = np.full((32, 32, 3), 128, dtype=np.uint8)
        for severity in SEVERITIES:
            shifts = [
                (apply(image, Corruption('gaussian-noise', severity, seed=seed)).astype(float) - 128).mean()
                for seed in range(30)
            ]
            self.assertLess(abs(np.mean(shifts)), 1.5, severity)

    def test_random_zero_count_is_binomial(self):
        image = np.full((32, 32, 3), 200, dtype=np.uint8)
        n, p = 32 * 32, 0.3
        half_width = 2.576 * np.sqrt(n * p * (1 - p))
        for seed in range(5):
            zeroed = (random_zero(image, p, seed=seed) == 0).all(axis=-1).sum()
            self.assertLess(abs(zeroed - n * p), half_width, seed)
