"""Feature cache tests."""

# run these tests like:
#
#    python -m unittest test_cache.py


import os
import tempfile
from unittest import TestCase

import numpy as np
from sqlalchemy import func, select
from sqlalchemy.orm import Session

from audio import MfccConfig
from cache import CachedClip, connect, extract_features, load_feature_set
from errors import CacheMissingError
from generator.create_fixtures import generate_fixtures
from manifest import load_manifest

CONFIG = MfccConfig(clip_seconds=0.5)


class FeatureCacheTestCase(TestCase):
    """Extracting and loading cached features."""

    def setUp(self):
        self.dir = tempfile.TemporaryDirectory()
        self.fixtures = os.path.join(self.dir.name, "fixtures")
        self.cache_dir = os.path.join(self.dir.name, "cache")
        manifest_path = generate_fixtures(self.fixtures, seed=1, num_clips=10, min_seconds=0.2, max_seconds=0.4)
        self.manifest = load_manifest(manifest_path)

    def tearDown(self):
        self.dir.cleanup()

    def test_extract_and_load(self):
        """Are all clips extracted, indexed and stacked in manifest order?"""

        result = extract_features(self.manifest, self.cache_dir, CONFIG)
        self.assertEqual((len(result.written), len(result.skipped), result.failures), (10, 0, []))

        engine = connect(self.cache_dir, create=False)
        with Session(engine) as session:
            self.assertEqual(session.scalar(select(func.count()).select_from(CachedClip)), 10)
            row = CachedClip.lookup(session, self.manifest.entries[3].path)
            self.assertEqual(row.label, 3)
            self.assertEqual((row.frames, row.coeffs), (CONFIG.n_frames, CONFIG.n_mfcc))
        engine.dispose()

        features = load_feature_set(self.manifest, self.cache_dir, CONFIG)
        self.assertEqual(features.mfcc.shape, (10, CONFIG.n_frames, CONFIG.n_mfcc))
        self.assertEqual(features.wave.shape, (10, CONFIG.clip_samples))
        np.testing.assert_array_equal(features.labels, np.arange(10) % 5)
        self.assertEqual(features.paths, [entry.path for entry in self.manifest])

    def test_idempotent(self):
        """Does a second extraction skip every clip and leave features unchanged?"""

        extract_features(self.manifest, self.cache_dir, CONFIG)
        first = load_feature_set(self.manifest, self.cache_dir, CONFIG)
        again = extract_features(self.manifest, self.cache_dir, CONFIG)
        self.assertEqual((len(again.written), len(again.skipped)), (0, 10))
        np.testing.assert_array_equal(load_feature_set(self.manifest, self.cache_dir, CONFIG).mfcc, first.mfcc)

    def test_threads_match_serial(self):
        """Does extracting on several threads give the same features?"""

        extract_features(self.manifest, self.cache_dir, CONFIG)
        serial = load_feature_set(self.manifest, self.cache_dir, CONFIG)
        other = os.path.join(self.dir.name, "cache2")
        extract_features(self.manifest, other, CONFIG, workers=3)
        np.testing.assert_array_equal(load_feature_set(self.manifest, other, CONFIG).mfcc, serial.mfcc)

    def test_corrupt_clip(self):
        """Does one unreadable WAV fail alone while the rest are cached?"""

        broken = self.manifest.resolve(self.manifest.entries[2])
        with open(broken, "wb") as fh:
            fh.write(b"garbage")

        result = extract_features(self.manifest, self.cache_dir, CONFIG)
        self.assertEqual(len(result.written), 9)
        self.assertEqual([path for path, _ in result.failures], [self.manifest.entries[2].path])
        self.assertEqual(result.to_dict()["failed"][0]["path"], self.manifest.entries[2].path)
        with self.assertRaises(CacheMissingError):
            load_feature_set(self.manifest, self.cache_dir, CONFIG)

    def test_missing_clip_file(self):
        """Is a manifest row whose file is gone reported as a failure?"""

        os.remove(self.manifest.resolve(self.manifest.entries[0]))
        result = extract_features(self.manifest, self.cache_dir, CONFIG)
        self.assertEqual(len(result.failures), 1)
        self.assertEqual(len(result.written), 9)

    def test_changed_clip_is_reextracted(self):
        """Is a clip whose content changed extracted again?"""

        extract_features(self.manifest, self.cache_dir, CONFIG)
        other = self.manifest.resolve(self.manifest.entries[1])
        with open(self.manifest.resolve(self.manifest.entries[6]), "rb") as src, open(other, "wb") as dst:
            dst.write(src.read())
        result = extract_features(self.manifest, self.cache_dir, CONFIG)
        self.assertEqual(result.written, [self.manifest.entries[1].path])

    def test_missing_cache(self):
        """Is loading before extraction a cache-missing error naming the extract command?"""

        with self.assertRaisesRegex(CacheMissingError, "extract"):
            load_feature_set(self.manifest, self.cache_dir, CONFIG)

    def test_config_change(self):
        """Are features extracted under another audio config refused?"""

        extract_features(self.manifest, self.cache_dir, CONFIG)
        with self.assertRaisesRegex(CacheMissingError, "audio config"):
            load_feature_set(self.manifest, self.cache_dir, MfccConfig(clip_seconds=0.5, n_mfcc=20))

    def test_single_stream(self):
        """Does loading only MFCCs leave the waveform stream empty?"""

        extract_features(self.manifest, self.cache_dir, CONFIG)
        features = load_feature_set(self.manifest, self.cache_dir, CONFIG, streams=("mfcc",))
        self.assertIsNone(features.wave)
        self.assertEqual(len(features.mfcc), 10)
