"""Manifest CSV tests."""

# run these tests like:
#
#    python -m unittest test_manifest.py


import os
import tempfile
from unittest import TestCase

from errors import LabelError, ManifestError
from manifest import DatasetManifest, ManifestEntry, load_manifest, write_manifest
from models import EmotionLabel


class ManifestTestCase(TestCase):
    """Reading and writing path,label manifests."""

    def setUp(self):
        self.dir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.dir.name, "manifest.csv")

    def tearDown(self):
        self.dir.cleanup()

    def write(self, text):
        with open(self.path, "w") as fh:
            fh.write(text)

    def test_load(self):
        """Are rows parsed into labels with paths relative to the CSV directory?"""

        self.write("path,label\nclips/a.wav,anger\nclips/b.wav, Neutral\n")
        manifest = load_manifest(self.path)

        self.assertEqual(len(manifest), 2)
        self.assertEqual(manifest.entries[1], ManifestEntry("clips/b.wav", EmotionLabel.NEUTRAL))
        self.assertEqual(manifest.labels.tolist(), [0, 4])
        self.assertEqual(manifest.resolve(manifest.entries[0]), os.path.join(self.dir.name, "clips/a.wav"))
        self.assertEqual(manifest.histogram(),
                         {"anger": 1, "happiness": 0, "sadness": 0, "fear": 0, "neutral": 1})

    def test_explicit_root(self):
        """Does an explicit root override the CSV directory?"""

        self.write("path,label\na.wav,fear\n")
        manifest = load_manifest(self.path, root="/data")
        self.assertEqual(manifest.resolve(manifest.entries[0]), os.path.join("/data", "a.wav"))

    def test_unknown_label(self):
        """Is an unknown label reported with its row and value?"""

        self.write("path,label\na.wav,anger\nb.wav,joy\n")
        with self.assertRaisesRegex(LabelError, "row 3.*'joy'"):
            load_manifest(self.path)

    def test_bad_header(self):
        """Is a header other than path,label rejected?"""

        self.write("file,emotion\na.wav,anger\n")
        with self.assertRaises(ManifestError):
            load_manifest(self.path)

    def test_duplicate_path(self):
        """Is a repeated path rejected?"""

        self.write("path,label\na.wav,anger\na.wav,fear\n")
        with self.assertRaisesRegex(ManifestError, "repeats"):
            load_manifest(self.path)

    def test_empty_and_missing(self):
        """Are a header-only manifest and a missing file both manifest errors?"""

        self.write("path,label\n")
        with self.assertRaises(ManifestError):
            load_manifest(self.path)
        with self.assertRaises(ManifestError):
            load_manifest(os.path.join(self.dir.name, "nope.csv"))

    def test_write_then_load(self):
        """Does a written manifest load back to the same entries?"""

        entries = [ManifestEntry("x/1.wav", EmotionLabel.SADNESS), ManifestEntry("x/2.wav", EmotionLabel.FEAR)]
        write_manifest(self.path, entries)
        self.assertEqual(load_manifest(self.path).entries, entries)
        with open(self.path) as fh:
            self.assertEqual(fh.readline().strip(), "path,label")

    def test_empty_manifest_object(self):
        """Does an empty DatasetManifest have no labels?"""

        self.assertEqual(len(DatasetManifest()), 0)
        self.assertEqual(DatasetManifest().labels.size, 0)
