"""Run configuration tests."""

# run these tests like:
#
#    python -m unittest test_config.py


import json
import os
import tempfile
from unittest import TestCase

from config import PathsConfig, load_config
from errors import ConfigError
from models import ModelVariant


class LoadConfigTestCase(TestCase):
    """Defaults, config files, environment and overrides."""

    def setUp(self):
        self.dir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.dir.name, "run.json")

    def tearDown(self):
        self.dir.cleanup()

    def write(self, data):
        with open(self.path, "w") as fh:
            fh.write(data if isinstance(data, str) else json.dumps(data))

    def test_defaults(self):
        """Do the defaults give the Proposed model with 100 epochs of Adam at 0.001 over 5 folds?"""

        config = load_config(environ={})
        self.assertIs(config.variant, ModelVariant.PROPOSED)
        self.assertEqual((config.train.epochs, config.train.lr, config.train.batch_size, config.train.k_folds),
                         (100, 0.001, 32, 5))
        self.assertEqual((config.model.mfcc_bins, config.model.mfcc_frames, config.model.wave_samples),
                         (40, 498, 80000))
        self.assertEqual(config.paths, PathsConfig())

    def test_file_then_overrides(self):
        """Do flags beat the file, and unset flags fall through to it?"""

        self.write({"variant": "dual-stream-bigru", "train": {"seed": 4, "epochs": 3}})
        config = load_config(self.path, overrides={"variant": None, "train": {"seed": 9, "epochs": None}},
                             environ={})
        self.assertIs(config.variant, ModelVariant.DUAL_STREAM_BIGRU)
        self.assertEqual((config.train.seed, config.train.epochs), (9, 3))

    def test_environment_cache_dir(self):
        """Does DYNSER_CACHE_DIR override the file but not a flag?"""

        self.write({"paths": {"cache_dir": "from_file"}})
        self.assertEqual(load_config(self.path, environ={"DYNSER_CACHE_DIR": "from_env"}).paths.cache_dir,
                         "from_env")
        config = load_config(self.path, overrides={"paths": {"cache_dir": "from_flag"}},
                             environ={"DYNSER_CACHE_DIR": "from_env"})
        self.assertEqual(config.paths.cache_dir, "from_flag")

    def test_geometry_follows_audio(self):
        """Is the model's input geometry derived from the audio section?"""

        self.write({"audio": {"clip_seconds": 0.5, "n_mfcc": 13}, "model": {"channels": [4, 8]}})
        config = load_config(self.path, environ={})
        self.assertEqual(config.model.channels, (4, 8))
        self.assertEqual((config.model.mfcc_bins, config.model.mfcc_frames, config.model.wave_samples),
                         (13, 48, 8000))

    def test_to_dict_is_json(self):
        """Does the config echo serialize to JSON?"""

        echo = json.loads(json.dumps(load_config(environ={}).to_dict()))
        self.assertEqual(echo["variant"], "proposed")
        self.assertEqual(echo["model"]["channels"], [16, 32, 64, 128])

    def test_errors(self):
        """Are unknown keys, derived fields, bad values, bad JSON and bad variants config errors?"""

        bad = [
            {"train": {"learning_rate": 0.1}},
            {"optimiser": {}},
            {"model": {"mfcc_bins": 20}},
            {"train": {"optimizer": "sgd"}},
            {"variant": "lstm"},
            "{not json",
            "[1, 2]",
        ]
        for data in bad:
            self.write(data)
            with self.assertRaises(ConfigError, msg=str(data)):
                load_config(self.path, environ={})

        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.dir.name, "missing.json"), environ={})
