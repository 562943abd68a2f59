"""Generate the synthetic WAV corpus and its manifest.

Five parametric signal families stand in for the five emotions; see
``helpers.SIGNAL_FAMILIES``. Everything derives from the seed, so two runs
with the same seed write byte-identical files.
"""

import logging
import os
import sys

import numpy as np
from faker import Faker

from audio import write_wav
from generator.helpers import SIGNAL_FAMILIES, get_random_duration, synthesize
from manifest import ManifestEntry, write_manifest
from models import LABEL_NAMES, EmotionLabel

logger = logging.getLogger(__name__)

NUM_CLIPS = 50
SAMPLE_RATE = 16000
MANIFEST_NAME = "manifest.csv"


def generate_fixtures(out_dir, seed=42, num_clips=NUM_CLIPS, sample_rate=SAMPLE_RATE,
                      min_seconds=1.0, max_seconds=5.0):
    """Write ``num_clips`` clips (classes dealt in turn) and ``manifest.csv``; returns the manifest path."""

    rng = np.random.default_rng(seed)
    fake = Faker()
    fake.seed_instance(seed)

    os.makedirs(os.path.join(out_dir, "clips"), exist_ok=True)
    entries = []

    for i in range(num_clips):
        name = LABEL_NAMES[i % len(LABEL_NAMES)]
        speaker = fake.first_name().lower()
        relative = f"clips/{i:03d}_{name}_{speaker}.wav"

        clip = synthesize(rng, SIGNAL_FAMILIES[name], get_random_duration(rng, min_seconds, max_seconds),
                          sample_rate)
        write_wav(os.path.join(out_dir, relative), clip)
        entries.append(ManifestEntry(relative, EmotionLabel.from_name(name)))

    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest_path, entries)
    logger.info("wrote %d fixture clips to %s", num_clips, out_dir)
    return manifest_path


if __name__ == "__main__":
    generate_fixtures(sys.argv[1] if len(sys.argv) > 1 else "fixtures")
