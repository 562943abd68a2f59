"""Signal families for the synthetic emotion fixtures."""

from collections import namedtuple

import numpy as np

from audio import AudioClip

SignalFamily = namedtuple("SignalFamily", "f0_low f0_high am_rate noise")

# Each class gets its own fundamental band, AM rate and noise floor so the
# five classes are separable from their spectra alone.
SIGNAL_FAMILIES = {
    "anger": SignalFamily(2000.0, 2100.0, 8.0, 0.05),
    "happiness": SignalFamily(1350.0, 1450.0, 6.0, 0.03),
    "sadness": SignalFamily(180.0, 220.0, 1.5, 0.01),
    "fear": SignalFamily(850.0, 950.0, 11.0, 0.04),
    "neutral": SignalFamily(480.0, 520.0, 3.0, 0.02),
}


def get_random_duration(rng, low=1.0, high=5.0):
    """Clip length in seconds, uniform in [low, high]."""

    return float(rng.uniform(low, high))


def synthesize(rng, family, seconds, sample_rate=16000):
    """Amplitude-modulated tone with a weak second harmonic plus white noise."""

    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    f0 = rng.uniform(family.f0_low, family.f0_high)
    phase = rng.uniform(0.0, 2.0 * np.pi)

    envelope = 0.6 + 0.4 * np.sin(2.0 * np.pi * family.am_rate * t + phase)
    tone = np.sin(2.0 * np.pi * f0 * t) + 0.3 * np.sin(4.0 * np.pi * f0 * t)
    samples = 0.5 * envelope * tone + family.noise * rng.standard_normal(t.size)
    return AudioClip(np.clip(samples, -1.0, 1.0), sample_rate)
