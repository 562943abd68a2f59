"""WAV ingestion and the MFCC feature frontend.

Pipeline: read 16-bit PCM → mono → resample to 16 kHz → mirror-pad (tile) to
a fixed clip length → Hann-windowed frames → one-sided power spectrum → mel
filterbank → log → orthonormal DCT-II.
"""

import logging
import wave
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.io import wavfile

from checkpoint import read_framed, write_framed
from errors import DataError, ParameterError, ProtocolError, UnsupportedFormatError

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """Mono samples, nominally in [-1, 1], at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ParameterError("audio clip has no samples")
        if self.sample_rate <= 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def seconds(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MfccConfig:
    """MFCC pipeline parameters. Defaults: 16 kHz, 5 s clips, 25/10 ms frames."""

    sample_rate_hz: int = 16000
    clip_seconds: float = 5.0
    frame_length: int = 400
    hop_length: int = 160
    fft_size: int = 512
    n_mels: int = 64
    n_mfcc: int = 40
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.clip_seconds <= 0:
            raise ParameterError("sample_rate_hz and clip_seconds must be positive")
        if not 1 <= self.frame_length <= self.fft_size:
            raise ParameterError(
                f"frame_length ({self.frame_length}) must be in [1, fft_size={self.fft_size}]")
        if self.hop_length < 1:
            raise ParameterError(f"hop_length must be >= 1, got {self.hop_length}")
        if not 1 <= self.n_mfcc <= self.n_mels:
            raise ParameterError(f"n_mfcc ({self.n_mfcc}) must be in [1, n_mels={self.n_mels}]")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ParameterError(
                f"need 0 <= fmin_hz < fmax_hz <= {self.sample_rate_hz / 2}, "
                f"got {self.fmin_hz}, {self.fmax_hz}")
        if self.log_floor <= 0:
            raise ParameterError("log_floor must be positive")

    @property
    def clip_samples(self):
        return int(round(self.clip_seconds * self.sample_rate_hz))

    @property
    def n_frames(self):
        return 1 + (self.clip_samples - self.frame_length) // self.hop_length


@dataclass
class MfccMatrix:
    """frames × n_mfcc cepstral features and the config that produced them."""

    values: np.ndarray
    config: MfccConfig = field(default_factory=MfccConfig)

    @property
    def shape(self):
        return self.values.shape


##############################################################################
# WAV I/O and resampling


def read_wav(path):
    """Read a 16-bit PCM WAV file, downmixing to mono by channel average."""

    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from None

    if data.dtype != np.int16:
        if data.dtype.kind == "f":
            encoding = f"{data.dtype.itemsize * 8}-bit IEEE float"
        else:
            encoding = f"{pcm_bits(path, data)}-bit PCM"
        raise UnsupportedFormatError(f"{path}: only 16-bit PCM is supported, got {encoding}")

    samples = data.astype(np.float64) / PCM_SCALE
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise DataError(f"{path}: no audio samples")

    return AudioClip(samples, int(rate))


def pcm_bits(path, data):
    """Bits per sample from the header; scipy widens 24-bit PCM to int32."""

    try:
        with wave.open(path, "rb") as wav_file:
            return wav_file.getsampwidth() * 8
    except (wave.Error, EOFError, OSError):
        return data.dtype.itemsize * 8


def write_wav(path, clip):
    """Write ``clip`` as mono 16-bit PCM."""

    pcm = np.clip(np.round(clip.samples * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1)
    wavfile.write(path, clip.sample_rate, pcm.astype(np.int16))


def resample(clip, target_hz):
    """Linear-interpolation resampling to ``target_hz``."""

    if target_hz <= 0:
        raise ParameterError(f"target rate must be positive, got {target_hz}")
    if clip.sample_rate == target_hz:
        return clip

    n = len(clip.samples)
    out_len = max(1, int(round(n * target_hz / clip.sample_rate)))
    positions = np.arange(out_len) * (clip.sample_rate / target_hz)
    samples = np.interp(positions, np.arange(n), clip.samples)
    return AudioClip(samples, int(target_hz))


def mirror_pad(samples, target_len):
    """Tile ``samples`` end to end up to ``target_len``, or truncate when longer."""

    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ParameterError("cannot pad an empty sample sequence")
    if target_len < 1:
        raise ParameterError(f"target length must be >= 1, got {target_len}")
    return np.resize(samples, target_len)


def prepare_clip(clip, config):
    """Resample to the config rate and pad/truncate to the config clip length."""

    clip = resample(clip, config.sample_rate_hz)
    return AudioClip(mirror_pad(clip.samples, config.clip_samples), config.sample_rate_hz)


##############################################################################
# Spectral analysis


def frame_and_window(samples, config):
    """Split into ``frame_length`` frames every ``hop_length`` samples, Hann-windowed."""

    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < config.frame_length:
        raise ProtocolError(
            f"{samples.size} samples is shorter than one frame ({config.frame_length}); "
            "mirror_pad first")

    frames = sliding_window_view(samples, config.frame_length)[::config.hop_length]
    return frames * np.hanning(config.frame_length)


def power_spectrum(frame, fft_size):
    """One-sided ``|DFT|²`` of the zero-padded frame(s), ``fft_size // 2 + 1`` bins."""

    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > fft_size:
        raise ParameterError(f"frame length {frame.shape[-1]} exceeds fft_size {fft_size}")
    return np.abs(np.fft.rfft(frame, n=fft_size, axis=-1)) ** 2


def spectrum_energy(power, fft_size):
    """Two-sided spectral energy divided by ``fft_size`` (equals Σx² by Parseval)."""

    power = np.asarray(power)
    interior = power[..., 1:-1].sum(axis=-1) if fft_size % 2 == 0 else power[..., 1:].sum(axis=-1)
    total = power[..., 0] + 2.0 * interior
    if fft_size % 2 == 0:
        total = total + power[..., -1]
    return total / fft_size


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config):
    """Centre frequency (Hz) of every mel filter."""

    mels = np.linspace(hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz), config.n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(config):
    """``n_mels × (fft_size/2 + 1)`` triangular filters evenly spaced in mel."""

    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz),
                                  config.n_mels + 2))
    bins = np.arange(config.fft_size // 2 + 1) * config.sample_rate_hz / config.fft_size

    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - left) / (center - left)
    falling = (right - bins[None, :]) / (right - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(bank.max(axis=1) <= 0.0)
    if empty.size:
        raise ParameterError(
            f"n_mels={config.n_mels} too large for fft_size={config.fft_size}: "
            f"filter {int(empty[0])} covers no FFT bin")
    return bank


def mfcc(clip, config=None):
    """MFCC matrix (frames × n_mfcc) for a clip already at the config sample rate."""

    config = config or MfccConfig()
    if clip.sample_rate != config.sample_rate_hz:
        raise ProtocolError(
            f"clip is at {clip.sample_rate} Hz but config expects {config.sample_rate_hz} Hz; "
            "resample first")

    samples = mirror_pad(clip.samples, config.clip_samples)
    frames = frame_and_window(samples, config)
    power = power_spectrum(frames, config.fft_size)
    energies = power @ mel_filterbank(config).T
    log_energies = np.log(np.maximum(energies, config.log_floor))
    values = dct(log_energies, type=2, norm="ortho", axis=-1)[:, :config.n_mfcc]
    return MfccMatrix(values, config)


def spectral_centroid(clip, fft_size=512):
    """Power-weighted mean frequency (Hz) over non-silent Hann frames."""

    frame_length = min(fft_size, len(clip.samples))
    hop = max(1, frame_length // 2)
    frames = sliding_window_view(clip.samples, frame_length)[::hop] * np.hanning(frame_length)
    power = power_spectrum(frames, fft_size)
    freqs = np.arange(power.shape[-1]) * clip.sample_rate / fft_size
    totals = power.sum(axis=-1)
    voiced = totals > 0
    if not voiced.any():
        return 0.0
    return float(np.mean((power[voiced] @ freqs) / totals[voiced]))


##############################################################################
# Feature cache files


def save_mfcc(path, matrix):
    header = {"kind": "mfcc", "config": asdict(matrix.config), "shape": list(matrix.shape)}
    write_framed(path, header, matrix.values)


def load_mfcc(path):
    header, payload = read_framed(path)
    if header.get("kind") != "mfcc":
        raise DataError(f"{path}: not an MFCC cache file")
    return MfccMatrix(payload.reshape(header["shape"]), MfccConfig(**header["config"]))


def save_waveform(path, clip):
    header = {"kind": "waveform", "sample_rate": clip.sample_rate, "shape": [len(clip.samples)]}
    write_framed(path, header, clip.samples)


def load_waveform(path):
    header, payload = read_framed(path)
    if header.get("kind") != "waveform":
        raise DataError(f"{path}: not a waveform cache file")
    return AudioClip(payload, int(header["sample_rate"]))
