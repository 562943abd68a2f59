"""Emotion labels, model variants and the networks built from them."""

import json
import logging
import os
from collections import namedtuple
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from enum import Enum, IntEnum

import numpy as np

from attention import CbamBlock
from checkpoint import SCHEMA_VERSION, load_checkpoint, save_checkpoint
from errors import CheckpointMismatchError, DimensionError, InputContractError, LabelError, ParameterError
from layers import BatchNorm, Conv, Dense, Layer
from recurrent import BiGru, Gru
from tensor import Tensor, check_mode, concat, no_grad, pool, relu, reshape, transpose

logger = logging.getLogger(__name__)

N_CLASSES = 5


class EmotionLabel(IntEnum):
    """The five emotion classes; ids are stable across the whole toolkit."""

    ANGER = 0
    HAPPINESS = 1
    SADNESS = 2
    FEAR = 3
    NEUTRAL = 4

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_name(cls, name):
        """Look up a label by name, ignoring case and surrounding spaces."""

        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise LabelError(f"unknown emotion {name!r}; expected one of {', '.join(LABEL_NAMES)}") from None

    @classmethod
    def from_id(cls, value):
        try:
            return cls(int(value))
        except ValueError:
            raise LabelError(f"label id {value!r} outside 0..{N_CLASSES - 1}") from None


LABEL_NAMES = tuple(label.label for label in EmotionLabel)

VariantLayout = namedtuple("VariantLayout", "title data wave mfcc recurrence dynamic_cbam")


class ModelVariant(Enum):
    """The architecture lineup compared in the evaluation table."""

    ONE_STREAM_WAVE = "one-stream-wave"
    ONE_STREAM_GRU_WAVE = "one-stream-gru-wave"
    ONE_STREAM_GRU_MFCC = "one-stream-gru-mfcc"
    ONE_STREAM_BIGRU_WAVE = "one-stream-bigru-wave"
    DUAL_STREAM_BIGRU = "dual-stream-bigru"
    DUAL_STREAM_DYN_CBAM = "dual-stream-dyn-cbam"
    DUAL_STREAM_DYN_CBAM_BIGRU = "dual-stream-dyn-cbam-bigru"
    PROPOSED = "proposed"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("_", "-"))
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ParameterError(f"unknown model variant {value!r}; choose from {choices}") from None

    @property
    def layout(self):
        return _LAYOUTS[self]

    @property
    def uses_wave(self):
        return self.layout.wave

    @property
    def uses_mfcc(self):
        return self.layout.mfcc


_LAYOUTS = {
    ModelVariant.ONE_STREAM_WAVE: VariantLayout("One-stream", "Soundwave", True, False, None, False),
    ModelVariant.ONE_STREAM_GRU_WAVE: VariantLayout("One-stream GRU", "Soundwave", True, False, "gru", False),
    ModelVariant.ONE_STREAM_GRU_MFCC: VariantLayout("One-stream GRU", "MFCCs", False, True, "gru", False),
    ModelVariant.ONE_STREAM_BIGRU_WAVE: VariantLayout("One-stream Bi-GRU", "Soundwave", True, False, "bigru", False),
    ModelVariant.DUAL_STREAM_BIGRU: VariantLayout("Dual-stream Bi-GRU", "Soundwave, MFCCs", True, True, "bigru", False),
    ModelVariant.DUAL_STREAM_DYN_CBAM: VariantLayout(
        "Dual-stream Dynamic-CBAM", "Soundwave, MFCCs", True, True, None, True),
    ModelVariant.DUAL_STREAM_DYN_CBAM_BIGRU: VariantLayout(
        "Dual-stream Dynamic-CBAM Bi-GRU", "Soundwave, MFCCs", True, True, "bigru", True),
    ModelVariant.PROPOSED: VariantLayout("Proposed Model", "MFCCs", False, True, "bigru", True),
}


@dataclass(frozen=True)
class ModelHyper:
    """Network widths and input geometry. ``n_classes`` is always 5."""

    channels: tuple = (16, 32, 64, 128)
    conv_kernel: int = 3
    pool_window: int = 2
    gru_hidden: int = 128
    gru_layers: int = 1
    cbam_reduction: int = 16
    odconv_kernels: int = 4
    odconv_reduction: int = 4
    odconv_temperature: float = 1.0
    spatial_kernel: int = 7
    classifier_hidden: int = 128
    n_classes: int = N_CLASSES
    dropout: float = 0.3
    mfcc_bins: int = 40
    mfcc_frames: int = 498
    wave_samples: int = 80000

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.n_classes != N_CLASSES:
            raise ParameterError(f"n_classes is fixed at {N_CLASSES}, got {self.n_classes}")
        if not self.channels or min(self.channels) < 1:
            raise ParameterError(f"channel ladder must be non-empty and positive, got {self.channels}")
        positive = ("conv_kernel", "pool_window", "gru_hidden", "gru_layers", "cbam_reduction",
                    "odconv_kernels", "odconv_reduction", "spatial_kernel", "classifier_hidden",
                    "mfcc_bins", "mfcc_frames", "wave_samples")
        for name in positive:
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.conv_kernel % 2 != 1 or self.spatial_kernel % 2 != 1:
            raise ParameterError("conv_kernel and spatial_kernel must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.odconv_temperature <= 0:
            raise ParameterError("odconv_temperature must be positive")

    def to_dict(self):
        data = asdict(self)
        data["channels"] = list(self.channels)
        return data


@dataclass
class FeatureBatch:
    """Model input: MFCC maps (batch, frames, n_mfcc) and/or waveforms (batch, samples)."""

    mfcc: np.ndarray = None
    wave: np.ndarray = None
    labels: np.ndarray = field(default=None)

    def __len__(self):
        stream = self.mfcc if self.mfcc is not None else self.wave
        return 0 if stream is None else len(stream)


##############################################################################
# CBM embedding blocks


def pooled_extent(extent, blocks, window):
    """Spatial size after ``blocks`` floor-halving pools, or a DimensionError."""

    for depth in range(blocks):
        if extent < window:
            raise DimensionError(
                f"spatial extent {extent} cannot survive pool {window} at CBM block {depth}")
        extent = (extent - window) // window + 1
    return extent


class CbmBlock(Layer):
    """Convolution → batch norm → relu → max pool (window 2, stride 2)."""

    def __init__(self, in_channels, out_channels, rng, rank=2, kernel_size=3, pool_window=2):
        super().__init__()
        self.rank = rank
        self.pool_window = pool_window
        self.conv = self.add_child("conv", Conv(in_channels, out_channels, kernel_size, rng, rank=rank))
        self.bn = self.add_child("bn", BatchNorm(out_channels))

    def forward(self, x, mode="eval"):
        return cbm_block(x, self, self.rank, mode)


def cbm_block(x, params, rank, mode):
    if rank != params.rank:
        raise ParameterError(f"CBM block was built for rank {params.rank}, called with rank {rank}")
    for extent in x.shape[2:]:
        if extent < params.pool_window:
            raise DimensionError(f"spatial extent {extent} is smaller than pool window {params.pool_window}")

    out = relu(params.bn.forward(params.conv.forward(x), mode))
    return pool(out, "max", window=params.pool_window, stride=params.pool_window)


class CbmStack(Layer):
    def __init__(self, channels, rng, rank, kernel_size, pool_window):
        super().__init__()
        widths = (1,) + tuple(channels)
        self.blocks = [
            self.add_child(f"block{i}", CbmBlock(widths[i], widths[i + 1], rng, rank, kernel_size, pool_window))
            for i in range(len(channels))
        ]

    def forward(self, x, mode):
        for block in self.blocks:
            x = block.forward(x, mode)
        return x


##############################################################################
# Streams and the full network


class Stream(Layer):
    """One input path: CBM stack, optional Dynamic-CBAM, optional recurrence."""

    def __init__(self, kind, hyper, layout, rng):
        super().__init__()
        self.kind = kind
        self.recurrence = layout.recurrence
        rank = 2 if kind == "mfcc" else 1
        n_blocks = len(hyper.channels)
        width = hyper.channels[-1]

        if kind == "mfcc":
            self.freq_bins = pooled_extent(hyper.mfcc_bins, n_blocks, hyper.pool_window)
            pooled_extent(hyper.mfcc_frames, n_blocks, hyper.pool_window)
            step_features = width * self.freq_bins
        else:
            pooled_extent(hyper.wave_samples, n_blocks, hyper.pool_window)
            step_features = width

        self.cbm = self.add_child("cbm", CbmStack(hyper.channels, rng, rank, hyper.conv_kernel, hyper.pool_window))
        self.cbam = None
        if kind == "mfcc" and layout.dynamic_cbam:
            self.cbam = self.add_child("cbam", CbamBlock(
                width, rng, reduction=hyper.cbam_reduction, dynamic=True,
                spatial_kernel=hyper.spatial_kernel, kernel_num=hyper.odconv_kernels,
                odconv_reduction=hyper.odconv_reduction, temperature=hyper.odconv_temperature))

        self.rnn = None
        if self.recurrence == "gru":
            self.rnn = self.add_child("gru", Gru(step_features, hyper.gru_hidden, rng,
                                                 hyper.gru_layers, hyper.dropout))
        elif self.recurrence == "bigru":
            self.rnn = self.add_child("bigru", BiGru(step_features, hyper.gru_hidden, rng,
                                                     hyper.gru_layers, hyper.dropout))

        self.output_size = self.rnn.output_size if self.rnn is not None else width

    def forward(self, x, mode, rng):
        if self.kind == "mfcc":
            # (batch, frames, coeffs) -> (batch, 1, coeffs, frames)
            batch, frames, coeffs = x.shape
            feats = reshape(transpose(x, (0, 2, 1)), (batch, 1, coeffs, frames))
        else:
            batch, samples = x.shape
            feats = reshape(x, (batch, 1, samples))

        feats = self.cbm.forward(feats, mode)
        if self.cbam is not None:
            feats = self.cbam.forward(feats, mode)

        if self.rnn is None:
            return pool(feats, "avg", scope="global")

        if self.kind == "mfcc":
            # fold frequency × channel into the per-time-step feature axis
            _, channels, freq, steps = feats.shape
            seq = reshape(transpose(feats, (0, 3, 1, 2)), (batch, steps, channels * freq))
        else:
            seq = transpose(feats, (0, 2, 1))
        return self.rnn.final_state(seq, mode, rng)


class EmotionNet(Layer):
    """Streams → concatenated embedding → dense → relu → dense(5) logits."""

    def __init__(self, variant, hyper, seed):
        super().__init__()
        self.variant = variant
        self.hyper = hyper
        self.seed = seed
        rng = np.random.default_rng(seed)
        layout = variant.layout

        self.streams = {}
        if layout.wave:
            self.streams["wave"] = self.add_child("wave", Stream("wave", hyper, layout, rng))
        if layout.mfcc:
            self.streams["mfcc"] = self.add_child("mfcc", Stream("mfcc", hyper, layout, rng))

        embedding = sum(stream.output_size for stream in self.streams.values())
        self.hidden = self.add_child("classifier_hidden", Dense(embedding, hyper.classifier_hidden, rng))
        self.output = self.add_child("classifier_out", Dense(hyper.classifier_hidden, hyper.n_classes, rng))

    def forward(self, batch, mode="eval", seed=None):
        """Logits for ``batch``. Eval mode records nothing on the tape."""

        check_mode(mode)
        rng = np.random.default_rng(seed)
        with no_grad() if mode == "eval" else nullcontext():
            embeddings = []
            for kind, stream in self.streams.items():
                embeddings.append(stream.forward(self._input(batch, kind), mode, rng))

            joined = embeddings[0] if len(embeddings) == 1 else concat(embeddings, axis=-1)
            return self.output.forward(relu(self.hidden.forward(joined)))

    def _input(self, batch, kind):
        values = batch.get(kind) if isinstance(batch, dict) else getattr(batch, kind, None)
        if values is None:
            raise InputContractError(f"{self.variant.value} needs a {kind} stream in every batch")

        values = values if isinstance(values, Tensor) else Tensor(values)
        if kind == "mfcc" and (values.ndim != 3 or values.shape[2] != self.hyper.mfcc_bins):
            raise InputContractError(
                f"mfcc batch must be (batch, frames, {self.hyper.mfcc_bins}), got {values.shape}")
        if kind == "wave" and values.ndim != 2:
            raise InputContractError(f"wave batch must be (batch, samples), got {values.shape}")
        return values

    def metadata(self):
        return {
            "variant": self.variant.value,
            "hyper": self.hyper.to_dict(),
            "seed": self.seed,
            "labels": {label.label: int(label) for label in EmotionLabel},
        }


def build_model(variant, hyper=None, seed=0):
    """Build the network for ``variant`` with parameters drawn from ``seed``."""

    variant = ModelVariant.parse(variant)
    hyper = hyper or ModelHyper()
    model = EmotionNet(variant, hyper, seed)
    logger.debug("built %s with %d parameters", variant.value, model.parameter_count())
    return model


def model_forward(params, batch, mode="eval", seed=None):
    """Logits (batch, 5) for a FeatureBatch or ``{"mfcc": ..., "wave": ...}`` dict."""

    return params.forward(batch, mode, seed)


def sidecar_path(path):
    return f"{os.path.splitext(path)[0]}.json"


def save_model(path, model):
    """Write the checkpoint and its JSON sidecar (variant, hyper, seed, labels)."""

    metadata = {"schema_version": SCHEMA_VERSION, **model.metadata()}
    save_checkpoint(path, model.state_dict(), metadata)
    with open(sidecar_path(path), "w") as fh:
        json.dump(metadata, fh, indent=2)
        fh.write("\n")
    logger.info("saved %s checkpoint to %s", model.variant.value, path)


def load_model(path, variant=None):
    """Rebuild the network stored at ``path``; ``variant`` must match when given."""

    arrays, metadata = load_checkpoint(path)
    if "variant" not in metadata or "hyper" not in metadata:
        raise CheckpointMismatchError(f"{path} carries no model metadata")

    stored = ModelVariant.parse(metadata["variant"])
    if variant is not None and ModelVariant.parse(variant) is not stored:
        raise CheckpointMismatchError(
            f"checkpoint {path} holds {stored.value} but the config asks for {ModelVariant.parse(variant).value}")

    model = build_model(stored, ModelHyper(**metadata["hyper"]), metadata.get("seed", 0))
    model.load_state_dict(arrays)
    return model
