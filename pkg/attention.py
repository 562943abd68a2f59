"""Channel/spatial attention, CBAM, ODConv and Dynamic-CBAM.

Feature maps are laid out (batch, channels, height, width). The Dynamic-CBAM
block is CBAM whose 7×7 spatial-attention convolution is an ODConv over the
stacked channel-mean / channel-max maps.
"""

import logging
import math
from collections import namedtuple

import numpy as np

from errors import DimensionError, ParameterError
from layers import BatchNorm, Conv, Layer, kaiming_uniform
from tensor import (Tensor, add, concat, convolution, linear, mul, pool, reduce, relu,
                    reshape, scale, sigmoid, softmax)

logger = logging.getLogger(__name__)

OdconvAttention = namedtuple("OdconvAttention", "spatial channel filter kernel")
OdconvAttention.__new__.__defaults__ = (None, None, None, None)
OdconvAttention.__doc__ = """Per-sample ODConv attentions.

spatial (B, k, k), channel (B, c_in), filter (B, c_out), kernel (B, m).
As an override, any field may be None (keep the computed value) or omit the
batch axis (shared by every sample).
"""


##############################################################################
# Channel and spatial attention


class ChannelAttention(Layer):
    """Shared bottleneck MLP ``W1 · relu(W0 · v)`` of the channel gate."""

    def __init__(self, channels, reduction, rng):
        super().__init__()
        hidden = channels // reduction
        self.channels = channels
        self.W0 = self.add_parameter("W0", kaiming_uniform(rng, (hidden, channels), channels))
        self.W1 = self.add_parameter("W1", kaiming_uniform(rng, (channels, hidden), hidden))

    def mlp(self, v):
        return linear(relu(linear(v, self.W0)), self.W1)


def channel_attention(F, params):
    """M_c = σ(MLP(AvgPool(F)) + MLP(MaxPool(F))), shape (batch, c)."""

    if F.ndim != 4 or F.shape[1] != params.channels:
        raise DimensionError(
            f"channel attention expects (batch, {params.channels}, h, w), got {F.shape}")

    avg = pool(F, "avg", scope="global")
    peak = pool(F, "max", scope="global")
    return sigmoid(add(params.mlp(avg), params.mlp(peak)))


class SpatialAttention(Layer):
    """Static ``k × k`` convolution from the 2 pooled maps to one gate map."""

    def __init__(self, rng, kernel_size=7):
        super().__init__()
        self.kernel_size = kernel_size
        fan_in = 2 * kernel_size * kernel_size
        self.kernel = self.add_parameter(
            "kernel", kaiming_uniform(rng, (1, 2, kernel_size, kernel_size), fan_in))


def channel_pool_maps(F):
    """Per-pixel channel mean and max, stacked as 2 channels."""

    avg = reduce(F, "mean", axis=1, keepdims=True)
    peak = reduce(F, "max", axis=1, keepdims=True)
    return concat([avg, peak], axis=1)


def spatial_attention(F, params, attention_override=None):
    """M_s = σ(conv([AvgPool(F); MaxPool(F)])), shape (batch, 1, h, w).

    ``params`` is a SpatialAttention (static CBAM) or an OdconvBank
    (Dynamic-CBAM).
    """

    if F.ndim != 4:
        raise DimensionError(f"spatial attention expects (batch, c, h, w), got {F.shape}")

    maps = channel_pool_maps(F)
    if isinstance(params, OdconvBank):
        response = odconv_forward(maps, params, attention_override)
    else:
        if attention_override is not None:
            raise ParameterError("attention override only applies to an ODConv spatial kernel")
        pad = (params.kernel_size - 1) // 2
        response = convolution(maps, params.kernel, stride=1, padding=pad, rank=2)
    return sigmoid(response)


##############################################################################
# ODConv


class OdconvBank(Layer):
    """``m`` candidate kernels and the four-branch attention head that mixes them."""

    def __init__(self, in_channels, out_channels, rng, kernel_size=7, kernel_num=4,
                 reduction=4, temperature=1.0):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ParameterError(f"ODConv kernel size must be odd, got {kernel_size}")
        if kernel_num < 1 or reduction < 1:
            raise ParameterError("ODConv needs kernel_num >= 1 and reduction >= 1")

        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.kernel_num = kernel_num
        self.temperature = float(temperature)
        hidden = math.ceil(in_channels / reduction)
        k2 = kernel_size * kernel_size

        self.kernels = self.add_parameter(
            "kernels",
            kaiming_uniform(rng, (kernel_num, out_channels, in_channels, kernel_size, kernel_size),
                            in_channels * k2))
        self.fc = self.add_parameter("fc", kaiming_uniform(rng, (hidden, in_channels), in_channels))
        self.spatial_W = self.add_parameter("spatial_W", kaiming_uniform(rng, (k2, hidden), hidden))
        self.spatial_b = self.add_parameter("spatial_b", np.zeros(k2))
        self.channel_W = self.add_parameter(
            "channel_W", kaiming_uniform(rng, (in_channels, hidden), hidden))
        self.channel_b = self.add_parameter("channel_b", np.zeros(in_channels))
        self.filter_W = self.add_parameter(
            "filter_W", kaiming_uniform(rng, (out_channels, hidden), hidden))
        self.filter_b = self.add_parameter("filter_b", np.zeros(out_channels))
        self.kernel_W = self.add_parameter("kernel_W", kaiming_uniform(rng, (kernel_num, hidden), hidden))
        self.kernel_b = self.add_parameter("kernel_b", np.zeros(kernel_num))

    def update_temperature(self, temperature):
        if temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {temperature}")
        self.temperature = float(temperature)


def odconv_attention(x, bank):
    """Squeeze → FC → relu → four branch FCs; sigmoid on three, softmax on kernels."""

    if x.ndim != 4 or x.shape[1] != bank.in_channels:
        raise DimensionError(
            f"ODConv attention expects (batch, {bank.in_channels}, h, w), got {x.shape}")

    batch, k = x.shape[0], bank.kernel_size
    squeezed = relu(linear(pool(x, "avg", scope="global"), bank.fc))
    inv_t = 1.0 / bank.temperature

    def branch(W, b):
        return scale(linear(squeezed, W, b), inv_t)

    return OdconvAttention(
        spatial=reshape(sigmoid(branch(bank.spatial_W, bank.spatial_b)), (batch, k, k)),
        channel=sigmoid(branch(bank.channel_W, bank.channel_b)),
        filter=sigmoid(branch(bank.filter_W, bank.filter_b)),
        kernel=softmax(branch(bank.kernel_W, bank.kernel_b), axis=-1),
    )


def _override(computed, value, per_sample_shape, name):
    if value is None:
        return computed

    value = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
    batch = computed.shape[0]
    if value.shape == per_sample_shape:
        value = np.broadcast_to(value, (batch,) + per_sample_shape)
    elif value.shape != (batch,) + per_sample_shape:
        raise ParameterError(
            f"{name} override must have shape {per_sample_shape} or "
            f"{(batch,) + per_sample_shape}, got {value.shape}")
    return Tensor(value)


def odconv_forward(x, bank, attention_override=None):
    """Convolve ``x`` with ``Σ_i α_wi · (α_s ⊙ α_c ⊙ α_f ⊙ w_i)`` per sample."""

    att = odconv_attention(x, bank)
    m, c_out, c_in, k = bank.kernel_num, bank.out_channels, bank.in_channels, bank.kernel_size

    if attention_override is not None:
        att = OdconvAttention(
            spatial=_override(att.spatial, attention_override.spatial, (k, k), "spatial"),
            channel=_override(att.channel, attention_override.channel, (c_in,), "channel"),
            filter=_override(att.filter, attention_override.filter, (c_out,), "filter"),
            kernel=_override(att.kernel, attention_override.kernel, (m,), "kernel"),
        )

    batch = x.shape[0]
    weighted = mul(reshape(att.kernel, (batch, m, 1, 1, 1, 1)),
                   reshape(att.filter, (batch, 1, c_out, 1, 1, 1)))
    weighted = mul(weighted, reshape(att.channel, (batch, 1, 1, c_in, 1, 1)))
    weighted = mul(weighted, reshape(att.spatial, (batch, 1, 1, 1, k, k)))
    weighted = mul(weighted, reshape(bank.kernels, (1, m, c_out, c_in, k, k)))
    effective = reduce(weighted, "sum", axis=1)

    return convolution(x, effective, stride=1, padding=(k - 1) // 2, rank=2)


##############################################################################
# CBAM and Dynamic-CBAM


class CbamBlock(Layer):
    """Channel gate → spatial gate → residual CBS refinement.

    With ``dynamic=True`` the spatial gate's convolution is an ODConv
    (c_in 2, c_out 1), i.e. the Dynamic-CBAM block.
    """

    def __init__(self, channels, rng, reduction=16, dynamic=False, spatial_kernel=7,
                 kernel_num=4, odconv_reduction=4, temperature=1.0):
        super().__init__()
        reduction = min(reduction, channels)
        if reduction < 1 or channels % reduction:
            raise ParameterError(
                f"channels ({channels}) must be divisible by the reduction ratio ({reduction})")

        self.channels = channels
        self.dynamic = dynamic
        self.channel_mlp = self.add_child("channel_mlp", ChannelAttention(channels, reduction, rng))
        if dynamic:
            spatial = OdconvBank(2, 1, rng, kernel_size=spatial_kernel, kernel_num=kernel_num,
                                 reduction=odconv_reduction, temperature=temperature)
        else:
            spatial = SpatialAttention(rng, spatial_kernel)
        self.spatial = self.add_child("spatial", spatial)
        self.cbs_conv = self.add_child("cbs_conv", Conv(channels, channels, 3, rng))
        self.cbs_bn = self.add_child("cbs_bn", BatchNorm(channels))

    def forward(self, F, mode="eval", attention_override=None):
        if F.ndim != 4 or F.shape[1] != self.channels:
            raise DimensionError(f"CBAM expects (batch, {self.channels}, h, w), got {F.shape}")

        batch = F.shape[0]
        gate_c = reshape(channel_attention(F, self.channel_mlp), (batch, self.channels, 1, 1))
        refined = mul(F, gate_c)
        refined = mul(refined, spatial_attention(refined, self.spatial, attention_override))
        cbs = relu(self.cbs_bn.forward(self.cbs_conv.forward(refined), mode))
        return add(F, cbs)


def cbam_forward(F, params, mode="eval"):
    """F_O = F ⊕ CBS(M_s(F′) ⊗ F′) with F′ = M_c(F) ⊗ F."""

    if params.dynamic:
        raise ParameterError("cbam_forward needs a static CbamBlock; use dynamic_cbam_forward")
    return params.forward(F, mode)


def dynamic_cbam_forward(F, params, mode="eval", attention_override=None):
    """CBAM with the spatial-attention convolution replaced by ODConv."""

    if not params.dynamic:
        raise ParameterError("dynamic_cbam_forward needs a CbamBlock built with dynamic=True")
    return params.forward(F, mode, attention_override)
