"""Parameter bundles shared by the attention, recurrent and model modules."""

import logging
import math

import numpy as np

from errors import CheckpointMismatchError, ParameterError
from tensor import BatchNormState, Tensor, batchnorm, convolution, linear

logger = logging.getLogger(__name__)


def kaiming_uniform(rng, shape, fan_in):
    """Uniform weights scaled by fan-in, bound ``sqrt(6 / fan_in)``."""

    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """A named tree of learnable tensors and non-learnable buffers.

    Names are dotted paths (``cbam.channel_mlp.W0``) used as checkpoint keys.
    """

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_parameter(self, name, values):
        tensor = Tensor(values, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_child(self, name, layer):
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix=""):
        """All learnable tensors, own first, then children in insertion order."""

        for name, tensor in self._params.items():
            yield f"{prefix}{name}", tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix=""):
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def parameters(self):
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self):
        return sum(tensor.size for tensor in self.parameters())

    def zero_grad(self):
        for tensor in self.parameters():
            tensor.grad = None

    def state_dict(self):
        """Copies of every parameter and buffer keyed by dotted name."""

        state = {name: tensor.data.copy() for name, tensor in self.named_parameters()}
        state.update({name: values.copy() for name, values in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        expected = set(name for name, _ in self.named_parameters()) | set(
            name for name, _ in self.named_buffers())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise CheckpointMismatchError(
                f"checkpoint keys differ from model: missing {missing[:5]}, unexpected {extra[:5]}")

        for name, tensor in self.named_parameters():
            if state[name].shape != tensor.shape:
                raise CheckpointMismatchError(
                    f"{name}: checkpoint shape {state[name].shape} != model shape {tensor.shape}")
            tensor.data = np.array(state[name], dtype=np.float64)
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for child_name, child in self._children.items():
            child._load_buffers(state, f"{prefix}{child_name}.")


class Dense(Layer):
    """Fully connected layer ``y = x Wᵀ + b``."""

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.W = self.add_parameter("W", kaiming_uniform(rng, (out_features, in_features), in_features))
        self.b = self.add_parameter("b", np.zeros(out_features)) if bias else None

    def forward(self, x):
        return linear(x, self.W, self.b)


class Conv(Layer):
    """Stride-1 same-padded convolution over 1 or 2 spatial axes."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, rank=2, bias=False):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ParameterError(f"same-padded convolution needs an odd kernel, got {kernel_size}")

        self.rank = rank
        self.padding = (kernel_size - 1) // 2
        shape = (out_channels, in_channels) + (kernel_size,) * rank
        fan_in = in_channels * kernel_size ** rank
        self.kernel = self.add_parameter("kernel", kaiming_uniform(rng, shape, fan_in))
        self.bias = self.add_parameter("bias", np.zeros(out_channels)) if bias else None

    def forward(self, x):
        return convolution(x, self.kernel, self.bias, stride=1, padding=self.padding, rank=self.rank)


class BatchNorm(Layer):
    """Per-channel batch normalization with momentum-0.1 running statistics."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.gamma = self.add_parameter("gamma", np.ones(channels))
        self.beta = self.add_parameter("beta", np.zeros(channels))
        self.state = BatchNormState(channels, momentum)

    def forward(self, x, mode):
        return batchnorm(x, self.gamma, self.beta, self.state, mode, self.eps)

    def named_buffers(self, prefix=""):
        yield f"{prefix}running_mean", self.state.running_mean
        yield f"{prefix}running_var", self.state.running_var

    def _load_buffers(self, state, prefix):
        self.state.running_mean = np.array(state[f"{prefix}running_mean"], dtype=np.float64)
        self.state.running_var = np.array(state[f"{prefix}running_var"], dtype=np.float64)
