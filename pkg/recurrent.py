"""GRU cell, multi-layer GRU and bidirectional GRU with inter-layer dropout.

Sequences are (batch, time, features); unbatched (time, features) input is
accepted too. Dropout between stacked layers multiplies by a Bernoulli(1 - p)
mask scaled by 1/(1 - p), so eval mode is the identity.
"""

import logging
import math

import numpy as np

from errors import DimensionError, ParameterError
from layers import Layer
from tensor import Tensor, concat, flip, linear, mul, sigmoid, stack, take, tanh, check_mode

logger = logging.getLogger(__name__)

GATE_WEIGHTS = ("W_ir", "W_iz", "W_in")
HIDDEN_WEIGHTS = ("W_hr", "W_hz", "W_hn")
BIASES = ("b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn")


class GruWeights(Layer):
    """Input, hidden and bias parameters of one GRU direction."""

    def __init__(self, input_size, hidden_size, rng):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        bound = 1.0 / math.sqrt(hidden_size)

        for name in GATE_WEIGHTS:
            self.add_parameter(name, rng.uniform(-bound, bound, (hidden_size, input_size)))
        for name in HIDDEN_WEIGHTS:
            self.add_parameter(name, rng.uniform(-bound, bound, (hidden_size, hidden_size)))
        for name in BIASES:
            self.add_parameter(name, rng.uniform(-bound, bound, hidden_size))

    def __getitem__(self, name):
        return self._params[name]


def gru_gates(x_t, h_prev, w):
    """Reset, update and new gates ``(r, z, n)`` for one step."""

    if x_t.shape[-1] != w.input_size:
        raise DimensionError(f"GRU input has {x_t.shape[-1]} features, weights expect {w.input_size}")
    if h_prev.shape[-1] != w.hidden_size:
        raise DimensionError(f"GRU state has {h_prev.shape[-1]} units, weights expect {w.hidden_size}")

    r = sigmoid(linear(x_t, w["W_ir"], w["b_ir"]) + linear(h_prev, w["W_hr"], w["b_hr"]))
    z = sigmoid(linear(x_t, w["W_iz"], w["b_iz"]) + linear(h_prev, w["W_hz"], w["b_hz"]))
    n = tanh(linear(x_t, w["W_in"], w["b_in"]) + r * linear(h_prev, w["W_hn"], w["b_hn"]))
    return r, z, n


def gru_cell(x_t, h_prev, w):
    """h_t = (1 - z) ⊙ n + z ⊙ h_prev."""

    _, z, n = gru_gates(x_t, h_prev, w)
    return (1.0 - z) * n + z * h_prev


def _initial_state(xs, w, h0):
    if h0 is not None:
        return h0
    shape = (w.hidden_size,) if xs.ndim == 2 else (xs.shape[0], w.hidden_size)
    return Tensor.zeros(shape)


def gru_sequence(xs, h0, w):
    """Left fold of gru_cell over the time axis; returns every hidden state."""

    if xs.ndim not in (2, 3):
        raise DimensionError(f"GRU sequence must be (time, D) or (batch, time, D), got {xs.shape}")

    time_axis = xs.ndim - 2
    h = _initial_state(xs, w, h0)
    states = []
    for t in range(xs.shape[time_axis]):
        h = gru_cell(take(xs, t, axis=time_axis), h, w)
        states.append(h)
    return stack(states, axis=time_axis)


def _generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def dropout(x, rate, rng, mode):
    """Inverted Bernoulli dropout; identity in eval mode or at rate 0."""

    check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x

    keep = _generator(rng).random(x.shape) < (1.0 - rate)
    return mul(x, Tensor(keep / (1.0 - rate)))


def _as_layers(weights):
    if isinstance(weights, GruWeights):
        return [weights]
    return list(weights)


def gru_forward(xs, weights, mode="eval", dropout_rate=0.0, seed=None):
    """Stacked unidirectional GRU with dropout between layers."""

    rng = _generator(seed)
    layers = _as_layers(weights)
    out = xs
    for depth, w in enumerate(layers):
        if depth:
            out = dropout(out, dropout_rate, rng, mode)
        out = gru_sequence(out, None, w)
    return out


def _bidirectional(xs, w_fwd, w_bwd):
    time_axis = xs.ndim - 2
    forward = gru_sequence(xs, None, w_fwd)
    backward = flip(gru_sequence(flip(xs, time_axis), None, w_bwd), time_axis)
    return forward, backward


def bigru_forward(xs, w_fwd, w_bwd, mode="eval", dropout_rate=0.0, seed=None):
    """Bidirectional GRU, output width 2H.

    ``w_fwd``/``w_bwd`` are one GruWeights each, or equal-length sequences of
    them for a stacked Bi-GRU; dropout acts on the input of every layer after
    the first.
    """

    fwd_layers, bwd_layers = _as_layers(w_fwd), _as_layers(w_bwd)
    if len(fwd_layers) != len(bwd_layers):
        raise ParameterError("forward and backward stacks must have the same depth")

    rng = _generator(seed)
    out = xs
    for depth, (wf, wb) in enumerate(zip(fwd_layers, bwd_layers)):
        if depth:
            out = dropout(out, dropout_rate, rng, mode)
        out = concat(_bidirectional(out, wf, wb), axis=-1)
    return out


class Gru(Layer):
    """Stacked unidirectional GRU whose embedding is the last hidden state."""

    def __init__(self, input_size, hidden_size, rng, num_layers=1, dropout_rate=0.0):
        super().__init__()
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.layers = [
            self.add_child(f"layer{i}", GruWeights(input_size if i == 0 else hidden_size, hidden_size, rng))
            for i in range(num_layers)
        ]

    @property
    def output_size(self):
        return self.hidden_size

    def final_state(self, xs, mode="eval", seed=None):
        out = gru_forward(xs, self.layers, mode, self.dropout_rate, seed)
        return take(out, out.shape[-2] - 1, axis=-2)


class BiGru(Layer):
    """Stacked Bi-GRU whose embedding is both directions' final states."""

    def __init__(self, input_size, hidden_size, rng, num_layers=1, dropout_rate=0.0):
        super().__init__()
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.forward_layers = []
        self.backward_layers = []
        for i in range(num_layers):
            width = input_size if i == 0 else 2 * hidden_size
            self.forward_layers.append(self.add_child(f"fwd{i}", GruWeights(width, hidden_size, rng)))
            self.backward_layers.append(self.add_child(f"bwd{i}", GruWeights(width, hidden_size, rng)))

    @property
    def output_size(self):
        return 2 * self.hidden_size

    def final_state(self, xs, mode="eval", seed=None):
        rng = _generator(seed)
        out = xs
        if len(self.forward_layers) > 1:
            out = bigru_forward(xs, self.forward_layers[:-1], self.backward_layers[:-1],
                                mode, self.dropout_rate, rng)
            out = dropout(out, self.dropout_rate, rng, mode)

        forward, backward = _bidirectional(out, self.forward_layers[-1], self.backward_layers[-1])
        time_axis = out.ndim - 2
        last = take(forward, out.shape[time_axis] - 1, axis=time_axis)
        first = take(backward, 0, axis=time_axis)
        return concat([last, first], axis=-1)
