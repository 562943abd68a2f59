"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every differentiable primitive the networks need lives here: linear maps,
1D/2D convolution (static or per-sample kernels), pooling, batch
normalization, activations, broadcasting elementwise algebra and a handful of
shape utilities. Forward ops record a node on the calling thread's active
:class:`Tape` whenever one of their inputs requires a gradient.
"""

import logging
import os
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import expit, softmax as _softmax

from errors import DimensionError, NumericError, ParameterError, ProtocolError

logger = logging.getLogger(__name__)

MODES = ("train", "eval")

_debug = os.environ.get("DYNSER_DEBUG", "") not in ("", "0")
_local = threading.local()


def set_debug(flag):
    """Turn the per-op non-finite check on or off."""

    global _debug
    _debug = bool(flag)


##############################################################################
# Tensor and tape


class Tensor:
    """Dense row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.array(data, dtype=np.float64)
        if data.size == 0:
            raise DimensionError(f"tensor dimensions must be positive, got {data.shape}")

        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    @classmethod
    def zeros(cls, shape, requires_grad=False):
        return cls(np.zeros(shape), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, requires_grad=False):
        return cls(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


class Node:
    """One recorded operation: its inputs, its output and how to pull back a gradient."""

    __slots__ = ("op", "inputs", "output", "backward_rule", "tape")

    def __init__(self, op, inputs, output, backward_rule, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_rule = backward_rule
        self.tape = tape


class Tape:
    """Ordered record of operations on one thread.

    Use as a context manager to make it the active tape::

        with Tape() as tape:
            loss = cross_entropy(model.forward(batch, "train"), labels)
            tape.backward(loss)
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        self.nodes = []

    def backward(self, loss):
        """Populate ``.grad`` on every leaf that ``loss`` depends on."""

        if loss.size != 1:
            raise ProtocolError(f"backward needs a scalar loss, got shape {loss.shape}")

        if loss.node is None:
            if loss.requires_grad:
                loss.grad = _accumulate(loss.grad, np.ones_like(loss.data))
            return

        if loss.node.tape is not self:
            raise ProtocolError("loss was not recorded on this tape")

        pending = {id(loss): np.ones_like(loss.data)}
        leaves = {}

        for node in reversed(self.nodes):
            grad = pending.pop(id(node.output), None)
            if grad is None:
                continue

            input_grads = node.backward_rule(grad)
            for tensor, tensor_grad in zip(node.inputs, input_grads):
                if not tensor.requires_grad:
                    continue
                if tensor.node is None:
                    leaves[id(tensor)] = tensor
                    if tensor_grad is not None:
                        tensor.grad = _accumulate(tensor.grad, tensor_grad)
                elif tensor_grad is not None:
                    pending[id(tensor)] = _accumulate(pending.get(id(tensor)), tensor_grad)

        # leaves on the tape that the loss never reached
        for node in self.nodes:
            for tensor in node.inputs:
                if tensor.requires_grad and tensor.node is None and tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)

        logger.debug("backward visited %d nodes, %d leaves", len(self.nodes), len(leaves))


def _accumulate(current, update):
    if current is None:
        return np.array(update, dtype=np.float64)
    return current + update


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    """The innermost active tape on this thread, or the thread's default tape."""

    stack = _tape_stack()
    if stack:
        return stack[-1]

    default = getattr(_local, "default", None)
    if default is None:
        default = _local.default = Tape()
    return default


def _recording():
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Run forward ops without recording anything on the tape."""

    previous = _recording()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = previous


def backward(loss):
    """Back-propagate from a scalar ``loss`` through the tape that produced it.

    The thread's default tape is released afterwards; explicit tapes are
    kept until they go out of scope.
    """

    if loss.size != 1:
        raise ProtocolError(f"backward needs a scalar loss, got shape {loss.shape}")

    tape = loss.node.tape if loss.node is not None else current_tape()
    tape.backward(loss)

    if tape is getattr(_local, "default", None):
        tape.clear()


def record_op(op, data, inputs, backward_rule):
    """Wrap a forward result and register its backward rule.

    ``backward_rule`` maps the output gradient to a tuple holding one gradient
    (or None) per input.
    """

    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = False
    out.grad = None
    out.node = None
    out.name = None

    if _debug and not np.all(np.isfinite(out.data)):
        raise NumericError(f"{op} produced non-finite values")

    if _recording() and any(t.requires_grad for t in inputs):
        tape = current_tape()
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), out, backward_rule, tape)
        tape.record(out.node)

    return out


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` along broadcast axes."""

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def check_mode(mode):
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")


##############################################################################
# Elementwise algebra and activations


def elementwise(a, b, op):
    """Broadcasting ``add``, ``sub`` or ``mul`` of two tensors."""

    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None

    if op == "add":
        data = a.data + b.data

        def rule(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    elif op == "sub":
        data = a.data - b.data

        def rule(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    elif op == "mul":
        data = a.data * b.data

        def rule(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    else:
        raise ParameterError(f"unknown elementwise op {op!r}")

    return record_op(op, data, (a, b), rule)


def add(a, b):
    return elementwise(a, b, "add")


def sub(a, b):
    return elementwise(a, b, "sub")


def mul(a, b):
    return elementwise(a, b, "mul")


def scale(x, factor):
    """Multiply by a constant."""

    factor = float(factor)
    return record_op("scale", x.data * factor, (x,), lambda g: (g * factor,))


def activation(x, kind):
    """Elementwise ``sigmoid``, ``tanh`` or ``relu``."""

    if kind == "sigmoid":
        out = expit(x.data)

        def rule(g):
            return (g * out * (1.0 - out),)

    elif kind == "tanh":
        out = np.tanh(x.data)

        def rule(g):
            return (g * (1.0 - out * out),)

    elif kind == "relu":
        out = np.maximum(x.data, 0.0)

        def rule(g):
            return (g * (x.data > 0.0),)

    else:
        raise ParameterError(f"unknown activation {kind!r}")

    return record_op(kind, out, (x,), rule)


def sigmoid(x):
    return activation(x, "sigmoid")


def tanh(x):
    return activation(x, "tanh")


def relu(x):
    return activation(x, "relu")


def softmax(x, axis=-1):
    out = _softmax(x.data, axis=axis)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record_op("softmax", out, (x,), rule)


##############################################################################
# Shape utilities


def reshape(x, shape):
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return record_op("reshape", data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat along axis {axis}: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op("concat", data, tensors, rule)


def stack(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack along axis {axis}: {exc}") from None

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record_op("stack", data, tensors, rule)


def take(x, index, axis):
    """Select one position along ``axis``, dropping that axis."""

    axis = axis % x.ndim
    data = np.take(x.data, index, axis=axis)

    def rule(g):
        grad = np.zeros_like(x.data)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return record_op("take", data, (x,), rule)


def flip(x, axis):
    return record_op("flip", np.flip(x.data, axis=axis), (x,), lambda g: (np.flip(g, axis=axis),))


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce(x, kind, axis=None, keepdims=False):
    """``sum``, ``mean`` or ``max`` over the given axes.

    ``max`` routes the gradient to the first maximal element of each slice.
    """

    axes = _normalize_axes(axis, x.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    out_shape = kept_shape if keepdims else tuple(n for i, n in enumerate(x.shape) if i not in axes)

    if kind in ("sum", "mean"):
        count = int(np.prod([x.shape[a] for a in axes]))
        data = x.data.sum(axis=axes).reshape(out_shape)
        if kind == "mean":
            data = data / count

        def rule(g):
            g = g.reshape(kept_shape)
            if kind == "mean":
                g = g / count
            return (np.broadcast_to(g, x.shape).copy(),)

    elif kind == "max":
        keep = [i for i in range(x.ndim) if i not in axes]
        order = keep + list(axes)
        moved = x.data.transpose(order)
        flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
        idx = flat.argmax(axis=-1)
        data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0].reshape(out_shape)
        inverse = tuple(np.argsort(order))

        def rule(g):
            grad = np.zeros_like(flat)
            np.put_along_axis(grad, idx[..., None], g.reshape(idx.shape)[..., None], axis=-1)
            return (grad.reshape(moved.shape).transpose(inverse),)

    else:
        raise ParameterError(f"unknown reduction {kind!r}")

    return record_op(f"reduce_{kind}", data, (x,), rule)


##############################################################################
# Linear, convolution, pooling, batch normalization


def linear(x, W, b=None):
    """``y = x Wᵀ + b`` over the last axis of ``x``."""

    if W.ndim != 2:
        raise DimensionError(f"linear: W must be 2-D (out, in), got {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"linear: x axis -1 has {x.shape[-1]} features but W axis 1 expects {W.shape[1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"linear: b shape {b.shape} does not match W axis 0 ({W.shape[0]})")

    data = x.data @ W.data.T
    if b is not None:
        data = data + b.data

    def rule(g):
        g2 = g.reshape(-1, W.shape[0])
        gx = g @ W.data if x.requires_grad else None
        gW = g2.T @ x.data.reshape(-1, W.shape[1])
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gW, gb

    inputs = (x, W) if b is None else (x, W, b)
    return record_op("linear", data, inputs, rule)


def _pair(value):
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return int(value), int(value)


def convolution(x, kernel, bias=None, stride=1, padding=0, rank=2):
    """Zero-padded cross-correlation over 1 or 2 spatial axes.

    ``x`` is (batch, c_in, *spatial). ``kernel`` is (c_out, c_in, *k) for a
    static kernel, or (batch, c_out, c_in, *k) for one kernel per sample.
    """

    if rank not in (1, 2):
        raise ParameterError(f"convolution rank must be 1 or 2, got {rank}")
    if x.ndim != rank + 2:
        raise DimensionError(f"convolution rank {rank} needs x with {rank + 2} axes, got {x.shape}")

    per_sample = kernel.ndim == rank + 3
    if not per_sample and kernel.ndim != rank + 2:
        raise DimensionError(f"convolution rank {rank}: bad kernel shape {kernel.shape}")
    if per_sample and kernel.shape[0] != x.shape[0]:
        raise DimensionError(
            f"per-sample kernel axis 0 ({kernel.shape[0]}) != batch axis 0 ({x.shape[0]})")

    c_out, c_in = kernel.shape[-rank - 2], kernel.shape[-rank - 1]
    if c_in != x.shape[1]:
        raise DimensionError(f"convolution: kernel in-channels {c_in} != x axis 1 ({x.shape[1]})")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"convolution: bias shape {bias.shape} != ({c_out},)")

    if rank == 1:
        sh, sw = 1, int(stride)
        ph, pw = 0, int(padding)
        xd = x.data[:, :, None, :]
        kd = kernel.data[..., None, :]
    else:
        sh, sw = _pair(stride)
        ph, pw = _pair(padding)
        xd, kd = x.data, kernel.data

    if min(sh, sw) < 1 or min(ph, pw) < 0:
        raise ParameterError("convolution: stride must be >= 1 and padding >= 0")

    kh, kw = kd.shape[-2:]
    H, W = xd.shape[2], xd.shape[3]
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise DimensionError(
            f"convolution: kernel {(kh, kw)} larger than padded input {(H + 2 * ph, W + 2 * pw)}")

    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    def window(i, j):
        return xp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw]

    out = np.zeros((xd.shape[0], c_out, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            if per_sample:
                out += np.einsum("bchw,boc->bohw", window(i, j), kd[..., i, j])
            else:
                out += np.tensordot(window(i, j), kd[..., i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def rule(g):
        g4 = g[:, :, None, :] if rank == 1 else g
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gk = np.zeros_like(kd)

        for i in range(kh):
            for j in range(kw):
                if per_sample:
                    gk[..., i, j] = np.einsum("bohw,bchw->boc", g4, window(i, j))
                    if gxp is not None:
                        gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += np.einsum(
                            "bohw,boc->bchw", g4, kd[..., i, j])
                else:
                    gk[..., i, j] = np.tensordot(g4, window(i, j), axes=([0, 2, 3], [0, 2, 3]))
                    if gxp is not None:
                        gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += np.tensordot(
                            g4, kd[..., i, j], axes=([1], [0])).transpose(0, 3, 1, 2)

        gx = None
        if gxp is not None:
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
            if rank == 1:
                gx = gx[:, :, 0, :]
        if rank == 1:
            gk = gk[..., 0, :]
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gk, gb

    if rank == 1:
        out = out[:, :, 0, :]

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record_op(f"conv{rank}d", out, inputs, rule)


def pool(x, kind, window=2, stride=None, scope="windowed"):
    """Max or average pooling over the spatial axes of (batch, c, *spatial).

    ``scope="global"`` collapses every channel's spatial extent to one value
    and returns (batch, c).
    """

    if kind not in ("max", "avg"):
        raise ParameterError(f"unknown pool kind {kind!r}")

    if scope == "global":
        return reduce(x, "max" if kind == "max" else "mean", axis=tuple(range(2, x.ndim)))
    if scope != "windowed":
        raise ParameterError(f"unknown pool scope {scope!r}")

    stride = window if stride is None else stride
    if int(window) < 1 or int(stride) < 1:
        raise ParameterError(f"pool window and stride must be >= 1, got {window}, {stride}")

    rank = x.ndim - 2
    if rank == 1:
        xd = x.data[:, :, None, :]
        kh, kw = 1, int(window)
        sh, sw = 1, int(stride)
    elif rank == 2:
        xd = x.data
        kh, kw = _pair(window)
        sh, sw = _pair(stride)
    else:
        raise DimensionError(f"pool needs (batch, c, *spatial) with 1 or 2 spatial axes, got {x.shape}")

    H, W = xd.shape[2], xd.shape[3]
    if kh > H or kw > W:
        raise DimensionError(f"pool window {(kh, kw)} exceeds spatial extent {(H, W)}")

    Ho = (H - kh) // sh + 1
    Wo = (W - kw) // sw + 1
    slices = [xd[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] for i in range(kh) for j in range(kw)]
    stacked = np.stack(slices, axis=-1)

    if kind == "max":
        idx = stacked.argmax(axis=-1)
        out = np.take_along_axis(stacked, idx[..., None], axis=-1)[..., 0]
    else:
        out = stacked.mean(axis=-1)

    def rule(g):
        g4 = g[:, :, None, :] if rank == 1 else g
        grad = np.zeros_like(xd)
        for p in range(kh * kw):
            i, j = divmod(p, kw)
            part = g4 * (idx == p) if kind == "max" else g4 / (kh * kw)
            grad[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += part
        return (grad[:, :, 0, :] if rank == 1 else grad,)

    if rank == 1:
        out = out[:, :, 0, :]
    return record_op(f"{kind}pool", out, (x,), rule)


class BatchNormState:
    """Running mean/variance of one batch-norm layer."""

    def __init__(self, channels, momentum=0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum

    def update(self, mean, var, count):
        unbiased = var * count / (count - 1) if count > 1 else var
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * unbiased


def batchnorm(x, gamma, beta, state, mode="train", eps=1e-5):
    """Per-channel batch normalization of (batch, c, *spatial)."""

    check_mode(mode)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"batchnorm: gamma {gamma.shape} / beta {beta.shape} must both be ({channels},)")

    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, channels) + (1,) * (x.ndim - 2)
    g_b = gamma.data.reshape(bshape)

    if mode == "train":
        if x.shape[0] < 2:
            raise ProtocolError("batchnorm in train mode needs a batch of at least 2")
        count = x.size // channels
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
        state.update(mean, var, count)

        def rule(g):
            gxhat = g * g_b
            gx = (inv_std.reshape(bshape) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean.reshape(bshape)) * inv_std.reshape(bshape)

        def rule(g):
            return g * g_b * inv_std.reshape(bshape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = g_b * xhat + beta.data.reshape(bshape)
    return record_op(f"batchnorm_{mode}", out, (x, gamma, beta), rule)


##############################################################################
# Finite-difference gradient check


def gradient_check(fn, inputs, eps=1e-5):
    """Largest relative gap between analytic and central-difference gradients.

    ``fn(*inputs)`` must return a scalar tensor. The error for each entry is
    ``|analytic - numeric| / max(1, |analytic|)``. Inputs are marked as
    requiring gradients.
    """

    if not 1e-7 <= eps <= 1e-3:
        raise ParameterError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    for tensor in inputs:
        tensor.requires_grad = True
        tensor.grad = None

    with Tape() as tape:
        out = fn(*inputs)
        if out.size != 1:
            raise ProtocolError(f"gradient_check needs a scalar function, got shape {out.shape}")
        tape.backward(out)

    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = 0.0
    with no_grad():
        for tensor, grad in zip(inputs, analytic):
            for idx in np.ndindex(tensor.shape):
                original = tensor.data[idx]
                tensor.data[idx] = original + eps
                plus = fn(*inputs).item()
                tensor.data[idx] = original - eps
                minus = fn(*inputs).item()
                tensor.data[idx] = original

                numeric = (plus - minus) / (2.0 * eps)
                error = abs(grad[idx] - numeric) / max(1.0, abs(grad[idx]))
                worst = max(worst, error)

    return worst
