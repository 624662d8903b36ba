"""Differentiable layers with explicit forward/backward passes.

Every layer returns ``(output, cache)`` from :meth:`Layer.forward`;
:meth:`Layer.backward` consumes that cache, accumulates parameter gradients
into ``Parameter.grad`` and returns the input gradient.  Gradients keep
accumulating until :meth:`Layer.zero_grad` is called.
"""

import numpy as np

from . import numerics as nx
from .activation import EasParams, eas_backward, eas_forward, project_omega, project_phi
from .errors import ConfigError, ShapeError


class Parameter:
    """A trainable tensor with its gradient accumulator."""

    def __init__(self, value, project=None):
        self.value = nx.as_tensor(value)
        self.grad = np.zeros_like(self.value)
        self.project = project

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter(shape={self.value.shape})"


class Layer:
    kind = "layer"

    def __init__(self, name=None):
        self.name = name or self.kind
        self.params = {}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def _check_upstream(self, dy, shape):
        if dy.shape != shape:
            raise ShapeError(f"{self.name}.backward", f"upstream {shape}", f"{dy.shape}")

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1D(Layer):
    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel, rng, stride=1, padding="same", name=None):
        super().__init__(name)
        if min(in_channels, out_channels, kernel, stride) < 1:
            raise ConfigError(f"{self.name}: channel, kernel and stride counts must be >= 1")
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        self.stride, self.padding = stride, padding
        fan_in = in_channels * kernel
        self.params["weight"] = Parameter(_uniform_fan_in(rng, (out_channels, in_channels, kernel), fan_in))
        self.params["bias"] = Parameter(_uniform_fan_in(rng, (out_channels,), fan_in))

    def output_length(self, length):
        return nx.conv1d_output_length(length, self.kernel, self.stride, self.padding)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(self.name, f"[B, {self.in_channels}, L]", f"shape {x.shape}")
        w, b = self.params["weight"].value, self.params["bias"].value
        y = nx.conv1d(x, w, b, self.stride, self.padding)
        return y, (x, y.shape)

    def backward(self, cache, dy):
        x, shape = cache
        self._check_upstream(dy, shape)
        w = self.params["weight"]
        dx, dw, db = nx.conv1d_backward(x, w.value, dy, self.stride, self.padding)
        w.grad += dw
        self.params["bias"].grad += db
        return dx


class AvgPool1D(Layer):
    kind = "avgpool1d"

    def __init__(self, k, name=None):
        super().__init__(name)
        if k < 1:
            raise ConfigError(f"{self.name}: pool size must be >= 1")
        self.k = k

    def forward(self, x):
        y = nx.avgpool1d(x, self.k)
        return y, (x.shape, y.shape)

    def backward(self, cache, dy):
        in_shape, out_shape = cache
        self._check_upstream(dy, out_shape)
        return nx.avgpool1d_backward(in_shape, dy, self.k)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng, name=None):
        super().__init__(name)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = Parameter(_uniform_fan_in(rng, (in_features, out_features), in_features))
        self.params["bias"] = Parameter(_uniform_fan_in(rng, (out_features,), in_features))

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(self.name, f"[B, {self.in_features}]", f"shape {x.shape}")
        y = nx.dense(x, self.params["weight"].value, self.params["bias"].value)
        return y, (x, y.shape)

    def backward(self, cache, dy):
        x, shape = cache
        self._check_upstream(dy, shape)
        w = self.params["weight"]
        dx, dw, db = nx.dense_backward(x, w.value, dy)
        w.grad += dw
        self.params["bias"].grad += db
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0), (x > 0).astype(x.dtype)

    def backward(self, cache, dy):
        self._check_upstream(dy, cache.shape)
        return dy * cache


class EAS(Layer):
    """EAS activation with one trainable (omega, phi) pair per channel."""

    kind = "eas"

    def __init__(self, channels, rng, name=None):
        super().__init__(name)
        init = EasParams.init(channels, rng)
        self.channels = channels
        self.params["omega"] = Parameter(init.omega, project=project_omega)
        self.params["phi"] = Parameter(init.phi, project=project_phi)

    @property
    def eas_params(self):
        return EasParams(self.params["omega"].value, self.params["phi"].value)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(self.name, f"[B, {self.channels}, L]", f"shape {x.shape}")
        return eas_forward(x, self.eas_params), x

    def backward(self, cache, dy):
        self._check_upstream(dy, cache.shape)
        dx, domega, dphi = eas_backward(cache, self.eas_params, dy)
        self.params["omega"].grad += domega
        self.params["phi"].grad += dphi
        return dx


class Flatten(Layer):
    """Channel-major flattening ``[B, C, L] -> [B, C*L]``."""

    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        self._check_upstream(dy, (cache[0], int(np.prod(cache[1:]))))
        return dy.reshape(cache)


class Concat(Layer):
    """Channel concatenation of several ``[B, C_i, L]`` tensors."""

    kind = "concat"

    def forward(self, xs):
        if not xs:
            raise ShapeError(self.name, "at least one input", "none")
        ref = xs[0].shape
        for x in xs:
            if x.ndim != 3 or x.shape[0] != ref[0] or x.shape[2] != ref[2]:
                raise ShapeError(self.name, f"[{ref[0]}, C, {ref[2]}]", f"shape {x.shape}")
        y = np.concatenate(xs, axis=1)
        return y, ([x.shape[1] for x in xs], y.shape)

    def backward(self, cache, dy):
        widths, shape = cache
        self._check_upstream(dy, shape)
        cuts = np.cumsum(widths)[:-1]
        return [np.ascontiguousarray(part) for part in np.split(dy, cuts, axis=1)]


class ResidualAdd(Layer):
    kind = "residual_add"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(self.name, f"matching summands {a.shape}", f"{b.shape}")
        return a + b, a.shape

    def backward(self, cache, dy):
        self._check_upstream(dy, cache)
        return dy, dy


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch.

    Returns ``(loss, grad_logits, probs)`` where ``grad_logits`` is
    ``(probs - onehot) / B``.
    """
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError("softmax_xent", "logits [B, K] with K >= 2", f"shape {logits.shape}")
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ShapeError("softmax_xent", f"labels ({B},)", f"{labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ConfigError(f"softmax_xent: labels must lie in [0, {K}), got range "
                          f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    rows = np.arange(B)
    loss = float(-logp[rows, labels].mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= B
    return loss, grad, probs
