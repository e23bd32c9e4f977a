"""Forward and backward passes for every layer kind, on NHWC numpy arrays."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ArchError


class Param:
    """A parameter tensor with its gradient buffer and optimizer state."""

    __slots__ = ('name', 'node', 'value', 'grad', 'trainable', 'state')

    def __init__(self, name, node, value, trainable=True):
        self.name = name
        self.node = node
        self.value = value
        self.grad = np.zeros_like(value)
        self.trainable = trainable
        self.state = {}

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param({self.node}.{self.name}, shape={self.value.shape})"


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _pad_amounts(size, kernel, stride, padding):
    if padding == 'valid':
        return 0, 0, (size - kernel) // stride + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2, out


class Layer:
    kind = None

    def __init__(self, spec, in_shapes, dtype):
        self.spec = spec
        self.name = spec.name
        self.in_shapes = in_shapes
        self.dtype = dtype
        self.params = []
        self.cache = None

    def _param(self, name, value, trainable=True):
        param = Param(name, self.name, value, trainable)
        self.params.append(param)
        return param

    def init(self, rng):
        """Draw initial parameter values; layers without parameters have nothing to do."""

    def share(self, other):
        """Point every parameter of this layer at the matching parameter of ``other``."""
        by_name = {param.name: param for param in other.params}
        for attr, value in list(vars(self).items()):
            if isinstance(value, Param):
                if by_name.get(value.name) is None or by_name[value.name].shape != value.shape:
                    raise ArchError(f"layer {self.name} cannot share weights with {other.name}")
                setattr(self, attr, by_name[value.name])
        self.params = list(other.params)

    def forward(self, inputs, training):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class _Windowed(Layer):
    """Shared padding and windowing for convolutions and pooling."""

    pad_value = 0.0

    def __init__(self, spec, in_shapes, dtype):
        super().__init__(spec, in_shapes, dtype)
        h, w, _ = in_shapes[0]
        k, s = spec.kernel, spec.stride
        self.top, self.bottom, self.out_h = _pad_amounts(h, k, s, spec.padding)
        self.left, self.right, self.out_w = _pad_amounts(w, k, s, spec.padding)

    def _windows(self, x):
        k = self.spec.kernel
        if self.top or self.bottom or self.left or self.right:
            x = np.pad(
                x, ((0, 0), (self.top, self.bottom), (self.left, self.right), (0, 0)),
                constant_values=self.pad_value,
            )
        s = self.spec.stride
        view = sliding_window_view(x, (k, k), axis=(1, 2))
        # (N, Ho, Wo, C, Kh, Kw)
        return x.shape, view[:, ::s, ::s][:, :self.out_h, :self.out_w]

    def _scatter(self, padded_shape, pieces):
        """Sum per-kernel-offset gradients back onto the padded input, then crop the padding."""
        s = self.spec.stride
        k = self.spec.kernel
        dx = np.zeros(padded_shape, dtype=self.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * self.out_h:s, j:j + s * self.out_w:s, :] += pieces(i, j)
        h, w = padded_shape[1], padded_shape[2]
        return dx[:, self.top:h - self.bottom, self.left:w - self.right, :]


class Conv2D(_Windowed):
    kind = 'conv2d'

    def __init__(self, spec, in_shapes, dtype):
        super().__init__(spec, in_shapes, dtype)
        k, cin = spec.kernel, in_shapes[0][2]
        self.weight = self._param('kernel', np.zeros((k, k, cin, spec.filters), dtype=dtype))
        self.bias = self._param('bias', np.zeros(spec.filters, dtype=dtype)) if spec.bias else None

    def init(self, rng):
        k, _, cin, cout = self.weight.shape
        self.weight.value[...] = _he_uniform(rng, self.weight.shape, k * k * cin, self.dtype)

    def forward(self, inputs, training):
        padded_shape, windows = self._windows(inputs[0])
        out = np.tensordot(windows, self.weight.value, axes=([3, 4, 5], [2, 0, 1]))
        if self.bias is not None:
            out += self.bias.value
        self.cache = padded_shape, windows
        return out

    def backward(self, grad):
        padded_shape, windows = self.cache
        dw = np.tensordot(windows, grad, axes=([0, 1, 2], [0, 1, 2]))
        self.weight.grad += dw.transpose(1, 2, 0, 3)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 1, 2))
        w = self.weight.value
        return [self._scatter(padded_shape, lambda i, j: np.tensordot(grad, w[i, j], axes=([3], [1])))]


class DepthwiseConv2D(_Windowed):
    kind = 'depthwise-conv2d'

    def __init__(self, spec, in_shapes, dtype):
        super().__init__(spec, in_shapes, dtype)
        k, c = spec.kernel, in_shapes[0][2]
        self.weight = self._param('depthwise_kernel', np.zeros((k, k, c), dtype=dtype))
        self.bias = self._param('bias', np.zeros(c, dtype=dtype)) if spec.bias else None

    def init(self, rng):
        k = self.weight.shape[0]
        self.weight.value[...] = _he_uniform(rng, self.weight.shape, k * k, self.dtype)

    def forward(self, inputs, training):
        padded_shape, windows = self._windows(inputs[0])
        out = np.einsum('nhwckl,klc->nhwc', windows, self.weight.value, optimize=True)
        if self.bias is not None:
            out += self.bias.value
        self.cache = padded_shape, windows
        return out

    def backward(self, grad):
        padded_shape, windows = self.cache
        self.weight.grad += np.einsum('nhwckl,nhwc->klc', windows, grad, optimize=True)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 1, 2))
        w = self.weight.value
        return [self._scatter(padded_shape, lambda i, j: grad * w[i, j])]


class Dense(Layer):
    kind = 'dense'

    def __init__(self, spec, in_shapes, dtype):
        super().__init__(spec, in_shapes, dtype)
        fan_in = in_shapes[0][0]
        self.weight = self._param('kernel', np.zeros((fan_in, spec.filters), dtype=dtype))
        self.bias = self._param('bias', np.zeros(spec.filters, dtype=dtype)) if spec.bias else None

    def init(self, rng):
        self.weight.value[...] = _he_uniform(rng, self.weight.shape, self.weight.shape[0], self.dtype)

    def forward(self, inputs, training):
        x = inputs[0]
        self.cache = x
        out = x @ self.weight.value
        if self.bias is not None:
            out += self.bias.value
        return out

    def backward(self, grad):
        x = self.cache
        self.weight.grad += x.T @ grad
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=0)
        return [grad @ self.weight.value.T]


class BatchNorm(Layer):
    """Normalizes over every axis but the channel axis; keeps running statistics for inference."""

    kind = 'batch-norm'

    def __init__(self, spec, in_shapes, dtype):
        super().__init__(spec, in_shapes, dtype)
        c = in_shapes[0][-1]
        self.gamma = self._param('gamma', np.ones(c, dtype=dtype))
        self.beta = self._param('beta', np.zeros(c, dtype=dtype))
        self.moving_mean = self._param('moving_mean', np.zeros(c, dtype=dtype), trainable=False)
        self.moving_variance = self._param('moving_variance', np.ones(c, dtype=dtype), trainable=False)

    def forward(self, inputs, training):
        x = inputs[0]
        axes = tuple(range(x.ndim - 1))
        eps = self.spec.epsilon
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.spec.momentum
            self.moving_mean.value[...] = m * self.moving_mean.value + (1 - m) * mean
            self.moving_variance.value[...] = m * self.moving_variance.value + (1 - m) * var
        else:
            mean = self.moving_mean.value
            var = self.moving_variance.value
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean) * inv_std
        self.cache = training, x_hat, inv_std, axes
        return self.gamma.value * x_hat + self.beta.value

    def backward(self, grad):
        training, x_hat, inv_std, axes = self.cache
        self.gamma.grad += (grad * x_hat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        d_hat = grad * self.gamma.value
        if not training:
            return [d_hat * inv_std]
        m = x_hat.size // x_hat.shape[-1]
        dx = inv_std / m * (m * d_hat - d_hat.sum(axis=axes) - x_hat * (d_hat * x_hat).sum(axis=axes))
        return [dx]


class ReLU(Layer):
    kind = 'relu'

    def forward(self, inputs, training):
        x = inputs[0]
        cap = self.spec.cap
        if cap:
            self.cache = (x > 0) & (x < cap)
            return np.clip(x, 0, cap)
        self.cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return [grad * self.cache]


class MaxPool(_Windowed):
    kind = 'max-pool'
    pad_value = -np.inf

    def forward(self, inputs, training):
        padded_shape, windows = self._windows(inputs[0])
        k = self.spec.kernel
        flat = windows.reshape(windows.shape[:4] + (k * k,))
        arg = flat.argmax(axis=-1)
        self.cache = padded_shape, arg
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        padded_shape, arg = self.cache
        k = self.spec.kernel
        return [self._scatter(padded_shape, lambda i, j: grad * (arg == i * k + j))]


class AvgPool(_Windowed):
    """Average over the window, counting only positions inside the unpadded input."""

    kind = 'avg-pool'

    def __init__(self, spec, in_shapes, dtype):
        super().__init__(spec, in_shapes, dtype)
        h, w, _ = in_shapes[0]
        ones = np.ones((1, h, w, 1), dtype=dtype)
        _, windows = self._windows(ones)
        self.counts = windows.sum(axis=(4, 5))

    def forward(self, inputs, training):
        padded_shape, windows = self._windows(inputs[0])
        self.cache = padded_shape
        return windows.sum(axis=(4, 5)) / self.counts

    def backward(self, grad):
        padded_shape = self.cache
        scaled = grad / self.counts
        # padded positions receive gradient too, but they are cropped away
        return [self._scatter(padded_shape, lambda i, j: scaled)]


class GlobalAvgPool(Layer):
    kind = 'global-avg-pool'

    def forward(self, inputs, training):
        x = inputs[0]
        self.cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad):
        n, h, w, c = self.cache
        return [np.broadcast_to(grad[:, None, None, :] / (h * w), (n, h, w, c)).copy()]


class Flatten(Layer):
    kind = 'flatten'

    def forward(self, inputs, training):
        x = inputs[0]
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return [grad.reshape(self.cache)]


class Concat(Layer):
    kind = 'concat'

    def forward(self, inputs, training):
        self.cache = np.cumsum([x.shape[-1] for x in inputs])[:-1]
        return np.concatenate(inputs, axis=-1)

    def backward(self, grad):
        return np.split(grad, self.cache, axis=-1)


class ResidualAdd(Layer):
    kind = 'residual-add'

    def forward(self, inputs, training):
        return inputs[0] + inputs[1]

    def backward(self, grad):
        return [grad, grad]


class Softmax(Layer):
    kind = 'softmax'

    def forward(self, inputs, training):
        x = inputs[0]
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        self.cache = p
        return p

    def backward(self, grad):
        p = self.cache
        return [p * (grad - (grad * p).sum(axis=-1, keepdims=True))]


LAYERS = {cls.kind: cls for cls in (
    Conv2D, DepthwiseConv2D, Dense, BatchNorm, ReLU, MaxPool, AvgPool,
    GlobalAvgPool, Flatten, Concat, ResidualAdd, Softmax,
)}


def build_layer(spec, in_shapes, dtype):
    try:
        cls = LAYERS[spec.kind]
    except KeyError:
        raise ArchError(f"unknown layer kind {spec.kind!r} in layer {spec.name}") from None
    return cls(spec, in_shapes, np.dtype(dtype))
