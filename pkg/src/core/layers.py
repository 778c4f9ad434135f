"""
Neural-network layers for SlumpVision
Parameters live on the layers; forward passes are built from traced primitives
"""

from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core import functional as F
from src.core.errors import ShapeMismatchError
from src.core.rng import RngStream
from src.core.tensor import Init, Tensor, create, resolve_dtype, stack

GATE_ORDER = ("input", "forget", "cell", "output")


class Parameter(Tensor):
    """Trainable tensor; `decay` marks it for decoupled weight decay"""

    def __init__(self, data, decay: bool = False):
        super().__init__(data, requires_grad=True)
        self.decay = decay


def _generator(rng: Union[RngStream, np.random.Generator, None]) -> Optional[np.random.Generator]:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


class Layer:
    """Base class: named parameters, buffers and child layers plus a train/infer mode"""

    def __init__(self):
        self._params: Dict[str, Parameter] = {}
        self._buffers: Dict[str, Tensor] = {}
        self._children: Dict[str, "Layer"] = {}
        self.training = True

    def add_param(self, name: str, tensor: Tensor, decay: bool = False) -> Parameter:
        param = Parameter(tensor.data, decay=decay)
        self._params[name] = param
        return param

    def add_buffer(self, name: str, tensor: Tensor) -> Tensor:
        self._buffers[name] = tensor
        return tensor

    def add_child(self, name: str, layer: "Layer") -> "Layer":
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._params.items():
            yield prefix + name, param
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix + child_name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, buffer in self._buffers.items():
            yield prefix + name, buffer
        for child_name, child in self._children.items():
            yield from child.named_buffers(prefix + child_name + ".")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def named_layers(self, prefix: str = "") -> Iterator[Tuple[str, "Layer"]]:
        for name, child in self._children.items():
            yield prefix + name, child
            yield from child.named_layers(prefix + name + ".")

    def train(self) -> "Layer":
        return self._set_mode(True)

    def eval(self) -> "Layer":
        return self._set_mode(False)

    def _set_mode(self, training: bool) -> "Layer":
        self.training = training
        for child in self._children.values():
            child._set_mode(training)
        return self

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def to(self, dtype) -> "Layer":
        """Cast every parameter and buffer in place (f64 for gradient checks)"""
        np_dtype = resolve_dtype(dtype)
        for _, param in self.named_parameters():
            param.data = param.data.astype(np_dtype)
            param.grad = None
        for _, buffer in self.named_buffers():
            buffer.data = buffer.data.astype(np_dtype)
        return self

    def param_count(self) -> int:
        return sum(param.size for param in self.parameters())

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, **kwargs) -> Tensor:
        return self.forward(x, **kwargs)


class Conv2DLayer(Layer):
    """Same-padded 2D convolution over [N,H,W,Cin]"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 rng=None, dtype="f32"):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeMismatchError(f"Kernel size must be odd, got {kernel_size}")
        gen = _generator(rng)
        fan_in = kernel_size * kernel_size * in_channels
        self.stride = stride
        self.kernel = self.add_param(
            "kernel", create([kernel_size, kernel_size, in_channels, out_channels], dtype,
                             Init.he_uniform(fan_in), gen), decay=True)
        self.bias = self.add_param("bias", create([out_channels], dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.kernel, self.bias, stride=self.stride)


class Conv3DLayer(Layer):
    """Same-padded 3D convolution over [N,T,H,W,Cin]"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: Sequence[int] = (3, 3, 3),
                 stride: Sequence[int] = (1, 1, 1), rng=None, dtype="f32"):
        super().__init__()
        kt, kh, kw = kernel_size
        if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatchError(f"Kernel extents must be odd, got {tuple(kernel_size)}")
        gen = _generator(rng)
        self.stride = tuple(stride)
        self.kernel = self.add_param(
            "kernel", create([kt, kh, kw, in_channels, out_channels], dtype,
                             Init.he_uniform(kt * kh * kw * in_channels), gen), decay=True)
        self.bias = self.add_param("bias", create([out_channels], dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.kernel, self.bias, stride=self.stride)


class ConvLSTM2DLayer(Layer):
    """Convolutional LSTM without peepholes; gates packed as (i, f, g, o).

    gates = conv(x_t; input_kernel) + bias + conv(h_{t-1}; recurrent_kernel)
    c_t = f * c_{t-1} + i * g,  h_t = o * tanh(c_t)
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3,
                 return_sequences: bool = True, rng=None, dtype="f32"):
        super().__init__()
        gen = _generator(rng)
        k, ch = kernel_size, hidden_channels
        self.hidden_channels = ch
        self.return_sequences = return_sequences
        self.input_kernel = self.add_param(
            "input_kernel", create([k, k, in_channels, 4 * ch], dtype, Init.he_uniform(k * k * in_channels), gen),
            decay=True)
        self.recurrent_kernel = self.add_param(
            "recurrent_kernel", create([k, k, ch, 4 * ch], dtype, Init.he_uniform(k * k * ch), gen), decay=True)
        self.bias = self.add_param("bias", create([4 * ch], dtype))

    def forward(self, x: Tensor, initial_state: Optional[Tuple[Tensor, Tensor]] = None) -> Tensor:
        if x.ndim != 5:
            raise ShapeMismatchError(f"ConvLSTM2D expects [N,T,H,W,C], got {x.shape}")
        n, t, h, w, _ = x.shape
        ch = self.hidden_channels
        # input-to-state convolutions do not depend on the recurrence
        projected = time_distributed(x, lambda frames: F.conv2d(frames, self.input_kernel, self.bias))
        no_bias = Tensor(np.zeros(4 * ch, dtype=x.dtype))

        hidden, cell = initial_state if initial_state is not None else (None, None)
        outputs = []
        for step in range(t):
            gates = projected[:, step]
            if hidden is not None:
                gates = gates + F.conv2d(hidden, self.recurrent_kernel, no_bias)
            i = gates[..., 0:ch].sigmoid()
            f = gates[..., ch:2 * ch].sigmoid()
            g = gates[..., 2 * ch:3 * ch].tanh()
            o = gates[..., 3 * ch:4 * ch].sigmoid()
            cell = i * g if cell is None else f * cell + i * g
            hidden = o * cell.tanh()
            outputs.append(hidden)
        if self.return_sequences:
            return stack(outputs, axis=1)
        return hidden


class BatchNormLayer(Layer):
    """Batch normalization over the trailing channel axis"""

    def __init__(self, channels: int, momentum: float = 0.99, epsilon: float = 1e-3, dtype="f32"):
        super().__init__()
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = self.add_param("gamma", create([channels], dtype, Init.ones()))
        self.beta = self.add_param("beta", create([channels], dtype))
        self.moving_mean = self.add_buffer("moving_mean", create([channels], dtype))
        self.moving_var = self.add_buffer("moving_var", create([channels], dtype, Init.ones()))

    def forward(self, x: Tensor) -> Tensor:
        stats: Dict[str, np.ndarray] = {}
        out = F.batch_norm(x, self.gamma, self.beta, self.moving_mean.data, self.moving_var.data,
                           training=self.training, epsilon=self.epsilon, stats=stats)
        if self.training:
            keep = self.momentum
            dtype = self.moving_mean.dtype
            self.moving_mean.data = (keep * self.moving_mean.data + (1.0 - keep) * stats["mean"]).astype(dtype)
            self.moving_var.data = (keep * self.moving_var.data + (1.0 - keep) * stats["var"]).astype(dtype)
        return out


class ReLU(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return x.relu()


class MaxPool2DLayer(Layer):
    def __init__(self, window: int = 2):
        super().__init__()
        self.window = window

    def forward(self, x: Tensor) -> Tensor:
        return F.maxpool(x, (self.window, self.window))


class MaxPool3DLayer(Layer):
    """2x2x2 pool over (T,H,W); the temporal window shrinks to T when T < 2"""

    def __init__(self, window: Sequence[int] = (2, 2, 2), clip_temporal: bool = True):
        super().__init__()
        self.window = tuple(window)
        self.clip_temporal = clip_temporal

    def forward(self, x: Tensor) -> Tensor:
        wt, wh, ww = self.window
        if self.clip_temporal:
            wt = min(wt, x.shape[1])
        return F.maxpool(x, (wt, wh, ww))


class TimeDistributed(Layer):
    """Apply a rank-4 layer to every frame of [N,T,...] with shared weights"""

    def __init__(self, inner: Layer):
        super().__init__()
        self.inner = self.add_child("inner", inner)

    def forward(self, x: Tensor) -> Tensor:
        return time_distributed(x, self.inner)


class GlobalAvgPool(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return global_avg_pool(x)


class Dense(Layer):
    """Affine map x @ W + b"""

    def __init__(self, in_features: int, out_features: int, rng=None, dtype="f32"):
        super().__init__()
        gen = _generator(rng)
        self.weights = self.add_param(
            "weights", create([in_features, out_features], dtype,
                              Init.glorot_uniform(in_features, out_features), gen), decay=True)
        self.bias = self.add_param("bias", create([out_features], dtype))

    def forward(self, x: Tensor) -> Tensor:
        return dense(x, self.weights, self.bias)


class Sequential(Layer):
    def __init__(self, layers: Sequence[Tuple[str, Layer]]):
        super().__init__()
        for name, layer in layers:
            self.add_child(name, layer)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self._children.values():
            x = layer(x)
        return x


def conv2d_forward(x: Tensor, layer: Conv2DLayer) -> Tensor:
    return layer(x)


def conv3d_forward(x: Tensor, layer: Conv3DLayer) -> Tensor:
    return layer(x)


def conv_lstm2d_forward(x: Tensor, layer: ConvLSTM2DLayer, return_sequences: bool = True) -> Tensor:
    previous = layer.return_sequences
    layer.return_sequences = return_sequences
    try:
        return layer(x)
    finally:
        layer.return_sequences = previous


def batchnorm_forward(x: Tensor, layer: BatchNormLayer) -> Tensor:
    return layer(x)


def time_distributed(x: Tensor, inner) -> Tensor:
    """Fold (N,T) into the batch axis, apply `inner`, unfold"""
    if x.ndim < 3:
        raise ShapeMismatchError(f"time_distributed expects [N,T,...], got {x.shape}")
    n, t = x.shape[:2]
    folded = inner(x.reshape((n * t,) + x.shape[2:]))
    return folded.reshape((n, t) + folded.shape[1:])


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    return F.maxpool(x, (window, window))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over every axis except batch and channel"""
    if x.ndim < 3:
        raise ShapeMismatchError(f"global_avg_pool expects [N,...,C], got {x.shape}")
    return x.mean(axes=tuple(range(1, x.ndim - 1)))


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeMismatchError(f"dense expects [N,F] x [F,O], got {x.shape} x {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeMismatchError(f"dense bias must be [{weights.shape[1]}], got {bias.shape}")
    return x @ weights + bias


def param_count(layer: Layer) -> int:
    """Trainable total: kernels, biases, gamma and beta; buffers excluded"""
    return layer.param_count()
