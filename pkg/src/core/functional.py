"""
Convolution, pooling and batch-normalization kernels
im2col via numpy stride tricks; every kernel works one image at a time so a
batched call is bitwise identical to looping over its samples
"""

import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import DegenerateBatchError, InvalidShapeError, ShapeMismatchError
from src.core.tensor import TapeNode, Tensor


def same_padding(extent: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """(output extent, low pad, high pad); the extra pad goes on the high side"""
    out = math.ceil(extent / stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return out, total // 2, total - total // 2


def _im2col(image: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """[Hp,Wp,C] padded image -> [ho*wo, kh*kw*C] patches ordered (kh, kw, C)"""
    windows = sliding_window_view(image, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride][:ho, :wo]
    return windows.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * image.shape[2])


def _col2im(dcols: np.ndarray, dimage: np.ndarray, stride: int):
    """Scatter-add [ho,wo,kh,kw,C] patch gradients into a padded image gradient"""
    ho, wo, kh, kw, _ = dcols.shape
    for i in range(kh):
        for j in range(kw):
            dimage[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dcols[:, :, i, j, :]


class Conv2D(TapeNode):
    """Same-padded cross-correlation over [N,H,W,Cin] with a [k,k,Cin,Cout] kernel"""

    op = "conv2d"

    def forward(self, x, kernel, bias, stride=1):
        if x.ndim != 4 or kernel.ndim != 4:
            raise ShapeMismatchError(f"conv2d expects [N,H,W,C] and [k,k,Cin,Cout], got {x.shape}, {kernel.shape}")
        n, h, w, cin = x.shape
        kh, kw, kcin, cout = kernel.shape
        if kcin != cin:
            raise ShapeMismatchError(f"conv2d input has {cin} channels, kernel expects {kcin}")
        if bias.shape != (cout,):
            raise ShapeMismatchError(f"conv2d bias must be [{cout}], got {bias.shape}")

        ho, ph_lo, ph_hi = same_padding(h, kh, stride)
        wo, pw_lo, pw_hi = same_padding(w, kw, stride)
        padded = np.pad(x, ((0, 0), (ph_lo, ph_hi), (pw_lo, pw_hi), (0, 0)))
        wmat = kernel.reshape(kh * kw * cin, cout)

        out = np.empty((n, ho, wo, cout), dtype=np.result_type(x, kernel))
        for i in range(n):
            cols = _im2col(padded[i], kh, kw, stride, ho, wo)
            out[i] = (cols @ wmat + bias).reshape(ho, wo, cout)

        self.padded, self.kernel, self.stride = padded, kernel, stride
        self.crop = (ph_lo, pw_lo, h, w)
        return out

    def backward(self, grad):
        kh, kw, cin, cout = self.kernel.shape
        n, ho, wo, _ = grad.shape
        wmat = self.kernel.reshape(kh * kw * cin, cout)
        dwmat = np.zeros_like(wmat)
        dpadded = np.zeros_like(self.padded)
        for i in range(n):
            cols = _im2col(self.padded[i], kh, kw, self.stride, ho, wo)
            g = grad[i].reshape(ho * wo, cout)
            dwmat += cols.T @ g
            _col2im((g @ wmat.T).reshape(ho, wo, kh, kw, cin), dpadded[i], self.stride)
        top, left, h, w = self.crop
        dx = dpadded[:, top:top + h, left:left + w, :]
        return dx, dwmat.reshape(self.kernel.shape), grad.sum(axis=(0, 1, 2))


class Conv3D(TapeNode):
    """Same-padded cross-correlation over [N,T,H,W,Cin] with a [kt,k,k,Cin,Cout] kernel.

    Each output frame is one matrix product over the kt padded input frames
    it sees, with per-frame patches computed once per sample.
    """

    op = "conv3d"

    def forward(self, x, kernel, bias, stride=(1, 1, 1)):
        if x.ndim != 5 or kernel.ndim != 5:
            raise ShapeMismatchError(f"conv3d expects [N,T,H,W,C] and [kt,k,k,Cin,Cout], got {x.shape}, {kernel.shape}")
        n, t, h, w, cin = x.shape
        kt, kh, kw, kcin, cout = kernel.shape
        if kcin != cin:
            raise ShapeMismatchError(f"conv3d input has {cin} channels, kernel expects {kcin}")
        if bias.shape != (cout,):
            raise ShapeMismatchError(f"conv3d bias must be [{cout}], got {bias.shape}")
        st, sh, sw = stride
        if sh != sw:
            raise ShapeMismatchError("conv3d spatial strides must match")

        to, pt_lo, pt_hi = same_padding(t, kt, st)
        ho, ph_lo, ph_hi = same_padding(h, kh, sh)
        wo, pw_lo, pw_hi = same_padding(w, kw, sw)
        padded = np.pad(x, ((0, 0), (pt_lo, pt_hi), (ph_lo, ph_hi), (pw_lo, pw_hi), (0, 0)))
        wmat = kernel.reshape(kt * kh * kw * cin, cout)

        out = np.empty((n, to, ho, wo, cout), dtype=np.result_type(x, kernel))
        for i in range(n):
            frame_cols = self._frame_cols(padded[i], kh, kw, sh, ho, wo)
            for j in range(to):
                cols = self._gather(frame_cols, j * st, kt)
                out[i, j] = (cols @ wmat + bias).reshape(ho, wo, cout)

        self.padded, self.kernel, self.stride = padded, kernel, stride
        self.crop = (pt_lo, ph_lo, pw_lo, t, h, w)
        return out

    @staticmethod
    def _frame_cols(sample: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
        return np.stack([_im2col(frame, kh, kw, stride, ho, wo) for frame in sample])

    @staticmethod
    def _gather(frame_cols: np.ndarray, start: int, kt: int) -> np.ndarray:
        block = frame_cols[start:start + kt]
        return block.transpose(1, 0, 2).reshape(block.shape[1], -1)

    def backward(self, grad):
        kt, kh, kw, cin, cout = self.kernel.shape
        st, sh, _ = self.stride
        n, to, ho, wo, _ = grad.shape
        wmat = self.kernel.reshape(kt * kh * kw * cin, cout)
        dwmat = np.zeros_like(wmat)
        dpadded = np.zeros_like(self.padded)
        patch = kh * kw * cin
        for i in range(n):
            frame_cols = self._frame_cols(self.padded[i], kh, kw, sh, ho, wo)
            dframe_cols = np.zeros_like(frame_cols)
            for j in range(to):
                g = grad[i, j].reshape(ho * wo, cout)
                dwmat += self._gather(frame_cols, j * st, kt).T @ g
                dcols = (g @ wmat.T).reshape(ho * wo, kt, patch)
                for dt in range(kt):
                    dframe_cols[j * st + dt] += dcols[:, dt]
            for tp in range(dframe_cols.shape[0]):
                _col2im(dframe_cols[tp].reshape(ho, wo, kh, kw, cin), dpadded[i, tp], sh)
        front, top, left, t, h, w = self.crop
        dx = dpadded[:, front:front + t, top:top + h, left:left + w, :]
        return dx, dwmat.reshape(self.kernel.shape), grad.sum(axis=(0, 1, 2, 3))


class MaxPool(TapeNode):
    """Non-overlapping max pool over every axis between batch and channel.

    Gradient routes to the first maximum in row-major window order.
    """

    op = "maxpool"

    def forward(self, x, window: Sequence[int] = (2, 2)):
        spatial = x.shape[1:-1]
        if len(window) != len(spatial):
            raise ShapeMismatchError(f"Pool window {tuple(window)} does not match input {x.shape}")
        for extent, size in zip(spatial, window):
            if extent < size:
                raise InvalidShapeError(f"Extent {extent} smaller than pool window {size}")

        outs = [extent // size for extent, size in zip(spatial, window)]
        crop = (slice(None),) + tuple(slice(0, o * s) for o, s in zip(outs, window)) + (slice(None),)
        split_shape = [x.shape[0]]
        for o, s in zip(outs, window):
            split_shape += [o, s]
        split_shape.append(x.shape[-1])

        d = len(window)
        perm = [0] + [1 + 2 * i for i in range(d)] + [2 * d + 1] + [2 + 2 * i for i in range(d)]
        blocks = x[crop].reshape(split_shape).transpose(perm)
        blocks = blocks.reshape(blocks.shape[:d + 2] + (-1,))
        self.argmax = np.argmax(blocks, axis=-1)[..., None]

        self.in_shape, self.window, self.outs = x.shape, tuple(window), outs
        self.split_shape, self.perm = split_shape, perm
        return np.take_along_axis(blocks, self.argmax, axis=-1)[..., 0]

    def backward(self, grad):
        d = len(self.window)
        blocks = np.zeros(grad.shape + (int(np.prod(self.window)),), dtype=grad.dtype)
        np.put_along_axis(blocks, self.argmax, grad[..., None], axis=-1)
        blocks = blocks.reshape(grad.shape + self.window)
        cropped = blocks.transpose(np.argsort(self.perm)).reshape(
            [self.in_shape[0]] + [o * s for o, s in zip(self.outs, self.window)] + [self.in_shape[-1]])
        dx = np.zeros(self.in_shape, dtype=grad.dtype)
        region = (slice(None),) + tuple(slice(0, o * s) for o, s in zip(self.outs, self.window)) + (slice(None),)
        dx[region] = cropped
        return (dx,)


class BatchNorm(TapeNode):
    """Per-channel normalization over every non-channel axis.

    `stats` is filled with the batch mean/variance in train mode so the caller
    can update its moving statistics.
    """

    op = "batchnorm"

    def forward(self, x, gamma, beta, moving_mean=None, moving_var=None,
                training=True, epsilon=1e-3, stats: Optional[Dict] = None):
        channels = x.shape[-1]
        if gamma.shape != (channels,) or beta.shape != (channels,):
            raise ShapeMismatchError(f"BatchNorm expects {channels} channels, got gamma {gamma.shape}")
        axes = tuple(range(x.ndim - 1))
        self.axes, self.training, self.gamma = axes, training, gamma

        if training:
            count = int(np.prod(x.shape[:-1]))
            if count < 2:
                raise DegenerateBatchError(f"Train-mode BatchNorm needs >= 2 values per channel, got {count}")
            mean = x.mean(axis=axes)
            centered = x - mean
            var = (centered * centered).mean(axis=axes)
            if stats is not None:
                stats["mean"], stats["var"] = mean, var
            self.count = count
        else:
            centered = x - moving_mean.astype(x.dtype, copy=False)
            var = moving_var.astype(x.dtype, copy=False)

        self.inv_std = 1.0 / np.sqrt(var + epsilon)
        self.xhat = centered * self.inv_std
        return gamma * self.xhat + beta

    def backward(self, grad):
        dgamma = (grad * self.xhat).sum(axis=self.axes)
        dbeta = grad.sum(axis=self.axes)
        dxhat = grad * self.gamma
        if self.training:
            m = self.count
            dx = (self.inv_std / m) * (m * dxhat - dxhat.sum(axis=self.axes)
                                       - self.xhat * (dxhat * self.xhat).sum(axis=self.axes))
        else:
            dx = dxhat * self.inv_std
        return dx, dgamma, dbeta


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    return Conv2D.apply(x, kernel, bias, stride=stride)


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor, stride=(1, 1, 1)) -> Tensor:
    return Conv3D.apply(x, kernel, bias, stride=tuple(stride))


def maxpool(x: Tensor, window: Sequence[int]) -> Tensor:
    return MaxPool.apply(x, window=tuple(window))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, moving_mean: np.ndarray, moving_var: np.ndarray,
               training: bool, epsilon: float, stats: Optional[Dict] = None) -> Tensor:
    return BatchNorm.apply(x, gamma, beta, moving_mean=moving_mean, moving_var=moving_var,
                           training=training, epsilon=epsilon, stats=stats)
