"""Neural network primitives with explicit forward/backward passes.

Everything is plain numpy. Activations are kept channels-last (B, H, W, C)
so convolutions run as a single GEMM over im2col patches without layout
shuffles: patches flatten to (C, K, K) order and weights are stored as
(C_in, K, K, C_out). The transposed convolution zero-stuffs its input and
runs a stride-1 convolution with the spatially flipped kernel, which makes
its gradient a plain convolution again. Layers cache what backward needs on
the instance, so a layer serves one forward/backward pair at a time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int):
    """Patch matrix (B*OH*OW, C*K*K) for channels-last input (B, H, W, C)."""
    b, h, w, c = x.shape
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    # win: (B, OH, OW, C, K, K); the reshape is the one gather copy
    return win.reshape(b * oh * ow, c * kernel * kernel), (oh, ow)


def _col2im(dcols: np.ndarray, x_shape, kernel: int, stride: int, pad: int):
    """Scatter-add patch gradients back onto the (padded) input grid."""
    b, h, w, c = x_shape
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    dxp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    d6 = dcols.reshape(b, oh, ow, c, kernel, kernel)
    for ki in range(kernel):
        for kj in range(kernel):
            dxp[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :] += d6[
                :, :, :, :, ki, kj
            ]
    if pad:
        return dxp[:, pad : pad + h, pad : pad + w, :]
    return dxp


class Conv2d:
    """Cross-correlation with square kernel, weight (in_ch, K, K, out_ch).

    ``input_grad=False`` skips the expensive dx path in backward; use it for
    the first layer of a network, whose input gradient nobody consumes.
    """

    def __init__(self, name, in_ch, out_ch, kernel, stride=1, padding=0, *,
                 rng: np.random.Generator, dtype=np.float32, input_grad=True):
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.input_grad = input_grad
        fan_in = in_ch * kernel * kernel
        self.w = (rng.standard_normal((in_ch, kernel, kernel, out_ch))
                  * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[3] != self.in_ch:
            raise ValueError(f"{self.name}: expected {self.in_ch} channels, got {x.shape[3]}")
        cols, (oh, ow) = _im2col(x, self.kernel, self.stride, self.padding)
        y = cols @ self.w.reshape(-1, self.out_ch)
        y += self.b
        self._cache = (x.shape, cols)
        return y.reshape(x.shape[0], oh, ow, self.out_ch)

    def backward(self, dy: np.ndarray) -> np.ndarray | None:
        x_shape, cols = self._cache
        dy_mat = dy.reshape(-1, self.out_ch)
        self.db = dy_mat.sum(axis=0)
        self.dw = (cols.T @ dy_mat).reshape(self.w.shape)
        if not self.input_grad:
            return None
        dcols = dy_mat @ self.w.reshape(-1, self.out_ch).T
        return _col2im(dcols, x_shape, self.kernel, self.stride, self.padding)

    def params(self):
        return ((f"{self.name}.w", self.w), (f"{self.name}.b", self.b))

    def grads(self):
        return ((f"{self.name}.w", self.dw), (f"{self.name}.b", self.db))


class ConvTranspose2d:
    """Fractionally strided convolution, weight (in_ch, K, K, out_ch).

    Forward zero-stuffs the input (stride-1 zeros between pixels plus
    ``output_padding`` rows/cols at the bottom-right) and correlates it with
    the spatially flipped kernel at stride 1 and padding K-1-padding. With
    kernel 3, stride 2, padding 1, output_padding 1 this exactly doubles the
    spatial size.
    """

    def __init__(self, name, in_ch, out_ch, kernel, stride=2, padding=1,
                 output_padding=1, *, rng: np.random.Generator, dtype=np.float32):
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        self.padding, self.output_padding = padding, output_padding
        fan_in = in_ch * kernel * kernel
        self.w = (rng.standard_normal((in_ch, kernel, kernel, out_ch))
                  * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def _stuff(self, x: np.ndarray) -> np.ndarray:
        b, h, w, c = x.shape
        sh = (h - 1) * self.stride + 1 + self.output_padding
        sw = (w - 1) * self.stride + 1 + self.output_padding
        stuffed = np.zeros((b, sh, sw, c), dtype=x.dtype)
        stuffed[:, :: self.stride, :: self.stride, :][:, :h, :w, :] = x
        return stuffed

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[3] != self.in_ch:
            raise ValueError(f"{self.name}: expected {self.in_ch} channels, got {x.shape[3]}")
        stuffed = self._stuff(x)
        pad_eq = self.kernel - 1 - self.padding
        cols, (oh, ow) = _im2col(stuffed, self.kernel, 1, pad_eq)
        w_eq = np.flip(self.w, axis=(1, 2)).reshape(-1, self.out_ch)
        y = cols @ w_eq
        y += self.b
        self._cache = (x.shape, stuffed.shape, cols)
        return y.reshape(x.shape[0], oh, ow, self.out_ch)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x_shape, stuffed_shape, cols = self._cache
        pad_eq = self.kernel - 1 - self.padding
        dy_mat = dy.reshape(-1, self.out_ch)
        self.db = dy_mat.sum(axis=0)
        dw_eq = (cols.T @ dy_mat).reshape(self.w.shape)
        self.dw = np.flip(dw_eq, axis=(1, 2)).copy()
        dcols = dy_mat @ np.flip(self.w, axis=(1, 2)).reshape(-1, self.out_ch).T
        dstuffed = _col2im(dcols, stuffed_shape, self.kernel, 1, pad_eq)
        h, w = x_shape[1], x_shape[2]
        return dstuffed[:, :: self.stride, :: self.stride, :][:, :h, :w, :].copy()

    def params(self):
        return ((f"{self.name}.w", self.w), (f"{self.name}.b", self.b))

    def grads(self):
        return ((f"{self.name}.w", self.dw), (f"{self.name}.b", self.db))


class LeakyReLU:
    def __init__(self, alpha=0.2):
        self.alpha = alpha
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x >= 0
        return np.where(self._mask, x, x * np.asarray(self.alpha, dtype=x.dtype))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dy, dy * np.asarray(self.alpha, dtype=dy.dtype))


class Dropout:
    """Inverted dropout; identity when no rng is supplied (inference)."""

    def __init__(self, rate=0.1):
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
        if rng is None or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        kept = rng.random(x.shape, dtype=np.float32) < keep
        self._mask = np.multiply(kept, 1.0 / keep, dtype=x.dtype)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dy
        return dy * self._mask


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)
