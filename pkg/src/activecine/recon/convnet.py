"""
Minimal numpy CNN: 'same'-padded 2D convolutions with ReLU, forward and
backward passes written out by hand.

Activations use NHWC layout. Kernels are stored (out, in, k, k), i.e.
cross-correlation weights, matching the on-disk weights format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")


@dataclass
class ConvLayer:
    kernel: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ValueError(f"kernel must be (out, in, k, k), got {self.kernel.shape}")
        if self.kernel.shape[2] % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError("bias length must equal the number of output channels")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]


@dataclass
class ConvNetWeights:
    """Ordered conv layers; the last one (C_rec) is linear."""

    layers: list

    def validate(self, in_channels=2, out_channels=2):
        if not self.layers:
            raise ValueError("conv net has no layers")
        if self.layers[0].in_channels != in_channels:
            raise ValueError(f"first layer expects {self.layers[0].in_channels} channels, need {in_channels}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(f"channel mismatch between layers: {a.out_channels} -> {b.in_channels}")
        last = self.layers[-1]
        if out_channels is not None and last.out_channels != out_channels:
            raise ValueError(f"final layer must output {out_channels} channels")
        if last.activation != "linear":
            raise ValueError("final layer must be linear")
        return self

    def arrays(self):
        """Parameter arrays in storage order: kernel_0, bias_0, kernel_1, ..."""
        out = []
        for layer in self.layers:
            out.extend([layer.kernel, layer.bias])
        return out

    def copy(self):
        return ConvNetWeights([ConvLayer(l.kernel.copy(), l.bias.copy(), l.activation) for l in self.layers])


def init_convnet(n_layers, channels, kernel_size=3, in_channels=2, out_channels=2,
                 rng=None, zero_final=True, final_activation="linear"):
    """He-initialised conv stack; the last layer starts at zero by default."""
    if n_layers < 2:
        raise ValueError("a conv regulariser needs at least 2 layers")
    rng = np.random.default_rng(rng)
    widths = [in_channels] + [channels] * (n_layers - 1) + [out_channels]
    layers = []
    for i, (cin, cout) in enumerate(zip(widths, widths[1:])):
        last = i == n_layers - 1
        std = np.sqrt(2.0 / (cin * kernel_size * kernel_size))
        kernel = rng.standard_normal((cout, cin, kernel_size, kernel_size)) * std
        if last and zero_final:
            kernel = np.zeros_like(kernel)
        layers.append(ConvLayer(kernel, np.zeros(cout), final_activation if last else "relu"))
    return ConvNetWeights(layers)


def _im2col(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, H, W, C, k, k)
    n, h, w = x.shape[:3]
    return win.reshape(n * h * w, -1)


def conv_forward(x, layer):
    """Returns (output, cache) for one conv layer plus activation."""
    n, h, w, _ = x.shape
    k = layer.kernel.shape[2]
    cols = _im2col(x, k)
    wmat = layer.kernel.reshape(layer.out_channels, -1)
    out = (cols @ wmat.T + layer.bias).reshape(n, h, w, layer.out_channels)
    active = None
    if layer.activation == "relu":
        active = out > 0
        out = np.where(active, out, 0.0)
    return out, (cols, x.shape, active)


def conv_backward(gout, layer, cache):
    """Returns (grad_input, grad_kernel, grad_bias)."""
    cols, in_shape, active = cache
    if active is not None:
        gout = np.where(active, gout, 0.0)
    n, h, w, c = in_shape
    k = layer.kernel.shape[2]
    p = k // 2
    g2 = gout.reshape(n * h * w, layer.out_channels)
    wmat = layer.kernel.reshape(layer.out_channels, -1)
    gkernel = (g2.T @ cols).reshape(layer.kernel.shape)
    gbias = g2.sum(axis=0)
    gcols = (g2 @ wmat).reshape(n, h, w, c, k, k)
    gxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + h, j:j + w, :] += gcols[..., i, j]
    return gxp[:, p:p + h, p:p + w, :], gkernel, gbias


def net_forward(x, net):
    caches = []
    for layer in net.layers:
        x, cache = conv_forward(x, layer)
        caches.append(cache)
    return x, caches


def net_backward(gout, net, caches):
    """Backpropagate through the whole stack; grads align with net.arrays()."""
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        gout, gk, gb = conv_backward(gout, net.layers[i], caches[i])
        grads[2 * i] = gk
        grads[2 * i + 1] = gb
    return gout, grads


def activation_pattern(caches):
    """ReLU on/off masks, used to detect finite-difference kink crossings."""
    if not caches:
        return []
    return [c[2] for c in caches if c[2] is not None]


def complex_to_channels(x):
    return np.stack([x.real, x.imag], axis=-1)


def channels_to_complex(y):
    return y[..., 0] + 1j * y[..., 1]
