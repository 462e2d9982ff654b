"""Network layers and the sequential executor used by the trainer.

Layers own their parameter Tensors; the quantized conv carries a codebook
(KernelSubset) and wires its own backward: straight-through into the latent
weights plus scatter-accumulation into the codebook's latent tensor.
"""

from __future__ import annotations

import numpy as np

from subbit import autograd as ag
from subbit import kernels as K
from subbit import quantize as Q
from subbit.autograd import Tensor
from subbit.kernelspace import KernelSubset


class Layer:
    def parameters(self):
        return []

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def set_training(self, flag: bool):
        pass


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k, stride=1, pad=0, rng=None):
        scale = np.sqrt(2.0 / (c_in * k * k))
        rng = rng or np.random.default_rng()
        self.w = Tensor(rng.normal(0.0, scale, size=(c_out, c_in, k, k)),
                        requires_grad=True)
        self.stride, self.pad = stride, pad

    def parameters(self):
        return [self.w]

    def forward(self, x):
        return ag.conv2d(x, self.w, self.stride, self.pad)


class QuantConv2d(Layer):
    """Conv layer with codebook-binarized weights.

    mode "kernel": each (k,k) slice snaps to a codebook kernel.
    mode "vector": 1x1 conv whose 8-channel weight groups snap to codebook
    vectors. `refine` enables the learnable-codebook path (sign-memory update
    before each forward, latent codebook gradient on backward). With
    subset=None the layer binarizes over the full universe (plain sign).
    """

    def __init__(self, c_in, c_out, k, subset: KernelSubset | None, stride=1,
                 pad=0, refine=True, theta=1e-3, binarize_input=False,
                 mode="kernel", group=8, rng=None):
        scale = np.sqrt(2.0 / (c_in * k * k))
        rng = rng or np.random.default_rng()
        self.w = Tensor(np.clip(rng.normal(0.0, scale, size=(c_out, c_in, k, k)),
                                -1.0, 1.0), requires_grad=True)
        self.subset = subset
        self.refine = refine and subset is not None
        if subset is not None:
            self.latent_codebook = Tensor(subset.latent, requires_grad=True)
            self.subset.latent = self.latent_codebook.data  # shared storage
        else:
            self.latent_codebook = None
        self.stride, self.pad = stride, pad
        self.k, self.group, self.mode = k, group, mode
        self.theta = theta
        self.binarize_input = binarize_input
        self.codes = None
        self.scales = None
        self.flip_total = 0
        self.repair_total = 0
        self._step_token = 0
        self._bwd_token = 0
        if mode == "vector" and k != 1:
            raise ValueError("vector mode requires 1x1 kernels")

    def parameters(self):
        return [self.w, self.latent_codebook] if self.refine else [self.w]

    def binarize(self):
        if self.subset is None:
            wbar = Q.binarize_sign(self.w.data)
            bits = (wbar.reshape(self.w.data.shape[0] * self.w.data.shape[1], -1) > 0)
            weights = 1 << np.arange(bits.shape[1] - 1, -1, -1)
            codes = (bits * weights).sum(axis=1).astype(np.int64)
            return wbar, codes.reshape(self.w.data.shape[:2])
        if self.mode == "vector":
            return Q.binarize_vectors(self.w.data, self.subset, self.group)
        return Q.binarize_subset(self.w.data, self.subset)

    def forward(self, x):
        if self.refine:
            self.flip_total += Q.update_sign_memory(self.subset, self.theta)
        wbar, codes = self.binarize()
        self.codes = codes
        self.scales = Q.channel_scales(self.w.data)
        self._step_token += 1
        token = self._step_token

        xin = ag.sign_ste(x) if self.binarize_input else x
        n, _, h, wid = xin.data.shape
        kh = kw = self.k
        out_data = K.conv2d_forward(xin.data, wbar, self.stride, self.pad)
        out_data = out_data * self.scales.reshape(1, -1, 1, 1)

        layer = self

        def bwd(g):
            if layer._bwd_token >= token:
                raise RuntimeError("stale selection: forward/backward mismatch")
            layer._bwd_token = token
            g_conv = g * layer.scales.reshape(1, -1, 1, 1)
            grad_wbar = K.conv2d_backward_weight(g_conv, xin.data, kh, kw,
                                                 layer.stride, layer.pad)
            layer.w.accumulate(Q.ste_mask(grad_wbar, layer.w.data))
            if layer.refine:
                if layer.mode == "vector":
                    rows = grad_wbar.reshape(-1, layer.group)
                else:
                    rows = grad_wbar.reshape(-1, kh * kw)
                layer.latent_codebook.accumulate(
                    Q.accumulate_codebook_grad(codes, rows, layer.subset.size))
            if xin.requires_grad:
                xin.accumulate(K.conv2d_backward_input(g_conv, wbar, h, wid,
                                                       layer.stride, layer.pad))

        out = ag.Tensor(out_data)
        out.requires_grad = True
        out._parents = (xin,)
        out._bwd = bwd
        return out

    def clamp_latent(self):
        np.clip(self.w.data, -1.0, 1.0, out=self.w.data)


class Linear(Layer):
    def __init__(self, d_in, d_out, rng=None):
        rng = rng or np.random.default_rng()
        bound = np.sqrt(1.0 / d_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x):
        return ag.linear(x, self.w, self.b)


class BatchNorm2d(Layer):
    def __init__(self, c, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.momentum, self.eps = momentum, eps
        self.training = True

    def parameters(self):
        return [self.gamma, self.beta]

    def set_training(self, flag):
        self.training = flag

    def forward(self, x):
        if self.training:
            axes = (0, 2, 3)
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
        out_data = self.gamma.data.reshape(1, -1, 1, 1) * xhat + self.beta.data.reshape(1, -1, 1, 1)
        layer, training = self, self.training

        def bwd(g):
            layer.gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
            layer.beta.accumulate(g.sum(axis=(0, 2, 3)))
            if not x.requires_grad:
                return
            gi = g * layer.gamma.data.reshape(1, -1, 1, 1)
            if training:
                invb = inv.reshape(1, -1, 1, 1)
                gmean = gi.mean(axis=(0, 2, 3), keepdims=True)
                gdot = (gi * xhat).mean(axis=(0, 2, 3), keepdims=True)
                x.accumulate(invb * (gi - gmean - xhat * gdot))
            else:
                x.accumulate(gi * inv.reshape(1, -1, 1, 1))

        out = Tensor(out_data)
        out.requires_grad = True
        out._parents = (x, self.gamma, self.beta)
        out._bwd = bwd
        return out


class ReLU(Layer):
    def forward(self, x):
        return ag.relu(x)


class Hardtanh(Layer):
    def forward(self, x):
        return ag.hardtanh(x)


class SignAct(Layer):
    def forward(self, x):
        return ag.sign_ste(x)


class AvgPool2d(Layer):
    def __init__(self, k):
        self.k = k

    def forward(self, x):
        return ag.avg_pool2d(x, self.k)


class MaxPool2d(Layer):
    def __init__(self, k, stride, pad=0):
        self.k, self.stride, self.pad = k, stride, pad

    def forward(self, x):
        return ag.max_pool2d(x, self.k, self.stride, self.pad)


class GlobalAvgPool(Layer):
    def forward(self, x):
        return ag.global_avg_pool(x)


class Flatten(Layer):
    def forward(self, x):
        return ag.flatten(x)


class ResSave(Layer):
    """Marks the start of a residual branch (executor pushes the input)."""


class ResAdd(Layer):
    """Joins a residual branch; optional downsample applies to the saved input."""

    def __init__(self, downsample: list[Layer] | None = None):
        self.downsample = downsample or []

    def parameters(self):
        return [p for l in self.downsample for p in l.parameters()]

    def set_training(self, flag):
        for l in self.downsample:
            l.set_training(flag)


class Network:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def parameters(self):
        return [p for l in self.layers for p in l.parameters()]

    def quant_layers(self) -> list[QuantConv2d]:
        out = [l for l in self.layers if isinstance(l, QuantConv2d)]
        for l in self.layers:
            if isinstance(l, ResAdd):
                out.extend(d for d in l.downsample if isinstance(d, QuantConv2d))
        return out

    def set_training(self, flag: bool):
        for l in self.layers:
            l.set_training(flag)

    def forward(self, x: Tensor) -> Tensor:
        stack = []
        for layer in self.layers:
            if isinstance(layer, ResSave):
                stack.append(x)
            elif isinstance(layer, ResAdd):
                shortcut = stack.pop()
                for sub in layer.downsample:
                    shortcut = sub.forward(shortcut)
                x = ag.add(x, shortcut)
            else:
                x = layer.forward(x)
        return x
