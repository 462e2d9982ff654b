"""Deployment-side execution of packed models.

Two interchangeable convolution paths for binarized activations:

  - direct: per output channel, one bit-packed dot over the whole receptive
    field (xnor + popcount against packed weight words);
  - shared: per input-channel activation slice, one small dot per codebook
    member stored in a 2^tau-entry table, then fetched by weight index for
    every output channel.

Both produce identical integer maps; the shared path only pays off while
2^tau < c_out, so anything else falls back to the direct path. Layers whose
activations stay real use the same sharing structure in float arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from subbit import kernels as K
from subbit.arch import ArchitectureSpec
from subbit.packfmt import PackedLayer, PackedModel


@dataclass
class ConvStats:
    path: str       # direct | shared
    pre_dots: int   # k*k-wide dot products computed


def pack_member_words(members: np.ndarray) -> np.ndarray:
    """Pack (J, n) +-1 patterns into one uint64 lane each, bit t = element t."""
    n = members.shape[1]
    weights = (np.uint64(1) << np.arange(n, dtype=np.uint64))
    return ((members > 0).astype(np.uint64) * weights[None, :]).sum(axis=1,
                                                                    dtype=np.uint64)


def pack_weight_words(wbar: np.ndarray) -> np.ndarray:
    """Pack (O, C, k, k) +-1 weights into patch-ordered uint64 words."""
    o = wbar.shape[0]
    bits = (wbar.reshape(o, -1) > 0).astype(np.uint8)
    nbits = bits.shape[1]
    nwords = (nbits + 63) // 64
    padded = np.zeros((o, nwords * 64), dtype=np.uint8)
    padded[:, :nbits] = bits
    packed = np.packbits(padded.reshape(o, nwords, 8, 8), axis=-1, bitorder="little")
    return packed.reshape(o, nwords * 8).view("<u8").reshape(o, nwords)


def expand_weights(layer: PackedLayer) -> np.ndarray:
    """Materialize the +-1 weight tensor from codebook + index stream."""
    flat = layer.members[layer.codes.reshape(-1)]
    if layer.mode == "vector":
        return flat.reshape(layer.c_out, layer.c_in, 1, 1)
    return flat.reshape(layer.c_out, layer.c_in, layer.k, layer.k)


def conv_xnor_popcount(act: np.ndarray, layer: PackedLayer) -> tuple[np.ndarray, ConvStats]:
    """Direct bit path on a +-1 (C,H,W) activation map; integer output."""
    wbar = expand_weights(layer)
    patches, valid = K.pack_patch_bits(act.astype(np.int8), layer.k,
                                       layer.stride, layer.pad)
    wwords = pack_weight_words(wbar)
    out = K.xnor_gemm(patches, valid, wwords)
    h, w = act.shape[1], act.shape[2]
    ho = (h + 2 * layer.pad - layer.k) // layer.stride + 1
    wo = (w + 2 * layer.pad - layer.k) // layer.stride + 1
    stats = ConvStats("direct", ho * wo * layer.c_out * layer.c_in)
    return out.reshape(layer.c_out, ho, wo), stats


def conv_shared(act: np.ndarray, layer: PackedLayer) -> tuple[np.ndarray, ConvStats]:
    """Computation-sharing bit path; bit-exact match of conv_xnor_popcount."""
    size = 1 << layer.tau
    if size >= layer.c_out:
        return conv_xnor_popcount(act, layer)
    member_words = pack_member_words(layer.members)
    if layer.mode == "vector":
        slices, vmask = K.pack_group_slices(act.astype(np.int8), 8, layer.stride)
        n_slices_per_pix = layer.c_in // 8
    else:
        slices, vmask = K.pack_channel_slices(act.astype(np.int8), layer.k,
                                              layer.stride, layer.pad)
        n_slices_per_pix = layer.c_in
    out = K.shared_gather(slices, vmask, member_words,
                          np.ascontiguousarray(layer.codes.astype(np.int64)))
    h, w = act.shape[1], act.shape[2]
    ho = (h + 2 * layer.pad - layer.k) // layer.stride + 1
    wo = (w + 2 * layer.pad - layer.k) // layer.stride + 1
    stats = ConvStats("shared", ho * wo * n_slices_per_pix * size)
    return out.reshape(layer.c_out, ho, wo), stats


def conv_shared_real(act: np.ndarray, layer: PackedLayer) -> np.ndarray:
    """Sharing path for real-valued activations (weight-only binarization)."""
    c, h, w = act.shape
    k, stride, pad = layer.k, layer.stride, layer.pad
    ap = np.pad(act, ((0, 0), (pad, pad), (pad, pad))) if pad else act
    win = sliding_window_view(ap, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    if layer.mode == "vector":
        sl = win.reshape(c // 8, 8, ho * wo).transpose(2, 0, 1)
    else:
        sl = win.reshape(c, ho * wo, k * k).transpose(1, 0, 2)
    table = np.einsum("pcn,jn->pcj", sl, layer.members.astype(np.float64))
    gathered = table[:, np.arange(sl.shape[1])[None, :], layer.codes.astype(np.int64)]
    return gathered.sum(axis=2).T.reshape(layer.c_out, ho, wo)


class EngineError(ValueError):
    pass


class _Params:
    def __init__(self, model: PackedModel):
        self.table = model.fp_params

    def get(self, name):
        if name not in self.table:
            raise EngineError(f"corrupt model: missing parameter {name}")
        return self.table[name].astype(np.float64)


def _bn_eval(x, params: _Params, prefix: str, eps=1e-5):
    gamma, beta = params.get(f"{prefix}.gamma"), params.get(f"{prefix}.beta")
    mean, var = params.get(f"{prefix}.mean"), params.get(f"{prefix}.var")
    inv = 1.0 / np.sqrt(var + eps)
    return (x - mean[:, None, None]) * inv[:, None, None] * gamma[:, None, None] \
        + beta[:, None, None]


_ACTS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "hardtanh": lambda x: np.clip(x, -1.0, 1.0),
    "sign": lambda x: np.where(x >= 0, 1.0, -1.0),
}


def run_model(model: PackedModel, batch: np.ndarray,
              collect_stats: bool = False):
    """Forward a (N, C, H, W) float batch through a packed model.

    Returns logits (N, classes); with collect_stats also returns the per
    quantized-layer ConvStats of the first image.
    """
    arch = model.arch()
    if batch.ndim != 4 or batch.shape[1] != arch.in_channels \
            or batch.shape[2] != arch.in_size or batch.shape[3] != arch.in_size:
        raise EngineError(f"input shape {batch.shape} does not match model "
                          f"(N,{arch.in_channels},{arch.in_size},{arch.in_size})")
    params = _Params(model)
    quant_by_index = {l.conv_index: l for l in model.layers}
    logits = []
    stats_out: list[ConvStats] = []
    for img_i in range(batch.shape[0]):
        x = batch[img_i].astype(np.float64)
        counters = {"conv": 0, "bn": 0, "fc": 0, "res": 0}
        walk_index = 0
        stack = []
        for spec in arch.layers:
            if spec.kind == "conv":
                if walk_index in quant_by_index:
                    layer = quant_by_index[walk_index]
                    if layer.binarize_input:
                        xb = np.where(x >= 0, 1, -1).astype(np.int8)
                        maps, st = conv_shared(xb, layer)
                        x = maps.astype(np.float64)
                    else:
                        x = conv_shared_real(x, layer)
                        st = ConvStats("shared-real", 0)
                    if img_i == 0:
                        stats_out.append(st)
                    x *= layer.scales.astype(np.float64)[:, None, None]
                else:
                    w = params.get(f"conv{counters['conv']}.w")
                    x = K.conv2d_forward(x[None], w, spec.stride, spec.pad)[0]
                counters["conv"] += 1
                walk_index += 1
            elif spec.kind == "bn":
                x = _bn_eval(x, params, f"bn{counters['bn']}")
                counters["bn"] += 1
            elif spec.kind == "act":
                x = _ACTS[spec.fn](x)
            elif spec.kind == "avgpool":
                c, h, w = x.shape
                x = x.reshape(c, h // spec.k, spec.k, w // spec.k, spec.k).mean(axis=(2, 4))
            elif spec.kind == "maxpool":
                xp = np.pad(x, ((0, 0), (spec.pad, spec.pad), (spec.pad, spec.pad)),
                            constant_values=-np.inf) if spec.pad else x
                win = sliding_window_view(xp, (spec.k, spec.k), axis=(1, 2))
                x = win[:, ::spec.stride, ::spec.stride].max(axis=(3, 4))
            elif spec.kind == "gap":
                x = x.mean(axis=(1, 2), keepdims=True)
            elif spec.kind == "flatten":
                x = x.reshape(-1)
            elif spec.kind == "res_save":
                stack.append(x)
            elif spec.kind == "res_add":
                shortcut = stack.pop()
                if spec.down == "conv":
                    w = params.get(f"down{counters['res']}.w")
                    shortcut = K.conv2d_forward(shortcut[None], w,
                                                spec.down_stride, 0)[0]
                    shortcut = _bn_eval(shortcut, params, f"down{counters['res']}.bn")
                    walk_index += 1
                x = x + shortcut
                counters["res"] += 1
            elif spec.kind == "fc":
                w = params.get(f"fc{counters['fc']}.w")
                b = params.get(f"fc{counters['fc']}.b")
                x = x.reshape(-1) @ w.T + b
                counters["fc"] += 1
                walk_index += 1
        logits.append(x.reshape(-1))
    result = np.stack(logits)
    if collect_stats:
        return result, stats_out
    return result
