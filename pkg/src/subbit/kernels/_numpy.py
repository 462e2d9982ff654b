"""Pure-numpy implementations of the hot kernels.

Mirrors the compiled core in `_core.pyx`; the active backend is picked in
`subbit.kernels.__init__`. Float convolutions go through im2col + BLAS,
bit kernels through packed uint64 words and `np.bitwise_count`.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"

# uint64 words hold 64 bit-lanes; patch bit b sits at word b//64, bit b%64
WORD_BITS = 64


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) -> (N, C*kh*kw, Ho*Wo), taps ordered (c, dy, dx)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def conv2d_forward(x, w, stride, pad):
    n = x.shape[0]
    o, _, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = np.matmul(w.reshape(o, -1), cols)
    return out.reshape(n, o, ho, wo)


def conv2d_backward_input(dout, w, h, w_in, stride, pad):
    n, o, ho, wo = dout.shape
    _, c, kh, kw = w.shape
    dcols = np.matmul(w.reshape(o, -1).T, dout.reshape(n, o, ho * wo))
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros((n, c, h + 2 * pad, w_in + 2 * pad), dtype=dout.dtype)
    for dy in range(kh):
        for dx in range(kw):
            dxp[:, :, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride] += dcols[:, :, dy, dx]
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w_in])
    return dxp


def conv2d_backward_weight(dout, x, kh, kw, stride, pad):
    n, o, ho, wo = dout.shape
    c = x.shape[1]
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    dw = np.matmul(dout.reshape(n, o, ho * wo), cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(o, c, kh, kw)


def nearest_member(rows, members):
    """Index of the nearest +-1 member per row (max dot product).

    Ties resolve to the lowest member index (np.argmax picks the first max).
    """
    dots = rows @ members.T
    return np.argmax(dots, axis=1).astype(np.int64)


def _pack_bits_u64(bits):
    """Pack a (..., nbits) 0/1 uint8 array into (..., nwords) uint64, LSB-first."""
    nbits = bits.shape[-1]
    nwords = (nbits + WORD_BITS - 1) // WORD_BITS
    padded = np.zeros(bits.shape[:-1] + (nwords * WORD_BITS,), dtype=np.uint8)
    padded[..., :nbits] = bits
    packed = np.packbits(padded.reshape(-1, nwords, 8, 8), axis=-1, bitorder="little")
    return packed.reshape(bits.shape[:-1] + (nwords * 8,)).view("<u8").reshape(
        bits.shape[:-1] + (nwords,))


def _patch_windows(act, k, stride, pad):
    c, h, w = act.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    ap = np.pad(act, ((0, 0), (pad, pad), (pad, pad))) if pad else act
    vp = np.zeros((h + 2 * pad, w + 2 * pad), dtype=np.uint8)
    vp[pad:pad + h, pad:pad + w] = 1
    awin = sliding_window_view(ap, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    vwin = sliding_window_view(vp, (k, k))[::stride, ::stride]
    # bit values: 1 <=> +1; out-of-bounds taps are 0 in both planes
    abits = ((awin > 0) & (vwin[None].astype(bool))).astype(np.uint8)
    return abits, vwin.astype(np.uint8), ho, wo


def pack_patch_bits(act, k, stride, pad):
    """Bit-pack every receptive field of a +-1 (C,H,W) map.

    Returns (patches, valid), both (Ho*Wo, nwords) uint64. Bit b of a patch
    encodes tap b = (c*k + dy)*k + dx; valid marks in-bounds taps.
    """
    c = act.shape[0]
    abits, vbits, ho, wo = _patch_windows(act, k, stride, pad)
    pa = abits.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * k * k)
    pv = np.broadcast_to(vbits.reshape(ho, wo, 1, k, k), (ho, wo, c, k, k))
    pv = pv.reshape(ho * wo, c * k * k)
    return _pack_bits_u64(pa), _pack_bits_u64(np.ascontiguousarray(pv))


def xnor_gemm(patches, valid, wwords):
    """Integer dot maps: out[o,p] = sum over valid taps of (+-1 match products)."""
    p, nw = patches.shape
    o = wwords.shape[0]
    out = np.zeros((o, p), dtype=np.int64)
    nvalid = np.bitwise_count(valid).sum(axis=1).astype(np.int64)
    # chunk output channels to bound the (o, p, nw) temporaries
    chunk = max(1, (1 << 22) // max(1, p * nw))
    for j in range(0, o, chunk):
        ww = wwords[j:j + chunk]
        match = np.bitwise_count(~(patches[None, :, :] ^ ww[:, None, :]) & valid[None, :, :])
        out[j:j + chunk] = 2 * match.sum(axis=2).astype(np.int64) - nvalid[None, :]
    return out


def pack_channel_slices(act, k, stride, pad):
    """Per-channel k*k neighborhood bits of a +-1 map: (Ho*Wo, C) uint64 lanes.

    Lane bit t encodes tap t = dy*k + dx. Second return is the per-pixel
    valid mask (same lane layout, identical for every channel).
    """
    abits, vbits, ho, wo = _patch_windows(act, k, stride, pad)
    sl = abits.transpose(1, 2, 0, 3, 4).reshape(ho * wo, act.shape[0], k * k)
    weights = (np.uint64(1) << np.arange(k * k, dtype=np.uint64))
    slices = (sl.astype(np.uint64) * weights).sum(axis=2, dtype=np.uint64)
    vmask = (vbits.reshape(ho * wo, k * k).astype(np.uint64) * weights).sum(
        axis=1, dtype=np.uint64)
    return slices, vmask


def pack_group_slices(act, group, stride):
    """Group consecutive input channels of a (C,H,W) +-1 map into bit lanes.

    For 1x1 layers: lane bit g encodes channel group*v + g at one pixel.
    Returns (Ho*Wo, C//group) uint64 plus the constant full-group mask.
    """
    c, h, w = act.shape
    sub = act[:, ::stride, ::stride]
    ho, wo = sub.shape[1], sub.shape[2]
    bits = (sub > 0).astype(np.uint64).reshape(c // group, group, ho * wo)
    weights = (np.uint64(1) << np.arange(group, dtype=np.uint64))
    slices = (bits * weights[None, :, None]).sum(axis=1, dtype=np.uint64).T
    vmask = np.full(ho * wo, (np.uint64(1) << np.uint64(group)) - np.uint64(1),
                    dtype=np.uint64)
    return np.ascontiguousarray(slices), vmask


def shared_gather(slices, vmask, member_bits, codes):
    """Shared-table convolution: per slice, one dot per member, reused by code.

    out[o,p] = sum_c table[p, c, codes[o,c]] with
    table[p,c,j] = 2*popcount(xnor(slices[p,c], member_bits[j]) & vmask[p]) - popcount(vmask[p]).
    """
    p, c = slices.shape
    o = codes.shape[0]
    nvalid = np.bitwise_count(vmask).astype(np.int64)
    table = 2 * np.bitwise_count(
        ~(slices[:, :, None] ^ member_bits[None, None, :]) & vmask[:, None, None]
    ).astype(np.int64) - nvalid[:, None, None]
    gathered = table[:, np.arange(c)[None, :], codes]  # (P, O, C)
    return np.ascontiguousarray(gathered.sum(axis=2).T)
