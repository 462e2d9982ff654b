# cython: language_level=3
"""Compiled hot kernels: direct-loop float convolutions and bit-packed
binary convolution primitives. Mirrors `_numpy.py` function by function."""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t, int8_t

cnp.import_array()

BACKEND = "cython"

cdef extern from *:
    """
    #if defined(__GNUC__) || defined(__clang__)
    static inline int popcnt64(unsigned long long x) { return __builtin_popcountll(x); }
    #else
    static inline int popcnt64(unsigned long long x) {
        int n = 0;
        while (x) { x &= x - 1; n++; }
        return n;
    }
    #endif
    """
    int popcnt64(unsigned long long x) nogil


cdef inline Py_ssize_t _omin(int tap, int pad, int stride) nogil:
    # smallest output index whose input index tap + o*stride - pad is >= 0
    if tap >= pad:
        return 0
    return (pad - tap + stride - 1) // stride


cdef inline Py_ssize_t _omax(int tap, int pad, int stride, Py_ssize_t extent,
                             Py_ssize_t limit) nogil:
    # one past the largest output index whose input index stays < extent
    cdef Py_ssize_t hi = (extent - 1 - tap + pad) // stride + 1
    return hi if hi < limit else limit


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = (H + 2 * pad - KH) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * pad - KW) // stride + 1
    out_arr = np.zeros((N, O, HO, WO), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, c, oy, ox, dy, dx, y0, y1, x0, x1, iy, ix0
    cdef double wv
    with nogil:
        for n in range(N):
            for o in range(O):
                for c in range(C):
                    for dy in range(KH):
                        y0 = _omin(dy, pad, stride)
                        y1 = _omax(dy, pad, stride, H, HO)
                        for dx in range(KW):
                            wv = w[o, c, dy, dx]
                            if wv == 0.0:
                                continue
                            x0 = _omin(dx, pad, stride)
                            x1 = _omax(dx, pad, stride, W, WO)
                            for oy in range(y0, y1):
                                iy = oy * stride + dy - pad
                                ix0 = x0 * stride + dx - pad
                                for ox in range(x0, x1):
                                    out[n, o, oy, ox] += wv * x[n, c, iy, ix0]
                                    ix0 += stride
    return out_arr


def conv2d_backward_input(double[:, :, :, ::1] dout, double[:, :, :, ::1] w,
                          int H, int W, int stride, int pad):
    cdef Py_ssize_t N = dout.shape[0], O = dout.shape[1]
    cdef Py_ssize_t HO = dout.shape[2], WO = dout.shape[3]
    cdef Py_ssize_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    dx_arr = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, o, c, oy, ox, dy, ddx, y0, y1, x0, x1, iy, ix0
    cdef double wv
    with nogil:
        for n in range(N):
            for o in range(O):
                for c in range(C):
                    for dy in range(KH):
                        y0 = _omin(dy, pad, stride)
                        y1 = _omax(dy, pad, stride, H, HO)
                        for ddx in range(KW):
                            wv = w[o, c, dy, ddx]
                            if wv == 0.0:
                                continue
                            x0 = _omin(ddx, pad, stride)
                            x1 = _omax(ddx, pad, stride, W, WO)
                            for oy in range(y0, y1):
                                iy = oy * stride + dy - pad
                                ix0 = x0 * stride + ddx - pad
                                for ox in range(x0, x1):
                                    dx[n, c, iy, ix0] += wv * dout[n, o, oy, ox]
                                    ix0 += stride
    return dx_arr


def conv2d_backward_weight(double[:, :, :, ::1] dout, double[:, :, :, ::1] x,
                           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t N = dout.shape[0], O = dout.shape[1]
    cdef Py_ssize_t HO = dout.shape[2], WO = dout.shape[3]
    cdef Py_ssize_t C = x.shape[1], H = x.shape[2], W = x.shape[3]
    dw_arr = np.zeros((O, C, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t n, o, c, oy, ox, dy, dx, y0, y1, x0, x1, iy, ix0
    cdef double acc
    with nogil:
        for n in range(N):
            for o in range(O):
                for c in range(C):
                    for dy in range(kh):
                        y0 = _omin(dy, pad, stride)
                        y1 = _omax(dy, pad, stride, H, HO)
                        for dx in range(kw):
                            x0 = _omin(dx, pad, stride)
                            x1 = _omax(dx, pad, stride, W, WO)
                            acc = 0.0
                            for oy in range(y0, y1):
                                iy = oy * stride + dy - pad
                                ix0 = x0 * stride + dx - pad
                                for ox in range(x0, x1):
                                    acc += dout[n, o, oy, ox] * x[n, c, iy, ix0]
                                    ix0 += stride
                            dw[o, c, dy, dx] += acc
    return dw_arr


def nearest_member(double[:, ::1] rows, double[:, ::1] members):
    cdef Py_ssize_t M = rows.shape[0], J = members.shape[0], D = rows.shape[1]
    out_arr = np.empty(M, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Py_ssize_t i, j, d, best_j
    cdef double dot, best
    with nogil:
        for i in range(M):
            best = -1e300
            best_j = 0
            for j in range(J):
                dot = 0.0
                for d in range(D):
                    dot += rows[i, d] * members[j, d]
                if dot > best:
                    best = dot
                    best_j = j
            out[i] = best_j
    return out_arr


def pack_patch_bits(int8_t[:, :, ::1] act, int k, int stride, int pad):
    cdef Py_ssize_t C = act.shape[0], H = act.shape[1], W = act.shape[2]
    cdef Py_ssize_t HO = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t nbits = C * k * k
    cdef Py_ssize_t nw = (nbits + 63) // 64
    patches_arr = np.zeros((HO * WO, nw), dtype=np.uint64)
    valid_arr = np.zeros((HO * WO, nw), dtype=np.uint64)
    cdef uint64_t[:, ::1] patches = patches_arr
    cdef uint64_t[:, ::1] valid = valid_arr
    cdef Py_ssize_t p, oy, ox, c, dy, dx, iy, ix, b
    with nogil:
        for oy in range(HO):
            for ox in range(WO):
                p = oy * WO + ox
                b = 0
                for c in range(C):
                    for dy in range(k):
                        iy = oy * stride + dy - pad
                        for dx in range(k):
                            ix = ox * stride + dx - pad
                            if 0 <= iy < H and 0 <= ix < W:
                                valid[p, b >> 6] |= (<uint64_t>1) << (b & 63)
                                if act[c, iy, ix] > 0:
                                    patches[p, b >> 6] |= (<uint64_t>1) << (b & 63)
                            b += 1
    return patches_arr, valid_arr


def xnor_gemm(uint64_t[:, ::1] patches, uint64_t[:, ::1] valid, uint64_t[:, ::1] wwords):
    cdef Py_ssize_t P = patches.shape[0], NW = patches.shape[1], O = wwords.shape[0]
    out_arr = np.zeros((O, P), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t o, p, t
    cdef int64_t dot
    cdef uint64_t v
    with nogil:
        for o in range(O):
            for p in range(P):
                dot = 0
                for t in range(NW):
                    v = valid[p, t]
                    dot += 2 * popcnt64((~(patches[p, t] ^ wwords[o, t])) & v) - popcnt64(v)
                out[o, p] = dot
    return out_arr


def pack_channel_slices(int8_t[:, :, ::1] act, int k, int stride, int pad):
    cdef Py_ssize_t C = act.shape[0], H = act.shape[1], W = act.shape[2]
    cdef Py_ssize_t HO = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * pad - k) // stride + 1
    slices_arr = np.zeros((HO * WO, C), dtype=np.uint64)
    vmask_arr = np.zeros(HO * WO, dtype=np.uint64)
    cdef uint64_t[:, ::1] slices = slices_arr
    cdef uint64_t[::1] vmask = vmask_arr
    cdef Py_ssize_t p, oy, ox, c, dy, dx, iy, ix, t
    with nogil:
        for oy in range(HO):
            for ox in range(WO):
                p = oy * WO + ox
                for dy in range(k):
                    iy = oy * stride + dy - pad
                    for dx in range(k):
                        ix = ox * stride + dx - pad
                        t = dy * k + dx
                        if 0 <= iy < H and 0 <= ix < W:
                            vmask[p] |= (<uint64_t>1) << t
                            for c in range(C):
                                if act[c, iy, ix] > 0:
                                    slices[p, c] |= (<uint64_t>1) << t
    return slices_arr, vmask_arr


def pack_group_slices(int8_t[:, :, ::1] act, int group, int stride):
    cdef Py_ssize_t C = act.shape[0], H = act.shape[1], W = act.shape[2]
    cdef Py_ssize_t HO = (H + stride - 1) // stride
    cdef Py_ssize_t WO = (W + stride - 1) // stride
    cdef Py_ssize_t G = C // group
    slices_arr = np.zeros((HO * WO, G), dtype=np.uint64)
    cdef uint64_t[:, ::1] slices = slices_arr
    cdef Py_ssize_t p, oy, ox, v, g
    with nogil:
        for oy in range(HO):
            for ox in range(WO):
                p = oy * WO + ox
                for v in range(G):
                    for g in range(group):
                        if act[v * group + g, oy * stride, ox * stride] > 0:
                            slices[p, v] |= (<uint64_t>1) << g
    vmask_arr = np.full(HO * WO, (1 << group) - 1, dtype=np.uint64)
    return slices_arr, vmask_arr


def shared_gather(uint64_t[:, ::1] slices, uint64_t[::1] vmask,
                  uint64_t[::1] member_bits, int64_t[:, ::1] codes):
    cdef Py_ssize_t P = slices.shape[0], C = slices.shape[1]
    cdef Py_ssize_t J = member_bits.shape[0], O = codes.shape[0]
    out_arr = np.zeros((O, P), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    table_arr = np.zeros(J, dtype=np.int64)
    cdef int64_t[::1] table = table_arr
    cdef Py_ssize_t p, c, j, o
    cdef int64_t nv
    cdef uint64_t sl, v
    with nogil:
        for p in range(P):
            v = vmask[p]
            nv = popcnt64(v)
            for c in range(C):
                sl = slices[p, c]
                for j in range(J):
                    table[j] = 2 * popcnt64((~(sl ^ member_bits[j])) & v) - nv
                for o in range(O):
                    out[o, p] += table[codes[o, c]]
    return out_arr
