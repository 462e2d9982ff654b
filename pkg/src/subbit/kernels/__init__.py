"""Hot-kernel backend selection.

The compiled core accelerates the bit-manipulation kernels (patch packing,
xnor+popcount GEMM, shared-table gather); measured 1.5-5x over the numpy
fallback. Dense float convolutions and nearest-member selection go through
im2col + BLAS, which beats hand-written loops at every shape this package
trains, so those stay on the numpy path in both configurations (the
compiled versions still exist for the benchmark).

Set SUBBIT_FORCE_FALLBACK=1 to ignore the compiled core entirely.
"""

import os

from subbit.kernels import _numpy

if os.environ.get("SUBBIT_FORCE_FALLBACK"):
    _bits = _numpy
else:
    try:
        from subbit.kernels import _core as _bits  # type: ignore[attr-defined]
    except ImportError:
        _bits = _numpy

BACKEND = _bits.BACKEND
COMPILED = BACKEND == "cython"

# BLAS-backed in both configurations
conv2d_forward = _numpy.conv2d_forward
conv2d_backward_input = _numpy.conv2d_backward_input
conv2d_backward_weight = _numpy.conv2d_backward_weight
nearest_member = _numpy.nearest_member

# compiled when available
pack_patch_bits = _bits.pack_patch_bits
xnor_gemm = _bits.xnor_gemm
pack_channel_slices = _bits.pack_channel_slices
pack_group_slices = _bits.pack_group_slices
shared_gather = _bits.shared_gather
