"""Sub-bit binary network toolkit.

Trains networks whose binarized conv kernels are drawn from small learnable
codebooks (fractions of a bit per weight), packs them into a bit-exact
deployment format, executes them with computation-sharing convolution, and
models storage, bit-operation, and accelerator-cycle costs.
"""

__version__ = "0.1.0"

from subbit.kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
