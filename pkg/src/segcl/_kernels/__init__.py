"""Kernel backend selection.

The compiled Cython core is preferred when it imports cleanly; otherwise the
numpy fallback serves the same API. ``SEGCL_KERNELS=numpy|cython`` forces one
side (``cython`` raises if the extension is unavailable). Both backends are
deterministic run-to-run; their float64 results agree to roundoff but are not
guaranteed bit-identical to each other, so a reproduction of a recorded run
must use the backend that produced it.
"""

import os

from . import _numpy

_requested = os.environ.get("SEGCL_KERNELS", "auto").lower()

if _requested == "numpy":
    impl = _numpy
elif _requested in ("cython", "auto"):
    try:
        from . import _core as impl  # noqa: F401
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "SEGCL_KERNELS=cython but the compiled extension is not built; "
                "install the package (pip install -e . --no-build-isolation) or "
                "set SEGCL_KERNELS=numpy"
            )
        impl = _numpy
else:
    raise ValueError(f"SEGCL_KERNELS must be auto, cython, or numpy, got {_requested!r}")


def backend_name():
    return impl.BACKEND


conv2d_forward = impl.conv2d_forward
conv2d_backward = impl.conv2d_backward
maxpool2x2_forward = impl.maxpool2x2_forward
maxpool2x2_backward = impl.maxpool2x2_backward
upsample2x2_forward = impl.upsample2x2_forward
upsample2x2_backward = impl.upsample2x2_backward
