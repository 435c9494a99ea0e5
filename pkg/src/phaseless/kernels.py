"""Backend selection for the NDFT and nearest-site kernels.

The compiled ``_ndft_core`` extension is used when it was built; otherwise the
numpy implementation in ``_ndft_py`` is used.  Set ``PHASELESS_KERNELS=python``
to force the fallback.
"""

import os

import numpy as np

from . import _ndft_py

try:
    from . import _ndft_core
except ImportError:  # extension not built
    _ndft_core = None

if _ndft_core is not None and os.environ.get("PHASELESS_KERNELS", "").lower() != "python":
    BACKEND = "compiled"
    _impl = _ndft_core
else:
    BACKEND = "python"
    _impl = _ndft_py


def _prep(x, points):
    return (np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(np.reshape(points, (-1, 2)), dtype=np.float64))


def ndft_sum(f, x, points, impl=None):
    """Sum ``f[a, b] * exp(i (x_a p0 + x_b p1))`` over the grid for each point."""
    impl = impl or _impl
    x, points = _prep(x, points)
    f = np.ascontiguousarray(f, dtype=np.complex128)
    if len(points) == 0:
        return np.zeros(0, dtype=np.complex128)
    return impl.forward(f, x, points)


def ndft_adjoint_sum(g, x, points, impl=None):
    """Adjoint of :func:`ndft_sum` with respect to the Euclidean pairing."""
    impl = impl or _impl
    x, points = _prep(x, points)
    g = np.ascontiguousarray(g, dtype=np.complex128)
    if len(points) == 0:
        return np.zeros((len(x), len(x)), dtype=np.complex128)
    return impl.adjoint(g, x, points)


def nearest_site(probes, sites, impl=None):
    impl = impl or _impl
    return impl.nearest_site(np.ascontiguousarray(probes, dtype=np.float64),
                             np.ascontiguousarray(sites, dtype=np.float64))
