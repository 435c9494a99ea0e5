"""Pure numpy versions of the compiled kernels in ``_ndft_core``."""

import numpy as np
from scipy.spatial import cKDTree

_CHUNK = 4096


def forward(f, x, points):
    out = np.empty(len(points), dtype=np.complex128)
    for s in range(0, len(points), _CHUNK):
        p = points[s:s + _CHUNK]
        e1 = np.exp(1j * np.outer(p[:, 0], x))
        e2 = np.exp(1j * np.outer(p[:, 1], x))
        out[s:s + _CHUNK] = np.sum((e1 @ f) * e2, axis=1)
    return out


def adjoint(g, x, points):
    n = len(x)
    out = np.zeros((n, n), dtype=np.complex128)
    for s in range(0, len(points), _CHUNK):
        p = points[s:s + _CHUNK]
        e1 = np.exp(-1j * np.outer(p[:, 0], x))
        e2 = np.exp(-1j * np.outer(p[:, 1], x))
        out += (e1 * g[s:s + _CHUNK, None]).T @ e2
    return out


def nearest_site(probes, sites):
    # cKDTree breaks exact ties arbitrarily; resolve them towards the lowest index
    tree = cKDTree(sites)
    d, idx = tree.query(probes, k=min(2, len(sites)))
    if len(sites) == 1:
        return np.zeros(len(probes), dtype=np.intp)
    tie = np.isclose(d[:, 0], d[:, 1], rtol=0, atol=1e-12)
    first = idx[:, 0].copy()
    first[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
    return first.astype(np.intp)
