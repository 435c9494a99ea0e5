"""Nonuniform DFT on the spatial grid, Voronoi quadrature weights and the
weighted least-squares inverse transform.

The forward transform at a frequency point ``p`` is the quadrature

    (A f)(p) = (pi N)^-2 sum_x exp(i x.p) f(x)

of ``(2 pi)^-2 \\int exp(i p.x) f(x) dx``.  Sums are evaluated exactly (no
NUFFT approximation) by the kernels in :mod:`phaseless.kernels`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Voronoi

from . import kernels
from .geometry import SpatialGrid, _keys
from .potentials import GridFunction

log = logging.getLogger(__name__)


@dataclass(eq=False)
class FourierField:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=np.complex128).ravel()
        if len(self.points) != len(self.values):
            raise ValueError("points and values must have equal length")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["px", "py", "re", "im"])
            for (px, py), z in zip(self.points, self.values):
                w.writerow([repr(float(px)), repr(float(py)), repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def read_csv(cls, path) -> "FourierField":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, :2], rows[:, 2] + 1j * rows[:, 3])


@dataclass(eq=False)
class WeightTable:
    points: np.ndarray
    areas: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["px", "py", "area"])
            for (px, py), a in zip(self.points, self.areas):
                w.writerow([repr(float(px)), repr(float(py)), repr(float(a))])

    @classmethod
    def read_csv(cls, path) -> "WeightTable":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, :2], rows[:, 2])


class FourierOperator:
    """The matrix ``A = [(pi N)^-2 exp(i x.p)]`` for given frequency points."""

    def __init__(self, grid: SpatialGrid, points):
        self.grid = grid
        self.points = np.ascontiguousarray(np.reshape(points, (-1, 2)), dtype=float)
        self.scale = (math.pi * grid.N) ** -2

    @property
    def shape(self):
        return (len(self.points), self.grid.N**2)

    def __call__(self, f) -> np.ndarray:
        f = f.values if isinstance(f, GridFunction) else np.reshape(f, (self.grid.N, self.grid.N))
        return self.scale * kernels.ndft_sum(f, self.grid.coords, self.points)

    def adjoint(self, g) -> np.ndarray:
        """``A^* g`` as an ``N x N`` array."""
        return self.scale * kernels.ndft_adjoint_sum(np.ravel(g), self.grid.coords, self.points)


def ndft_forward(f: GridFunction, points) -> FourierField:
    return FourierField(points, FourierOperator(f.grid, points)(f))


def _check_square(points, half_width):
    if np.any(np.abs(points) > half_width * (1 + 1e-12)):
        raise ValueError("frequency points must lie inside the Fourier square")
    keys = _keys(points)
    if len(np.unique(keys, axis=0)) != len(keys):
        raise ValueError("frequency points must be pairwise distinct")


def _periodic_images(points, side):
    shifts = np.array([(i, j) for i in (0, -1, 1) for j in (0, -1, 1)], dtype=float) * side
    return np.concatenate([points + s for s in shifts])


def voronoi_weights(points, half_width: float) -> WeightTable:
    """Voronoi cell areas on the Fourier square ``[-a, a]^2``, ``a = half_width``.

    The square is treated as a torus: rows of ``A`` are periodic in ``p`` with
    period ``2a = pi N``.  Cells are exact polygons from Qhull on the point set
    plus its eight periodic images.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    _check_square(pts, half_width)
    side = 2.0 * half_width
    n = len(pts)
    if n == 1:
        return WeightTable(pts, np.array([side * side]))
    # wrap into [-a, a) so images do not coincide with originals
    wrapped = (pts + half_width) % side - half_width
    vor = Voronoi(_periodic_images(wrapped, side), qhull_options="Qbb Qc Qz")
    areas = np.empty(n)
    for i in range(n):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise RuntimeError("unbounded Voronoi cell for an interior point")
        poly = vor.vertices[region]
        c = poly.mean(axis=0)
        order = np.argsort(np.arctan2(poly[:, 1] - c[1], poly[:, 0] - c[0]))
        x, y = poly[order, 0], poly[order, 1]
        areas[i] = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return WeightTable(pts, areas)


def voronoi_weights_raster(points, half_width: float, resolution: int | None = None,
                           impl=None) -> WeightTable:
    """Cell areas by counting probe-lattice cells nearest to each point.

    Independent check on :func:`voronoi_weights` (same periodic convention).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    _check_square(pts, half_width)
    side = 2.0 * half_width
    n = len(pts)
    if resolution is None:
        resolution = int(min(4096, math.ceil(10 * math.sqrt(n))))
    c = -half_width + side * (np.arange(resolution) + 0.5) / resolution
    P1, P2 = np.meshgrid(c, c, indexing="ij")
    probes = np.column_stack([P1.ravel(), P2.ravel()])
    wrapped = (pts + half_width) % side - half_width
    owner = kernels.nearest_site(probes, _periodic_images(wrapped, side), impl=impl) % n
    counts = np.bincount(owner, minlength=n)
    return WeightTable(pts, counts * (side * side / resolution**2))


@dataclass
class CGResult:
    solution: GridFunction
    iterations: int
    residual: float
    converged: bool
    history: list


def weighted_ls_inverse(U: FourierField, weights: WeightTable, grid: SpatialGrid,
                        tol: float = 1e-6, max_iter: int = 50, x0=None) -> CGResult:
    """Minimise ``||D^(1/2) (A w - U)||`` by CG on ``A^* D A w = A^* D U``.

    Stops when ``||A^* D (U - A w)|| <= tol ||A^* D U||``.  Non-convergence is
    reported through ``converged`` rather than raised.  ``history`` holds the
    weighted data residual ``||D^(1/2)(A w_k - U)||`` for every iterate.
    """
    if len(U.points) != len(weights.points) or np.any(_keys(U.points) != _keys(weights.points)):
        raise ValueError("field and weight table must share the same points")
    A = FourierOperator(grid, U.points)
    d = np.asarray(weights.areas, dtype=float)
    u = U.values
    x = np.zeros((grid.N, grid.N), dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128).reshape(grid.N, grid.N)
    s = u - A(x) if x0 is not None else u.copy()
    r = A.adjoint(d * s)
    ref = np.linalg.norm(A.adjoint(d * u))
    history = [float(np.sqrt(np.sum(d * np.abs(s) ** 2)))]
    if ref == 0.0:
        return CGResult(GridFunction(grid, np.zeros_like(x)), 0, 0.0, True, history)
    gamma = np.vdot(r, r).real
    res = math.sqrt(gamma) / ref
    pdir = r.copy()
    it = 0
    while res > tol and it < max_iter:
        q = A(pdir)
        denom = np.sum(d * np.abs(q) ** 2)
        if denom <= 0:
            break
        alpha = gamma / denom
        x += alpha * pdir
        s -= alpha * q
        r = A.adjoint(d * s)
        gamma_new = np.vdot(r, r).real
        it += 1
        res = math.sqrt(gamma_new) / ref
        history.append(float(np.sqrt(np.sum(d * np.abs(s) ** 2))))
        pdir = r + (gamma_new / gamma) * pdir
        gamma = gamma_new
    if res > tol:
        log.info("weighted LS inverse stopped at relative residual %.2e after %d iterations", res, it)
    return CGResult(GridFunction(grid, x), it, res, res <= tol, history)
