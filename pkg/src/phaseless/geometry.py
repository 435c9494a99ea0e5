"""Spatial grid, measurement geometries and Fourier-space grids.

Conventions
-----------
The spatial grid is ``x = (2/N) (n1, n2)`` with ``n1, n2`` in
``Z_N = {-N/2, ..., N/2 - 1}``, i.e. the box ``[-1, 1)^2``.  A measurement is a
pair ``(k, l)`` of incident and scattered wave vectors with
``|k|^2 = |l|^2 = E``; its momentum transfer is ``p = k - l``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

#: Coordinates are compared after rounding to this many decimals.
ROUND_DIGITS = 9


def _keys(points: np.ndarray) -> np.ndarray:
    """Integer keys identifying points up to ``ROUND_DIGITS`` decimals."""
    return np.rint(np.asarray(points, dtype=float) * 10.0**ROUND_DIGITS).astype(np.int64)


def unique_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct points in order of first appearance and the inverse index map."""
    keys = _keys(points)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    # relabel so that groups are numbered by first appearance
    order = np.argsort(first, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    return np.asarray(points)[first[order]], relabel[inverse]


def centered_range(n: int) -> np.ndarray:
    """The index set ``Z_n = {-n//2, ..., n - n//2 - 1}``."""
    return np.arange(-(n // 2), n - n // 2)


@dataclass(frozen=True)
class SpatialGrid:
    """The ``N x N`` sample grid on ``[-1, 1)^2`` with spacing ``2/N``."""

    N: int

    def __post_init__(self):
        if self.N < 2 or self.N % 2:
            raise ValueError(f"grid order must be a positive even integer, got {self.N}")

    @property
    def h(self) -> float:
        return 2.0 / self.N

    @cached_property
    def coords(self) -> np.ndarray:
        """One-dimensional coordinates ``(2/N) n`` for ``n`` in ``Z_N``."""
        return self.h * centered_range(self.N)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.coords, self.coords, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        x1, x2 = self.mesh
        return np.column_stack([x1.ravel(), x2.ravel()])

    @property
    def fourier_half_width(self) -> float:
        """Half side ``pi N / 2`` of the Fourier square dual to the grid."""
        return math.pi * self.N / 2

    def supports_energy(self, E: float) -> bool:
        return self.N >= 2.0 * math.sqrt(E) / math.pi - 1e-12


def build_spatial_grid(E: float, c: float = 5.0) -> SpatialGrid:
    """Grid with ``N`` the smallest even integer ``>= c sqrt(E)``."""
    if E <= 0 or c <= 0:
        raise ValueError("energy and grid constant must be positive")
    n = math.ceil(c * math.sqrt(E) - 1e-9)
    n += n % 2
    grid = SpatialGrid(max(n, 2))
    return grid


@dataclass(frozen=True, eq=False)
class MeasurementGeometry:
    """Ordered list of measurement pairs ``(k_m, l_m)`` at energy ``E``.

    ``incident_index[m]`` points into ``incident``, the distinct incident
    wave vectors in order of first appearance.
    """

    E: float
    k: np.ndarray
    l: np.ndarray
    style: str
    M1: int | None = None
    M2: int | None = None
    incident: np.ndarray = field(init=False, repr=False)
    incident_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = np.ascontiguousarray(self.k, dtype=float).reshape(-1, 2)
        l = np.ascontiguousarray(self.l, dtype=float).reshape(-1, 2)
        if k.shape != l.shape:
            raise ValueError("k and l must have the same number of pairs")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "l", l)
        inc, idx = unique_points(k)
        object.__setattr__(self, "incident", inc)
        object.__setattr__(self, "incident_index", idx)

    @property
    def M(self) -> int:
        return len(self.k)

    @property
    def K(self) -> int:
        """Number of distinct incident directions."""
        return len(self.incident)

    @property
    def p(self) -> np.ndarray:
        return self.k - self.l

    def pairs_for_incident(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.incident_index == i)

    def to_json(self) -> dict:
        return {"E": self.E, "style": self.style, "M1": self.M1, "M2": self.M2}

    @classmethod
    def from_json(cls, d: dict) -> "MeasurementGeometry":
        if d["style"] == "ewald":
            return build_ewald_geometry(d["E"], d["M1"], d["M2"])
        if d["style"] == "minimal":
            return build_minimal_geometry(d["E"])
        raise ValueError(f"unknown geometry style {d['style']!r}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kx", "ky", "lx", "ly"])
            for (kx, ky), (lx, ly) in zip(self.k, self.l):
                w.writerow([repr(float(c)) for c in (kx, ky, lx, ly)])


def build_ewald_geometry(E: float, M1: int, M2: int) -> MeasurementGeometry:
    """``M1`` equidistant incident directions, ``M2`` far-field points each.

    Pairs are ordered lexicographically in ``(s, t)`` with ``s`` in ``Z_M1``
    and ``t`` in ``Z_M2``; ``l(s, t)`` is ``k(s)`` rotated by ``2 pi t / M2``.
    """
    if M1 < 1 or M2 < 1:
        raise ValueError("M1 and M2 must be at least 1")
    if E <= 0:
        raise ValueError("energy must be positive")
    r = math.sqrt(E)
    s = centered_range(M1)
    t = centered_range(M2)
    S, T = np.meshgrid(s, t, indexing="ij")
    a = 2 * np.pi * S / M1
    b = a + 2 * np.pi * T / M2
    k = r * np.column_stack([np.cos(a).ravel(), np.sin(a).ravel()])
    l = r * np.column_stack([np.cos(b).ravel(), np.sin(b).ravel()])
    return MeasurementGeometry(E, k, l, "ewald", M1, M2)


def _normal(p: np.ndarray) -> np.ndarray:
    """Counterclockwise unit normal of each row of ``p``; ``(1, 0)`` at the origin."""
    norm = np.hypot(p[:, 0], p[:, 1])
    g = np.column_stack([-p[:, 1], p[:, 0]])
    out = np.tile([1.0, 0.0], (len(p), 1))
    nz = norm > 0
    out[nz] = g[nz] / norm[nz, None]
    return out


def minimal_fourier_lattice(E: float) -> np.ndarray:
    """Points of ``pi Z^2`` inside the closed ball of radius ``2 sqrt(E)``."""
    r = 2 * math.sqrt(E)
    nmax = int(math.floor(r / math.pi + 1e-12))
    n = np.arange(-nmax, nmax + 1)
    N1, N2 = np.meshgrid(n, n, indexing="ij")
    p = math.pi * np.column_stack([N1.ravel(), N2.ravel()]).astype(float)
    keep = np.hypot(p[:, 0], p[:, 1]) <= r * (1 + 1e-12)
    return p[keep]


def pairs_for_transfers(E: float, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One measurement pair per momentum transfer, ``k - l = p``."""
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    g = _normal(p)
    q = np.sqrt(np.maximum(E - 0.25 * np.sum(p**2, axis=1), 0.0))[:, None]
    return 0.5 * p + q * g, -0.5 * p + q * g


def build_minimal_geometry(E: float) -> MeasurementGeometry:
    if E <= 0:
        raise ValueError("energy must be positive")
    k, l = pairs_for_transfers(E, minimal_fourier_lattice(E))
    return MeasurementGeometry(E, k, l, "minimal")


@dataclass(frozen=True, eq=False)
class FourierGrids:
    """Interior grid ``gamma_m`` (distinct ``k_m - l_m``), exterior grid ``gamma_e``
    and the pushforward grouping ``group_index[m]`` into ``gamma_m``."""

    E: float
    N: int
    gamma_m: np.ndarray
    gamma_e: np.ndarray
    group_index: np.ndarray

    @cached_property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group_index, minlength=len(self.gamma_m))

    @property
    def pushforward_groups(self) -> list[np.ndarray]:
        order = np.argsort(self.group_index, kind="stable")
        bounds = np.cumsum(self.group_sizes)[:-1]
        return np.split(order, bounds)

    @cached_property
    def averaging_matrix(self) -> sparse.csr_matrix:
        M = len(self.group_index)
        w = 1.0 / self.group_sizes[self.group_index]
        return sparse.csr_matrix((w, (self.group_index, np.arange(M))),
                                 shape=(len(self.gamma_m), M))


def exterior_grid(N: int, E: float) -> np.ndarray:
    n = centered_range(N)
    N1, N2 = np.meshgrid(n, n, indexing="ij")
    p = math.pi * np.column_stack([N1.ravel(), N2.ravel()]).astype(float)
    return p[np.sum(p**2, axis=1) > 4 * E]


def fourier_setup(grid: SpatialGrid, geom: MeasurementGeometry) -> FourierGrids:
    if not grid.supports_energy(geom.E):
        raise ValueError(
            f"grid order N={grid.N} is too small for E={geom.E} (need N >= 2 sqrt(E)/pi)")
    gamma_m, index = unique_points(geom.p)
    return FourierGrids(geom.E, grid.N, gamma_m, exterior_grid(grid.N, geom.E), index)


def pushforward(values, grids: FourierGrids) -> np.ndarray:
    """Average measurement data over pairs sharing a momentum transfer.

    ``values`` has shape ``(..., M)``; the result has shape ``(..., len(gamma_m))``.
    """
    values = np.asarray(values)
    if values.shape[-1] != len(grids.group_index):
        raise ValueError("data length does not match the number of measurement pairs")
    flat = values.reshape(-1, values.shape[-1])
    out = (grids.averaging_matrix @ flat.T).T
    return out.reshape(values.shape[:-1] + (len(grids.gamma_m),))


def broadcast(values, grids: FourierGrids) -> np.ndarray:
    """Inverse of :func:`pushforward` for group-constant data."""
    return np.asarray(values)[..., grids.group_index]


def save_geometry(geom: MeasurementGeometry, path) -> None:
    Path(path).write_text(json.dumps(geom.to_json(), indent=2))


def load_geometry(path) -> MeasurementGeometry:
    return MeasurementGeometry.from_json(json.loads(Path(path).read_text()))
