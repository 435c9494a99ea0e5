"""Test potentials and background (reference) potential families.

All potentials are :class:`GridFunction` objects: complex samples on a
:class:`~phaseless.geometry.SpatialGrid`, indexed ``values[a, b]`` at the point
``(coords[a], coords[b])``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import SpatialGrid

#: Native ``[-3, 3]^2`` peaks domain is mapped onto ``[-0.8, 0.8]^2``.
PEAKS_STRETCH = 3.75


@dataclass(eq=False)
class GridFunction:
    grid: SpatialGrid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        n = self.grid.N
        if vals.size != n * n:
            raise ValueError(f"expected {n * n} samples, got {vals.size}")
        self.values = vals.reshape(n, n)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            if other.grid.N != self.grid.N:
                raise ValueError("grid mismatch")
            other = other.values
        return GridFunction(self.grid, self.values + other, self.label)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            other = other.values
        return GridFunction(self.grid, self.values - other, self.label)

    def __mul__(self, s):
        return GridFunction(self.grid, self.values * s, self.label)

    __rmul__ = __mul__

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def is_real(self, rtol: float = 1e-14) -> bool:
        scale = np.abs(self.values.real).max(initial=0.0)
        return np.abs(self.values.imag).max(initial=0.0) <= rtol * scale

    def norms(self) -> tuple[float, float, float]:
        """Grid ``(L1, L2, Linf)`` norms with cell area ``h^2``."""
        a = np.abs(self.values)
        h2 = self.grid.h**2
        return h2 * a.sum(), float(np.sqrt(h2 * np.sum(a**2))), a.max(initial=0.0)

    def write_csv(self, path, E: float | None = None) -> None:
        """CSV with columns ``n1, n2, re, im`` plus a ``.json`` sidecar."""
        path = Path(path)
        n = self.grid.N
        idx = np.arange(-(n // 2), n - n // 2)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n1", "n2", "re", "im"])
            for a, n1 in enumerate(idx):
                for b, n2 in enumerate(idx):
                    z = self.values[a, b]
                    w.writerow([n1, n2, repr(float(z.real)), repr(float(z.imag))])
        path.with_suffix(".json").write_text(
            json.dumps({"N": n, "E": E, "label": self.label}, indent=2))

    @classmethod
    def read_csv(cls, path) -> "GridFunction":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        n = int(meta["N"])
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if len(rows) != n * n:
            raise ValueError(f"{path}: expected {n * n} rows, found {len(rows)}")
        vals = np.zeros((n, n), dtype=np.complex128)
        a = rows[:, 0].astype(int) + n // 2
        b = rows[:, 1].astype(int) + n // 2
        vals[a, b] = rows[:, 2] + 1j * rows[:, 3]
        return cls(SpatialGrid(n), vals, meta.get("label", ""))


def zeros(grid: SpatialGrid, label: str = "") -> GridFunction:
    return GridFunction(grid, np.zeros((grid.N, grid.N)), label)


@dataclass(eq=False)
class BackgroundSet:
    kind: str
    members: list[GridFunction] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("typeA", "typeB", "custom"):
            raise ValueError(f"unknown background kind {self.kind!r}")
        if len(self.members) < 2:
            raise ValueError("at least two background potentials are required")
        for i in range(len(self.members)):
            for j in range(i):
                if np.max(np.abs(self.members[i].values - self.members[j].values)) == 0:
                    raise ValueError(f"background potentials {j} and {i} coincide")

    @property
    def L(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]


def peaks(a, b):
    """The classic two-variable ``peaks`` test surface."""
    return (3 * (1 - a) ** 2 * np.exp(-a**2 - (b + 1) ** 2)
            - 10 * (a / 5 - a**3 - b**5) * np.exp(-a**2 - b**2)
            - np.exp(-(a + 1) ** 2 - b**2) / 3)


def peaks_potential(grid: SpatialGrid, norm_inf: float | None = None,
                    factor: float | None = None, stretch: float = PEAKS_STRETCH) -> GridFunction:
    """Scaled peaks surface ``s P(stretch x1, stretch x2)``.

    Exactly one of ``norm_inf`` (target grid maximum of ``|v|``) and ``factor``
    (the scale ``s`` itself) must be given.
    """
    if (norm_inf is None) == (factor is None):
        raise ValueError("give exactly one of norm_inf and factor")
    x1, x2 = grid.mesh
    base = peaks(stretch * x1, stretch * x2)
    if norm_inf is not None:
        if norm_inf <= 0:
            raise ValueError("target norm must be positive")
        factor = norm_inf / np.abs(base).max()
    return GridFunction(grid, factor * base, "peaks")


def wendland(r, k_order: int):
    """Wendland functions ``Phi_0(r) = (1-r)_+^2`` and ``Phi_1(r) = (1-r)_+^4 (4r+1)``."""
    t = np.maximum(1.0 - np.asarray(r, dtype=float), 0.0)
    if k_order == 0:
        return t**2
    if k_order == 1:
        return t**4 * (4 * np.asarray(r) + 1)
    raise ValueError("Wendland order must be 0 or 1")


def wendland_bump(grid: SpatialGrid, center=(0.0, 0.0), h_support: float = 0.2,
                  k_order: int = 1, amplitude: float = 1.0) -> GridFunction:
    if h_support <= 0:
        raise ValueError("support radius must be positive")
    x1, x2 = grid.mesh
    r = np.hypot(x1 - center[0], x2 - center[1]) / h_support
    return GridFunction(grid, amplitude * wendland(r, k_order), f"wendland{k_order}")


def rectangle_bump(grid: SpatialGrid, corner_lo, corner_hi, amplitude: float = 1.0) -> GridFunction:
    """``amplitude`` on the closed rectangle ``[lo, hi]``, zero elsewhere."""
    lo = np.asarray(corner_lo, dtype=float)
    hi = np.asarray(corner_hi, dtype=float)
    if not np.all(lo < hi):
        raise ValueError("rectangle corners must satisfy lo < hi componentwise")
    x1, x2 = grid.mesh
    eps = 1e-12
    inside = ((x1 >= lo[0] - eps) & (x1 <= hi[0] + eps)
              & (x2 >= lo[1] - eps) & (x2 <= hi[1] + eps))
    return GridFunction(grid, amplitude * inside, "rectangle")


def _require_real_nonzero(profile: GridFunction) -> None:
    if not np.any(profile.values != 0):
        raise ValueError("background profile is identically zero")
    if not profile.is_real():
        raise ValueError("background profile must be real-valued")


def make_type_a(profile: GridFunction) -> BackgroundSet:
    """``{w, i w}`` at a single location."""
    _require_real_nonzero(profile)
    w = GridFunction(profile.grid, profile.values.real, profile.label)
    return BackgroundSet("typeA", [w, GridFunction(w.grid, 1j * w.values, w.label)])


def snap_shift(grid: SpatialGrid, shift) -> np.ndarray:
    """Shift rounded to whole grid cells, returned as integer cell counts."""
    return np.rint(np.asarray(shift, dtype=float) / grid.h).astype(int)


def translate(f: GridFunction, cells, crop: bool = False) -> GridFunction:
    """``f(x - T)`` for ``T = h * cells``.

    Raises if part of the support leaves the box, unless ``crop`` is set, in
    which case that part is dropped.
    """
    n = f.grid.N
    c1, c2 = (int(c) for c in cells)
    out = np.zeros_like(f.values)
    src = f.values
    a0, a1 = max(0, -c1), min(n, n - c1)
    b0, b1 = max(0, -c2), min(n, n - c2)
    if a0 < a1 and b0 < b1:
        out[a0 + c1:a1 + c1, b0 + c2:b1 + c2] = src[a0:a1, b0:b1]
    lost = np.abs(src).sum() - np.abs(out).sum()
    if not crop and lost > 1e-12 * max(np.abs(src).sum(), 1e-300):
        raise ValueError("translation moves part of the support outside the box")
    return GridFunction(f.grid, out, f.label)


def make_type_b(profile: GridFunction, shifts: Sequence) -> BackgroundSet:
    """Translates ``w(x - T_l)`` of one real profile, shifts snapped to the grid."""
    _require_real_nonzero(profile)
    if len(shifts) < 2:
        raise ValueError("type B needs at least two shifts")
    cells = [tuple(snap_shift(profile.grid, s)) for s in shifts]
    if len(set(cells)) != len(cells):
        raise ValueError("shifts must be pairwise distinct (after snapping to the grid)")
    return BackgroundSet("typeB", [translate(profile, c) for c in cells])


@dataclass(frozen=True)
class Perturbation:
    """Modelling error applied to a background potential.

    ``translation`` is in spatial units (snapped to the grid),
    ``gaussian_noise_sd`` in potential units and ``gaussian_blur_sd`` in grid
    cells.  Noise is added on the support of the (rescaled, shifted) profile.
    """

    amplitude_scale: float = 1.0
    support_scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)
    gaussian_noise_sd: float = 0.0
    gaussian_blur_sd: float = 0.0
    seed: int = 0


#: the modelling error used in the robustness experiment
ROBUSTNESS_PERTURBATION = Perturbation(1.3, 0.8, (0.1, 0.0), 0.22, 0.5)


def perturb_background(w: GridFunction, spec: Perturbation) -> GridFunction:
    """Apply support rescaling, translation, amplitude scaling, noise and blur, in that order."""
    grid = w.grid
    vals = w.values.copy()
    if spec.support_scale != 1.0:
        mass = np.abs(vals)
        if mass.sum() > 0:
            ca, cb = ndimage.center_of_mass(mass)
            a = np.arange(grid.N)[:, None] * np.ones((1, grid.N))
            b = np.ones((grid.N, 1)) * np.arange(grid.N)[None, :]
            src = [ca + (a - ca) / spec.support_scale, cb + (b - cb) / spec.support_scale]
            # nearest-neighbour resampling keeps piecewise-constant profiles sharp
            re = ndimage.map_coordinates(vals.real, src, order=0, mode="constant")
            im = ndimage.map_coordinates(vals.imag, src, order=0, mode="constant")
            vals = re + 1j * im
    if any(spec.translation):
        # a misplaced background may stick out of the box; that part is cut off
        vals = translate(GridFunction(grid, vals), snap_shift(grid, spec.translation),
                         crop=True).values
    vals = vals * spec.amplitude_scale
    if spec.gaussian_noise_sd > 0:
        rng = np.random.default_rng(spec.seed)
        support = np.abs(vals) > 0
        vals = vals + spec.gaussian_noise_sd * rng.standard_normal(vals.shape) * support
    if spec.gaussian_blur_sd > 0:
        vals = (ndimage.gaussian_filter(vals.real, spec.gaussian_blur_sd, mode="constant")
                + 1j * ndimage.gaussian_filter(vals.imag, spec.gaussian_blur_sd, mode="constant"))
    return GridFunction(grid, vals, w.label + "~")


def nonsmooth_potential(grid: SpatialGrid, amplitude: float = 1.0) -> GridFunction:
    """Piecewise-constant test object inside the unit disk.

    A disk of radius 0.6 at level ``amplitude``, a square at ``2 amplitude``
    cut into its upper-left part, and a lower-right quarter-annulus sector at
    ``-amplitude``.  It takes exactly four values.
    """
    x1, x2 = grid.mesh
    r = np.hypot(x1, x2)
    v = np.zeros_like(x1)
    v[r <= 0.6] = 1.0
    v[(x1 >= -0.45) & (x1 <= -0.05) & (x2 >= 0.05) & (x2 <= 0.45)] = 2.0
    sector = (r >= 0.65) & (r <= 0.9) & (x1 > 0) & (x2 < 0)
    v[sector] = -1.0
    return GridFunction(grid, amplitude * v, "nonsmooth")


def corner_rectangles(grid: SpatialGrid, amplitude: float, side: float = 0.3,
                      inset: float = 0.04, corners=((1, 1), (-1, 1), (1, -1))) -> BackgroundSet:
    """Square indicator backgrounds placed in corners of the box.

    Each square has side ``side`` and sits ``inset`` away from the box edges,
    clear of the disk of radius 0.8 that holds the peaks potential.
    """
    members = []
    for sx, sy in corners:
        lo = []
        hi = []
        for s in (sx, sy):
            if s > 0:
                lo.append(1 - inset - side)
                hi.append(1 - inset)
            else:
                lo.append(-1 + inset)
                hi.append(-1 + inset + side)
        members.append(rectangle_bump(grid, lo, hi, amplitude))
    return BackgroundSet("custom", members)
