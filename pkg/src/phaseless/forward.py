"""Direct scattering solver for ``-Delta psi + v psi = E psi`` in two dimensions.

The Lippmann-Schwinger equation

    psi + K * (v psi) = exp(i k.x),    K(x) = (i/4) H_0^(1)(sqrt(E) |x|),

is discretised on the sample grid by trigonometric collocation: the kernel is
truncated at the diameter of the support box, so its Fourier transform is
known in closed form, and the convolution is evaluated by FFT on a zero-padded
periodic box large enough to avoid wrap-around.  The resulting matrix is
complex symmetric, which makes reciprocity ``f(k, l) = f(-l, -k)`` exact up to
the linear-solver tolerance.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft, special
from scipy.sparse.linalg import LinearOperator, gmres

from . import kernels
from .geometry import MeasurementGeometry, SpatialGrid, unique_points
from .potentials import GridFunction

log = logging.getLogger(__name__)

#: Kernel truncation radius: the diameter of the box ``[-1, 1]^2``.
TRUNCATION_RADIUS = 2.0 * math.sqrt(2.0)


class ForwardSolverError(RuntimeError):
    """Krylov solve failed; ``index`` identifies the offending direction."""

    def __init__(self, message, index=None, residual=None):
        super().__init__(message)
        self.index = index
        self.residual = residual


@dataclass(frozen=True)
class ForwardSolverConfig:
    """Settings for the Lippmann-Schwinger solve.

    Parameters
    ----------
    pad_factor : float
        Side of the periodic computation box in units of the domain side 2.
        Must be at least ``(2 + 2 sqrt 2) / 4 * 2 ~ 2.42`` so that the kernel,
        truncated at ``2 sqrt 2``, never wraps around.
    ls_tol : float
        Relative residual for GMRES.
    ls_max_iter : int
        Cap on the total number of GMRES iterations.
    restart : int
        GMRES restart length.
    """

    pad_factor: float = 2.5
    ls_tol: float = 1e-6
    ls_max_iter: int = 300
    restart: int = 50

    def __post_init__(self):
        if self.pad_factor * 2.0 < 2.0 + TRUNCATION_RADIUS - 1e-12:
            raise ValueError("pad_factor too small: need 2 * pad_factor >= 2 + 2 sqrt(2)")
        if not 0 < self.ls_tol <= 1e-2:
            raise ValueError("ls_tol must lie in (0, 1e-2]")
        if self.ls_max_iter < 1 or self.restart < 1:
            raise ValueError("iteration caps must be positive")

    def to_json(self) -> dict:
        return {"pad_factor": self.pad_factor, "ls_tol": self.ls_tol,
                "ls_max_iter": self.ls_max_iter, "restart": self.restart}


def truncated_kernel_hat(s, kappa: float, R: float = TRUNCATION_RADIUS):
    """Fourier transform of ``(i/4) H_0^(1)(kappa |x|)`` restricted to ``|x| < R``.

    ``s`` is the radial frequency.  The removable singularity at ``s = kappa``
    is replaced by its limit.
    """
    s = np.asarray(s, dtype=float)
    h0 = special.hankel1(0, kappa * R)
    h1 = special.hankel1(1, kappa * R)
    num = 1.0 + 0.5j * np.pi * R * (s * special.j1(s * R) * h0 - kappa * special.j0(s * R) * h1)
    den = s**2 - kappa**2
    near = np.abs(den) < 1e-6 * kappa**2
    out = np.empty(s.shape, dtype=np.complex128)
    out[~near] = num[~near] / den[~near]
    kr = kappa * R
    out[near] = 0.5j * np.pi * R * kr * (special.j0(kr) * h0 + special.j1(kr) * h1) / (2 * kappa)
    return out


class HelmholtzSolver:
    """Lippmann-Schwinger solver on a fixed grid and energy."""

    def __init__(self, grid: SpatialGrid, E: float, cfg: ForwardSolverConfig | None = None):
        if E <= 0:
            raise ValueError("energy must be positive")
        self.grid = grid
        self.E = float(E)
        self.cfg = cfg or ForwardSolverConfig()
        N = grid.N
        self.P = fft.next_fast_len(math.ceil(2.0 * self.cfg.pad_factor / grid.h - 1e-9))
        xi = 2 * np.pi * fft.fftfreq(self.P, d=grid.h)
        X1, X2 = np.meshgrid(xi, xi, indexing="ij")
        self.kernel_hat = truncated_kernel_hat(np.hypot(X1, X2), math.sqrt(self.E))
        self._N = N
        self.solves = 0
        self.iterations: list[int] = []

    def convolve(self, u: np.ndarray) -> np.ndarray:
        """``K * u`` sampled on the grid, for ``u`` given on the grid."""
        N = self._N
        U = np.zeros((self.P, self.P), dtype=np.complex128)
        U[:N, :N] = u
        return fft.ifft2(fft.fft2(U) * self.kernel_hat)[:N, :N]

    def plane_wave(self, k) -> np.ndarray:
        x1, x2 = self.grid.mesh
        return np.exp(1j * (k[0] * x1 + k[1] * x2))

    def _check_energy(self, k):
        if abs(k[0] ** 2 + k[1] ** 2 - self.E) > 1e-9 * self.E:
            raise ValueError(f"wave vector {tuple(k)} does not match energy {self.E}")

    def solve(self, v, k, index=None) -> np.ndarray:
        """Total field for incident direction ``k``; returns an ``N x N`` array."""
        k = np.asarray(k, dtype=float)
        self._check_energy(k)
        vals = v.values if isinstance(v, GridFunction) else np.asarray(v)
        inc = self.plane_wave(k)
        if not np.any(vals):
            return inc
        N = self._N
        n2 = N * N

        def matvec(z):
            u = z.reshape(N, N)
            return (u + self.convolve(vals * u)).ravel()

        op = LinearOperator((n2, n2), matvec=matvec, dtype=np.complex128)
        count = [0]

        def cb(_):
            count[0] += 1

        restart = min(self.cfg.restart, self.cfg.ls_max_iter)
        maxiter = math.ceil(self.cfg.ls_max_iter / restart)
        b = inc.ravel()
        psi, info = gmres(op, b, rtol=self.cfg.ls_tol, atol=0.0, restart=restart,
                          maxiter=maxiter, callback=cb, callback_type="pr_norm")
        res = np.linalg.norm(matvec(psi) - b) / np.linalg.norm(b)
        self.solves += 1
        self.iterations.append(count[0])
        if info != 0 or res > 10 * self.cfg.ls_tol:
            raise ForwardSolverError(
                f"GMRES did not converge for direction {index}: residual {res:.2e}",
                index=index, residual=res)
        return psi.reshape(N, N)

    def solve_many(self, v, directions) -> np.ndarray:
        directions = np.reshape(directions, (-1, 2))
        return np.stack([self.solve(v, k, index=i) for i, k in enumerate(directions)])

    def far_field(self, v, psi, l) -> np.ndarray:
        """``f(k, l) = (2 pi)^-2 h^2 sum_x exp(-i l.x) v psi`` for one or more ``l``."""
        vals = v.values if isinstance(v, GridFunction) else np.asarray(v)
        l = np.reshape(np.asarray(l, dtype=float), (-1, 2))
        scale = (math.pi * self._N) ** -2
        return scale * kernels.ndft_sum(vals * psi, self.grid.coords, -l)


@lru_cache(maxsize=8)
def get_solver(N: int, E: float, cfg: ForwardSolverConfig) -> HelmholtzSolver:
    return HelmholtzSolver(SpatialGrid(N), E, cfg)


def solve_total_field(v: GridFunction, k, cfg: ForwardSolverConfig | None = None,
                      E: float | None = None) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    E = float(k @ k) if E is None else E
    return get_solver(v.grid.N, E, cfg or ForwardSolverConfig()).solve(v, k)


def far_field(v: GridFunction, psi, l) -> complex:
    scale = (math.pi * v.grid.N) ** -2
    l = np.asarray(l, dtype=float).reshape(-1, 2)
    out = scale * kernels.ndft_sum(v.values * psi, v.grid.coords, -l)
    return out[0] if len(out) == 1 else out


@dataclass(eq=False)
class FarFieldSet:
    geometry: MeasurementGeometry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128).ravel()
        if len(self.values) != self.geometry.M:
            raise ValueError("far-field length must equal the number of pairs")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "re", "im"])
            for m, z in enumerate(self.values):
                w.writerow([m, repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def read_csv(cls, path, geometry: MeasurementGeometry) -> "FarFieldSet":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        values = np.zeros(geometry.M, dtype=np.complex128)
        values[rows[:, 0].astype(int)] = rows[:, 1] + 1j * rows[:, 2]
        return cls(geometry, values)


def scattering_amplitudes(v: GridFunction, geom: MeasurementGeometry,
                          cfg: ForwardSolverConfig | None = None,
                          solver: HelmholtzSolver | None = None) -> FarFieldSet:
    """Far-field amplitudes for every pair of ``geom``.

    One linear solve per distinct incident direction; the field is reused for
    all scattered directions sharing it.
    """
    solver = solver or get_solver(v.grid.N, geom.E, cfg or ForwardSolverConfig())
    out = np.zeros(geom.M, dtype=np.complex128)
    if not np.any(v.values):
        return FarFieldSet(geom, out)
    for i, k in enumerate(geom.incident):
        idx = geom.pairs_for_incident(i)
        try:
            psi = solver.solve(v, k, index=i)
        except ForwardSolverError as err:
            raise ForwardSolverError(f"incident direction {i}: {err}", index=i,
                                     residual=err.residual) from err
        out[idx] = solver.far_field(v, psi, geom.l[idx])
    return FarFieldSet(geom, out)


class FieldCache:
    """Total fields for a fixed potential, keyed by direction."""

    def __init__(self, solver: HelmholtzSolver, v):
        self.solver = solver
        self.v = v
        self._fields: dict[tuple, np.ndarray] = {}
        self.misses = 0

    def fields(self, directions) -> np.ndarray:
        directions = np.reshape(directions, (-1, 2))
        uniq, inv = unique_points(directions)
        out = []
        for d in uniq:
            key = tuple(np.rint(d * 1e9).astype(np.int64))
            if key not in self._fields:
                self.misses += 1
                self._fields[key] = self.solver.solve(self.v, d)
            out.append(self._fields[key])
        return np.stack(out)[inv]
