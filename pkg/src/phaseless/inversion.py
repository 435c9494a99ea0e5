"""Phaseless reconstruction with known background potentials.

Given intensities of ``v`` and of ``v + w_l`` for known ``w_l``, the complex
Fourier value ``U(p)`` of the unknown is recovered pointwise from a 2x2 linear
system (:func:`urec`).  The Born stage uses the transforms of the backgrounds
as reference values; later stages replace them by amplitudes simulated from
the current reconstruction, which turns the Born estimate into a phase
surrogate for the full far field.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .forward import ForwardSolverConfig, HelmholtzSolver, get_solver, scattering_amplitudes
from .geometry import FourierGrids, SpatialGrid, pushforward
from .measurement import PhaselessDataset
from .ndft import FourierField, FourierOperator, WeightTable, voronoi_weights, weighted_ls_inverse
from .potentials import BackgroundSet, GridFunction

log = logging.getLogger(__name__)

#: Relative threshold on the background determinant used when none is given.
DEFAULT_DELTA_REL = 1e-2

#: Reference systems with ``|zeta| <= SINGULAR_GUARD |W1| |W2|`` count as singular.
SINGULAR_GUARD = 1e-12


class SingularSystemError(ArithmeticError):
    pass


class InversionError(RuntimeError):
    pass


def zeta(W1, W2):
    """Determinant ``Re W1 Im W2 - Im W1 Re W2`` of the reference system."""
    W1 = np.asarray(W1)
    W2 = np.asarray(W2)
    return W1.real * W2.imag - W1.imag * W2.real


def _urec(W1, W2, F, F1, F2):
    z = zeta(W1, W2)
    b1 = F1 - F - np.abs(W1) ** 2
    b2 = F2 - F - np.abs(W2) ** 2
    # (x, y) = 1/2 M^-1 b with M = [[Re W1, Im W1], [Re W2, Im W2]]
    x = 0.5 * (W2.imag * b1 - W1.imag * b2) / z
    y = 0.5 * (W1.real * b2 - W2.real * b1) / z
    return x + 1j * y


def urec(W1, W2, F, F1, F2):
    """Recover ``U`` from ``F = |U|^2``, ``F1 = |U + W1|^2``, ``F2 = |U + W2|^2``.

    Works elementwise on arrays.  Raises :class:`SingularSystemError` if any
    reference pair is (numerically) collinear.
    """
    W1 = np.asarray(W1, dtype=np.complex128)
    W2 = np.asarray(W2, dtype=np.complex128)
    z = zeta(W1, W2)
    if np.any(np.abs(z) <= SINGULAR_GUARD * np.abs(W1) * np.abs(W2)) or np.any(z == 0):
        raise SingularSystemError("reference values are collinear (zeta = 0)")
    out = _urec(W1, W2, np.asarray(F, dtype=float), np.asarray(F1, dtype=float),
                np.asarray(F2, dtype=float))
    return out[()] if out.ndim == 0 else out


def best_pairs(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For reference values ``W`` of shape ``(L, P)``, the pair ``(a, b)`` with
    the largest ``|zeta|`` at each point and that ``|zeta|``.

    Pairs are enumerated lexicographically; ties go to the first pair.
    """
    L = W.shape[0]
    if L < 2:
        raise ValueError("at least two backgrounds are required")
    pairs = np.array(list(combinations(range(L), 2)))
    Z = np.abs(np.stack([zeta(W[a], W[b]) for a, b in pairs]))
    choice = np.argmax(Z, axis=0)
    return pairs[choice], Z[choice, np.arange(W.shape[1])]


def phased_surrogate(Pf_star, Pf_star_l, PF, pairs):
    """Evaluate the phase surrogate of ``(Phi f)(p)`` at a set of points.

    Parameters
    ----------
    Pf_star : (P,) complex
        Averaged amplitudes of the current reconstruction.
    Pf_star_l : (L, P) complex
        Averaged amplitudes of the reconstruction plus each background.
    PF : (L + 1, P) real
        Averaged measured intensities, row 0 without background.
    pairs : (P, 2) int
        Background pair (0-based) used at each point.

    Returns
    -------
    values : (P,) complex
        Surrogate values; 0 where the system is singular.
    singular : (P,) bool
    """
    idx = np.arange(len(Pf_star))
    a, b = pairs[:, 0], pairs[:, 1]
    W1 = Pf_star_l[a, idx] - Pf_star
    W2 = Pf_star_l[b, idx] - Pf_star
    z = zeta(W1, W2)
    singular = np.abs(z) <= SINGULAR_GUARD * np.abs(W1) * np.abs(W2)
    singular |= z == 0
    out = np.zeros(len(idx), dtype=np.complex128)
    ok = ~singular
    out[ok] = _urec(W1[ok], W2[ok], PF[0, ok], PF[a[ok] + 1, ok], PF[b[ok] + 1, ok])
    return out, singular


def default_cutoffs(E: float, J: int) -> np.ndarray:
    """``r_j = sqrt(E) (1 + j / (J + 1))`` for ``j = 1..J``."""
    if J < 1:
        raise ValueError("J must be at least 1")
    j = np.arange(1, J + 1)
    return math.sqrt(E) * (1 + j / (J + 1))


def default_iterations(Np: float | None) -> int:
    return 8 if Np is None or Np >= 1e8 else 3


def relative_linf_error(v_star: GridFunction, v_true: GridFunction) -> float:
    """``max |Re v* - v| / max |v|`` on the grid."""
    if v_star.grid.N != v_true.grid.N:
        raise ValueError("grid mismatch")
    scale = np.abs(v_true.values).max()
    if scale == 0:
        raise ValueError("true potential is identically zero")
    return float(np.abs(v_star.values.real - v_true.values).max() / scale)


def relative_l2_error(v_star: GridFunction, v_true: GridFunction) -> float:
    scale = np.linalg.norm(v_true.values)
    if scale == 0:
        raise ValueError("true potential is identically zero")
    return float(np.linalg.norm(v_star.values.real - v_true.values) / scale)


@dataclass
class CGOptions:
    tol: float = 1e-6
    max_iter: int = 50


@dataclass(eq=False)
class InversionState:
    """Reduced interior grid, chosen background pairs and the current iterate."""

    grid: SpatialGrid
    fourier: FourierGrids
    reduced: np.ndarray          # indices into gamma_m
    pairs: np.ndarray            # (len(reduced), 2) background pair per point
    zeta_best: np.ndarray
    weights: WeightTable
    PF: np.ndarray               # (L+1, len(reduced)) averaged intensities
    W: np.ndarray                # (L, len(reduced)) background transforms
    v_star: GridFunction | None = None
    U: FourierField | None = None
    iteration: int = 0

    @property
    def reduced_points(self) -> np.ndarray:
        return self.fourier.gamma_m[self.reduced]

    @property
    def fit_points(self) -> np.ndarray:
        return np.concatenate([self.reduced_points, self.fourier.gamma_e])

    def assemble(self, values_reduced: np.ndarray) -> FourierField:
        full = np.zeros(len(self.reduced) + len(self.fourier.gamma_e), dtype=np.complex128)
        full[: len(self.reduced)] = values_reduced
        return FourierField(self.fit_points, full)


@dataclass
class Diagnostics:
    cutoffs: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    errors_l2: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    cg_converged: list = field(default_factory=list)
    reduced_size: int = 0
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def prepare(data: PhaselessDataset, backgrounds: BackgroundSet, grid: SpatialGrid,
            fourier: FourierGrids, delta: float | None = None,
            delta_rel: float = DEFAULT_DELTA_REL) -> InversionState:
    """Background transforms, best pairs, reduced grid and Voronoi weights.

    The threshold is ``delta`` if given, else ``delta_rel * max |zeta|``.
    """
    L = len(backgrounds.members)
    if L < 2:
        raise ValueError("at least two backgrounds are required")
    if data.L != L:
        raise ValueError(f"dataset has {data.L} backgrounds, expected {L}")
    A = FourierOperator(grid, fourier.gamma_m)
    W = np.stack([A(w) for w in backgrounds.members])
    pairs, zbest = best_pairs(W)
    if delta is None:
        delta = delta_rel * zbest.max()
    reduced = np.flatnonzero(zbest > delta)
    if len(reduced) == 0:
        raise InversionError(f"threshold delta={delta:g} removes every Fourier point")
    PF = pushforward(data.F, fourier)[:, reduced]
    state = InversionState(grid, fourier, reduced, pairs[reduced], zbest[reduced], None,
                           PF, W[:, reduced])
    state.weights = voronoi_weights(state.fit_points, grid.fourier_half_width)
    return state


def _fit(state: InversionState, values_reduced, cg: CGOptions, diag: Diagnostics):
    U = state.assemble(values_reduced)
    res = weighted_ls_inverse(U, state.weights, state.grid, tol=cg.tol, max_iter=cg.max_iter)
    diag.cg_iterations.append(res.iterations)
    diag.cg_converged.append(bool(res.converged))
    state.U = U
    state.v_star = res.solution
    return res.solution


def _record(diag, v_star, truth):
    if truth is not None:
        diag.errors.append(relative_linf_error(v_star, truth))
        diag.errors_l2.append(relative_l2_error(v_star, truth))


def phaseless_born_inv(data: PhaselessDataset, backgrounds: BackgroundSet, grid: SpatialGrid,
                       fourier: FourierGrids, r1: float, delta: float | None = None,
                       cg: CGOptions | None = None, truth: GridFunction | None = None,
                       state: InversionState | None = None,
                       delta_rel: float = DEFAULT_DELTA_REL):
    """Born-stage reconstruction.

    Returns
    -------
    v_star : GridFunction
    state : InversionState
        Holds the reduced grid and Voronoi weights.
    diag : Diagnostics
    """
    t0 = time.perf_counter()
    cg = cg or CGOptions()
    state = state or prepare(data, backgrounds, grid, fourier, delta, delta_rel)
    diag = Diagnostics(reduced_size=int(len(state.reduced)))
    radius = np.hypot(*state.reduced_points.T)
    active = radius < r1
    a, b = state.pairs[:, 0], state.pairs[:, 1]
    idx = np.arange(len(state.reduced))
    U = np.zeros(len(state.reduced), dtype=np.complex128)
    U[active] = urec(state.W[a, idx][active], state.W[b, idx][active], state.PF[0, active],
                     state.PF[a + 1, idx][active], state.PF[b + 1, idx][active])
    v_star = _fit(state, U, cg, diag)
    state.iteration = 1
    diag.cutoffs.append(float(r1))
    diag.skipped.append(0)
    _record(diag, v_star, truth)
    diag.wall_time = time.perf_counter() - t0
    return v_star, state, diag


def simulated_amplitudes(v_star: GridFunction, backgrounds: BackgroundSet, state: InversionState,
                         geom, solver: HelmholtzSolver):
    """Pushed-forward amplitudes of ``v*`` and ``v* + w_l`` on the reduced grid."""
    f = scattering_amplitudes(v_star, geom, solver=solver).values
    fl = [scattering_amplitudes(v_star + w, geom, solver=solver).values
          for w in backgrounds.members]
    P = pushforward(np.vstack([f] + fl), state.fourier)[:, state.reduced]
    return P[0], P[1:]


def phaseless_iterative_inv(data: PhaselessDataset, backgrounds: BackgroundSet,
                            grid: SpatialGrid, fourier: FourierGrids, cutoffs,
                            delta: float | None = None,
                            fwd: ForwardSolverConfig | None = None,
                            cg: CGOptions | None = None,
                            truth: GridFunction | None = None,
                            pair_rule: str = "stable",
                            delta_rel: float = DEFAULT_DELTA_REL):
    """Born stage followed by ``J - 1`` phase-surrogate refinements.

    ``pair_rule`` selects the background pair used by the surrogate at each
    point: ``"stable"`` maximises the surrogate determinant ``|zeta*|`` built
    from the simulated amplitudes, ``"background"`` reuses the Born-stage
    choice based on the background transforms.  The two coincide for two
    backgrounds.

    Returns ``(v_star, diagnostics)``; with ``len(cutoffs) == 1`` the result is
    the Born-stage reconstruction.
    """
    if pair_rule not in ("stable", "background"):
        raise ValueError(f"unknown pair rule {pair_rule!r}")
    t0 = time.perf_counter()
    cutoffs = np.asarray(cutoffs, dtype=float)
    if len(cutoffs) == 0:
        raise ValueError("need at least one cutoff")
    if np.any(np.diff(cutoffs) < 0) or cutoffs[-1] > 2 * math.sqrt(data.geometry.E) + 1e-12:
        raise ValueError("cutoffs must be nondecreasing and at most 2 sqrt(E)")
    cg = cg or CGOptions()
    v_star, state, diag = phaseless_born_inv(data, backgrounds, grid, fourier, cutoffs[0],
                                             delta, cg, truth, delta_rel=delta_rel)
    solver = get_solver(grid.N, data.geometry.E, fwd or ForwardSolverConfig())
    A = FourierOperator(grid, state.reduced_points)
    radius = np.hypot(*state.reduced_points.T)
    for j, r in enumerate(cutoffs[1:], start=2):
        try:
            Pf, Pfl = simulated_amplitudes(v_star, backgrounds, state, data.geometry, solver)
        except RuntimeError as err:
            raise InversionError(f"forward solve failed in iteration {j}: {err}") from err
        active = radius < r
        if pair_rule == "stable":
            pairs, _ = best_pairs(Pfl[:, active] - Pf[active])
        else:
            pairs = state.pairs[active]
        sur, singular = phased_surrogate(Pf[active], Pfl[:, active], state.PF[:, active], pairs)
        U = np.zeros(len(state.reduced), dtype=np.complex128)
        Av = A(v_star)
        U[active] = np.where(singular, 0.0, Av[active] + sur - Pf[active])
        v_star = _fit(state, U, cg, diag)
        state.iteration = j
        diag.cutoffs.append(float(r))
        diag.skipped.append(int(singular.sum()))
        _record(diag, v_star, truth)
        log.info("iteration %d: cutoff %.3f, skipped %d, cg %d, error %s", j, r,
                 singular.sum(), diag.cg_iterations[-1], diag.errors[-1] if diag.errors else None)
    diag.wall_time = time.perf_counter() - t0
    return v_star, diag
