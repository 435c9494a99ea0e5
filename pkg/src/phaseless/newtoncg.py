"""Newton-CG refinement for the phaseless problem.

The forward map sends a potential ``v`` to the stacked intensities
``|f(v + w_l; k_m, l_m)|^2`` for ``l = 0..L`` (``w_0 = 0``).  Because the
discretised Lippmann-Schwinger matrix is complex symmetric, the derivative of
an amplitude is exactly

    df(k, l)[h] = (pi N)^-2 sum_x psi(x; -l) h(x) psi(x; k),

with ``psi(.; d)`` the total field for incident direction ``d``.  Each outer
step solves the linearised equation by CGLS in the ``H^1`` inner product
``<g, (I - w Delta) h>`` and stops the inner loop once the linear residual has
dropped by the factor ``inner_tol``.  The outer loop stops by the discrepancy
principle.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .forward import FieldCache, ForwardSolverConfig, HelmholtzSolver, get_solver
from .geometry import MeasurementGeometry, unique_points
from .measurement import PhaselessDataset
from .potentials import BackgroundSet, GridFunction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonCgConfig:
    """Settings for :func:`newton_cg_refine`.

    Parameters
    ----------
    tau_dp : float
        Discrepancy factor; the loop stops once the residual is at most
        ``tau_dp`` times the noise level.
    max_outer, max_inner : int
        Caps on Newton steps and on CG steps per Newton step.
    inner_tol : float
        Inner CG stops when the linearised residual falls below
        ``inner_tol`` times its initial value.
    h1_weight : float
        Weight of the gradient term in the preimage norm.
    weighting : {"none", "exposure"}
        ``"exposure"`` scales every datum by ``t^(1/2)``.
    max_backtrack : int
        A Newton step that increases the residual is halved up to this many
        times.  With 0 every step is taken as computed.
    """

    tau_dp: float = 1.2
    max_outer: int = 20
    max_inner: int = 30
    inner_tol: float = 0.7
    h1_weight: float = 1.0
    weighting: str = "none"
    max_backtrack: int = 3

    def __post_init__(self):
        if self.tau_dp <= 1:
            raise ValueError("tau_dp must exceed 1")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be positive")
        if not 0 < self.inner_tol < 1:
            raise ValueError("inner_tol must lie in (0, 1)")
        if self.h1_weight < 0:
            raise ValueError("h1_weight must be nonnegative")
        if self.max_backtrack < 0:
            raise ValueError("max_backtrack must be nonnegative")
        if self.weighting not in ("none", "exposure"):
            raise ValueError(f"unknown weighting {self.weighting!r}")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class Linearization:
    """Fields, amplitudes and intensities of the model at one potential."""

    v: GridFunction
    amplitudes: np.ndarray       # (L+1, M) complex
    intensities: np.ndarray      # (L+1, M)
    inc_fields: list             # per potential: (K, N, N) fields for incident directions
    out_fields: list             # per potential: (D, N*N) fields for directions -l


class PhaselessModel:
    """Forward map, derivative and adjoint for fixed backgrounds and geometry."""

    def __init__(self, backgrounds: BackgroundSet | None, geom: MeasurementGeometry, grid,
                 fwd: ForwardSolverConfig | None = None, weights: np.ndarray | None = None,
                 h1_weight: float = 1.0, solver: HelmholtzSolver | None = None):
        self.backgrounds = [] if backgrounds is None else list(backgrounds.members)
        self.geom = geom
        self.grid = grid
        self.solver = solver or get_solver(grid.N, geom.E, fwd or ForwardSolverConfig())
        self.scale = (math.pi * grid.N) ** -2
        self.h1_weight = h1_weight
        self.out_dirs, self.out_index = unique_points(-geom.l)
        n = 1 + len(self.backgrounds)
        self.weights = np.ones((n, geom.M)) if weights is None else np.broadcast_to(weights, (n, geom.M))
        xi = math.pi * np.fft.fftfreq(grid.N, d=1.0 / grid.N)
        X1, X2 = np.meshgrid(xi, xi, indexing="ij")
        self._lap = X1**2 + X2**2
        self.solves = 0

    @property
    def potentials_count(self) -> int:
        return 1 + len(self.backgrounds)

    def linearize(self, v: GridFunction) -> Linearization:
        g = self.geom
        amps, inc, out = [], [], []
        for w in [None] + self.backgrounds:
            u = v if w is None else v + w
            cache = FieldCache(self.solver, u)
            psi_k = cache.fields(g.incident)
            psi_l = cache.fields(self.out_dirs).reshape(len(self.out_dirs), -1)
            self.solves += cache.misses
            f = np.empty(g.M, dtype=np.complex128)
            for i in range(g.K):
                idx = g.pairs_for_incident(i)
                f[idx] = self.solver.far_field(u, psi_k[i], g.l[idx])
            amps.append(f)
            inc.append(psi_k)
            out.append(psi_l)
        amps = np.array(amps)
        return Linearization(v, amps, np.abs(amps) ** 2, inc, out)

    def evaluate(self, v: GridFunction) -> np.ndarray:
        """Weighted stacked intensities, shape ``((L+1) M,)``."""
        return (self.weights * self.linearize(v).intensities).ravel()

    def derivative(self, lin: Linearization, h) -> np.ndarray:
        h = h.values if isinstance(h, GridFunction) else np.asarray(h)
        g = self.geom
        out = np.empty((self.potentials_count, g.M))
        hv = h.ravel()
        for j in range(self.potentials_count):
            df = np.empty(g.M, dtype=np.complex128)
            for i in range(g.K):
                idx = g.pairs_for_incident(i)
                b = lin.inc_fields[j][i].ravel() * hv
                df[idx] = lin.out_fields[j][self.out_index[idx]] @ b
            df *= self.scale
            out[j] = 2 * np.real(np.conj(lin.amplitudes[j]) * df)
        return (self.weights * out).ravel()

    def adjoint(self, lin: Linearization, r, gram: bool = True) -> np.ndarray:
        """Adjoint of :meth:`derivative`.

        With ``gram=False`` it is the adjoint for the pairing
        ``Re sum conj(g) h``; with ``gram=True`` the inverse ``H^1`` Gram
        operator is applied on top.
        """
        g = self.geom
        N = self.grid.N
        r = (self.weights * np.reshape(r, (self.potentials_count, g.M)))
        acc = np.zeros(N * N, dtype=np.complex128)
        for j in range(self.potentials_count):
            c = 2 * self.scale * r[j] * lin.amplitudes[j]
            for i in range(g.K):
                idx = g.pairs_for_incident(i)
                rows = lin.out_fields[j][self.out_index[idx]]
                acc += np.conj(lin.inc_fields[j][i].ravel()) * (rows.conj().T @ c[idx])
        out = acc.reshape(N, N)
        return self.gram_inverse(out) if gram else out

    def gram(self, h: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(np.fft.fft2(h) * (1 + self.h1_weight * self._lap))

    def gram_inverse(self, h: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(np.fft.fft2(h) / (1 + self.h1_weight * self._lap))


def phaseless_forward_operator(v: GridFunction, backgrounds: BackgroundSet | None,
                               geom: MeasurementGeometry, fwd: ForwardSolverConfig | None = None,
                               weights=None) -> np.ndarray:
    return PhaselessModel(backgrounds, geom, v.grid, fwd, weights).evaluate(v)


def derivative_apply(model: PhaselessModel, lin: Linearization, h) -> np.ndarray:
    return model.derivative(lin, h)


def adjoint_apply(model: PhaselessModel, lin: Linearization, residual, gram: bool = True):
    return GridFunction(model.grid, model.adjoint(lin, residual, gram=gram))


@dataclass
class NewtonResult:
    v: GridFunction
    log: list = field(default_factory=list)
    stopped_by: str = ""

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")


def _cgls(model: PhaselessModel, lin: Linearization, rhs: np.ndarray, cfg: NewtonCgConfig):
    """CGLS for ``T h = rhs`` in the ``H^1`` preimage inner product."""
    N = model.grid.N
    h = np.zeros((N, N), dtype=np.complex128)
    s = rhs.copy()
    r0 = np.linalg.norm(rhs)
    z = model.adjoint(lin, s, gram=False)
    q = model.gram_inverse(z)
    gamma = np.vdot(q, z).real
    p = q.copy()
    k = 0
    while k < cfg.max_inner and np.linalg.norm(s) > cfg.inner_tol * r0 and gamma > 0:
        t = model.derivative(lin, p)
        tt = np.dot(t, t)
        if tt == 0:
            break
        alpha = gamma / tt
        h += alpha * p
        s -= alpha * t
        k += 1
        z = model.adjoint(lin, s, gram=False)
        q = model.gram_inverse(z)
        gamma_new = np.vdot(q, z).real
        p = q + (gamma_new / gamma) * p
        gamma = gamma_new
    return h, k


def newton_cg_refine(v0: GridFunction, data: PhaselessDataset, backgrounds: BackgroundSet | None,
                     noise_level: float, cfg: NewtonCgConfig | None = None,
                     fwd: ForwardSolverConfig | None = None,
                     truth: GridFunction | None = None) -> NewtonResult:
    """Refine ``v0`` by Newton-CG until the discrepancy principle holds.

    ``noise_level`` must refer to the same data norm as ``cfg.weighting``
    (see :func:`phaseless.measurement.noise_level_estimate`).  The loop also
    ends, returning the best iterate, when no halving of a step lowers the
    residual (``"stalled"``) or, without halving, when the residual grows in
    three consecutive steps (``"divergence"``).
    """
    from .inversion import relative_linf_error

    cfg = cfg or NewtonCgConfig()
    weights = None
    if cfg.weighting == "exposure":
        weights = np.sqrt(np.nan_to_num(data.exposure_per_pair(), nan=0.0))
    model = PhaselessModel(backgrounds, data.geometry, v0.grid, fwd, weights, cfg.h1_weight)
    y = (model.weights * data.F).ravel()
    v = GridFunction(v0.grid, v0.values.copy(), v0.label)
    lin = model.linearize(v)
    res = np.linalg.norm(y - (model.weights * lin.intensities).ravel())
    result = NewtonResult(v)
    best = (res, v)
    rises = 0

    def record(outer, cg_iters):
        rec = {"outer": outer, "residual": float(res), "cg_iters": cg_iters}
        if truth is not None:
            rec["error_if_truth_known"] = relative_linf_error(v, truth)
        result.log.append(rec)

    record(0, 0)
    threshold = cfg.tau_dp * noise_level
    for outer in range(1, cfg.max_outer + 1):
        if res <= threshold:
            result.stopped_by = "discrepancy"
            break
        rhs = y - (model.weights * lin.intensities).ravel()
        h, k = _cgls(model, lin, rhs, cfg)
        prev = res
        for halving in range(cfg.max_backtrack + 1):
            trial = v + h
            lin_t = model.linearize(trial)
            res_t = np.linalg.norm(y - (model.weights * lin_t.intensities).ravel())
            if res_t <= prev:
                break
            h = 0.5 * h
        if cfg.max_backtrack and res_t > prev:
            # no halving of the step reduced the residual
            result.stopped_by = "stalled"
            result.v = best[1]
            return result
        v, lin, res = trial, lin_t, res_t
        record(outer, k)
        log.info("newton step %d: residual %.4e (cg %d, halvings %d)", outer, res, k, halving)
        if res < best[0]:
            best = (res, v)
        rises = rises + 1 if res > prev else 0
        if rises >= 3:
            result.stopped_by = "divergence"
            result.v = best[1]
            return result
    else:
        result.stopped_by = "discrepancy" if res <= threshold else "max_outer"
    result.v = v
    return result
