"""Phaseless datasets and the particle-count (Poisson) noise model."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .forward import ForwardSolverConfig, scattering_amplitudes
from .geometry import MeasurementGeometry
from .potentials import BackgroundSet, GridFunction


@dataclass(eq=False)
class PhaselessDataset:
    """Intensities ``F[l, m] = |f(v + w_l; k_m, l_m)|^2`` with ``w_0 = 0``.

    ``exposures[l, i]`` is the exposure time for background ``l`` and incident
    direction ``i`` (index into ``geometry.incident``); ``None`` for exact data.
    """

    geometry: MeasurementGeometry
    F: np.ndarray
    exposures: np.ndarray | None = None
    Np: float | None = None
    seed: int | None = None
    exact: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        if self.F.shape[1] != self.geometry.M:
            raise ValueError("intensity arrays must have one entry per measurement pair")
        if np.any(self.F < 0):
            raise ValueError("intensities must be nonnegative")

    @property
    def L(self) -> int:
        return self.F.shape[0] - 1

    def exposure_per_pair(self) -> np.ndarray:
        """Exposure times broadcast to shape ``(L + 1, M)``."""
        if self.exposures is None:
            raise ValueError("dataset carries no exposure times")
        return self.exposures[:, self.geometry.incident_index]

    def header(self) -> dict:
        g = self.geometry
        return {"E": g.E, "K": g.K, "L": self.L, "M1": g.M1, "M2": g.M2,
                "style": g.style, "Np": self.Np, "seed": self.seed}

    def write(self, path) -> None:
        """JSON header line followed by a CSV body ``m, F0..FL, t0..tL``."""
        L = self.L
        cols = ["m"] + [f"F{j}" for j in range(L + 1)]
        body = [np.arange(self.geometry.M)[:, None], self.F.T]
        if self.exposures is not None:
            cols += [f"t{j}" for j in range(L + 1)]
            body.append(self.exposure_per_pair().T)
        arr = np.hstack(body)
        buf = io.StringIO()
        buf.write(json.dumps(self.header()) + "\n")
        buf.write(",".join(cols) + "\n")
        for row in arr:
            buf.write(str(int(row[0])) + "," + ",".join(repr(float(x)) for x in row[1:]) + "\n")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def read(cls, path) -> "PhaselessDataset":
        from .geometry import MeasurementGeometry as MG

        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        cols = lines[1].split(",")
        geom = MG.from_json(head)
        arr = np.loadtxt(lines[2:], delimiter=",", ndmin=2)
        L = head["L"]
        F = arr[:, 1:L + 2].T
        exposures = None
        if len(cols) > L + 2:
            t = arr[:, L + 2:].T
            exposures = np.zeros((L + 1, geom.K))
            exposures[:, geom.incident_index] = t
        return cls(geom, F, exposures, head.get("Np"), head.get("seed"))


def exact_dataset(v: GridFunction, backgrounds: BackgroundSet | None,
                  geom: MeasurementGeometry, cfg: ForwardSolverConfig | None = None,
                  return_amplitudes: bool = False):
    """Noise-free intensities for ``v`` and each ``v + w_l``."""
    members = [] if backgrounds is None else list(backgrounds.members)
    amps = [scattering_amplitudes(v, geom, cfg).values]
    amps += [scattering_amplitudes(v + w, geom, cfg).values for w in members]
    amps = np.array(amps)
    data = PhaselessDataset(geom, np.abs(amps) ** 2)
    return (data, amps) if return_amplitudes else data


def exposure_times(F: np.ndarray, geom: MeasurementGeometry, Np: float) -> np.ndarray:
    """``t_l(k) = Np / (K (L+1) sigma_l(k))`` with ``sigma_l(k)`` the total
    intensity on the circle of incident direction ``k``; ``nan`` where the
    circle carries no intensity."""
    n_rows = F.shape[0]
    sigma = np.zeros((n_rows, geom.K))
    for j in range(n_rows):
        sigma[j] = np.bincount(geom.incident_index, weights=F[j], minlength=geom.K)
    with np.errstate(divide="ignore"):
        t = Np / (geom.K * n_rows * sigma)
    t[sigma == 0] = np.nan
    return t


def apply_poisson(data: PhaselessDataset, Np: float, seed: int | None = None) -> PhaselessDataset:
    """Replace each intensity by ``Pois(t F) / t``.

    Circles with zero total intensity get no exposure and are passed through.
    """
    if not Np > 0:
        raise ValueError("particle budget Np must be positive")
    exact = data.exact if data.exact is not None else data.F
    t = exposure_times(exact, data.geometry, Np)
    tm = t[:, data.geometry.incident_index]
    rng = np.random.default_rng(seed)
    lam = np.where(np.isnan(tm), 0.0, tm * exact)
    counts = rng.poisson(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        noisy = np.where(np.isnan(tm), exact, counts / tm)
    return replace(data, F=noisy, exposures=t, Np=float(Np), seed=seed, exact=exact)


def noise_level_estimate(data: PhaselessDataset, weighted: bool = False) -> float:
    """Estimated ``sqrt(E ||F - F_exact||^2) = sqrt(sum t^-1 F)``.

    With ``weighted`` the estimate refers to the residual weighted by
    ``t^(1/2)``, i.e. ``sqrt(sum F)``.
    """
    if data.exposures is None:
        raise ValueError("noise level needs exposure times")
    t = data.exposure_per_pair()
    ok = ~np.isnan(t)
    if weighted:
        return math.sqrt(float(np.sum(data.F[ok])))
    return math.sqrt(float(np.sum(data.F[ok] / t[ok])))


def relative_data_error(data: PhaselessDataset) -> float:
    """``||F - F_exact||_2 / ||F_exact||_2`` over all backgrounds and pairs."""
    if data.exact is None:
        return 0.0
    return float(np.linalg.norm(data.F - data.exact) / np.linalg.norm(data.exact))
