import math

import numpy as np
import pytest

from phaseless.forward import (FarFieldSet, ForwardSolverConfig, ForwardSolverError,
                               HelmholtzSolver, far_field, scattering_amplitudes,
                               solve_total_field, truncated_kernel_hat)
from phaseless.geometry import build_ewald_geometry, build_spatial_grid, fourier_setup, pushforward
from phaseless.ndft import ndft_forward
from phaseless.potentials import GridFunction, peaks_potential, wendland_bump

E = 36.0
GRID = build_spatial_grid(E)


def bump(eps):
    return GridFunction(GRID, eps * wendland_bump(GRID, (0.1, -0.1), 0.6, 1).values)


def test_config_validation():
    with pytest.raises(ValueError):
        ForwardSolverConfig(pad_factor=1.0)
    with pytest.raises(ValueError):
        ForwardSolverConfig(ls_tol=0.0)
    with pytest.raises(ValueError):
        ForwardSolverConfig(ls_tol=0.1)


def test_kernel_hat_matches_quadrature():
    # radial transform 2 pi int_0^R J0(s r) (i/4) H0(kappa r) r dr by dense quadrature
    from scipy import integrate, special
    kappa, R = 6.0, 2 * math.sqrt(2)
    for s in (0.0, 3.0, 11.0):
        def f(r, part):
            val = 2 * np.pi * special.j0(s * r) * 0.25j * special.hankel1(0, kappa * r) * r
            return val.real if part == 0 else val.imag
        re = integrate.quad(f, 0, R, args=(0,), limit=400)[0]
        im = integrate.quad(f, 0, R, args=(1,), limit=400)[0]
        assert truncated_kernel_hat(np.array(s), kappa, R) == pytest.approx(re + 1j * im, rel=1e-6)


def test_zero_potential_gives_plane_wave():
    k = np.array([6.0, 0.0])
    psi = solve_total_field(GridFunction(GRID, np.zeros((GRID.N, GRID.N))), k)
    x1, x2 = GRID.mesh
    np.testing.assert_array_equal(psi, np.exp(1j * 6.0 * x1))


def test_energy_mismatch_rejected():
    solver = HelmholtzSolver(GRID, E)
    with pytest.raises(ValueError):
        solver.solve(bump(1.0), [5.0, 0.0])


def test_field_perturbation_is_first_order():
    solver = HelmholtzSolver(GRID, E)
    k = np.array([0.0, 6.0])
    inc = solver.plane_wave(k)
    d = []
    for eps in (0.1, 0.05):
        v = bump(eps)
        born = inc - solver.convolve(v.values * inc)
        d.append(np.linalg.norm(solver.solve(v, k) - born))
    assert d[0] / d[1] == pytest.approx(4.0, rel=0.25)


def test_born_limit_of_far_field():
    geom = build_ewald_geometry(E, 4, 16)
    defects = []
    for eps in (0.1, 0.05):
        v = bump(eps)
        f = scattering_amplitudes(v, geom).values
        defects.append(np.max(np.abs(f - ndft_forward(v, geom.p).values)))
    assert defects[0] / defects[1] == pytest.approx(4.0, rel=0.25)


def test_born_term_linear_in_v():
    solver = HelmholtzSolver(GRID, E)
    k = np.array([6.0, 0.0])
    inc = solver.plane_wave(k)
    a, b = bump(1.0), peaks_potential(GRID, norm_inf=1.0)
    l = np.array([[0.0, 6.0], [-6.0, 0.0]])
    lhs = solver.far_field(2 * a.values - 3 * b.values, inc, l)
    rhs = 2 * solver.far_field(a, inc, l) - 3 * solver.far_field(b, inc, l)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13)


def test_reciprocity_strong_scatterer():
    v = peaks_potential(GRID, norm_inf=10.0)
    geom = build_ewald_geometry(E, 8, 8)
    f = scattering_amplitudes(v, geom).values
    for m in range(0, geom.M, 5):
        k, l = geom.k[m], geom.l[m]
        back = np.flatnonzero(np.all(np.isclose(geom.k, -l), 1) & np.all(np.isclose(geom.l, -k), 1))
        assert len(back) == 1
        assert abs(f[m] - f[back[0]]) <= 1e-4 * abs(f[m])


def test_one_solve_per_incident_direction():
    solver = HelmholtzSolver(GRID, E)
    geom = build_ewald_geometry(E, 8, 30)
    scattering_amplitudes(bump(1.0), geom, solver=solver)
    assert solver.solves == 8


def test_zero_potential_amplitudes():
    geom = build_ewald_geometry(E, 3, 5)
    assert np.all(scattering_amplitudes(GridFunction(GRID, np.zeros((GRID.N,) * 2)), geom).values == 0)


def test_forward_scattering_equals_pushforward_at_origin():
    geom = build_ewald_geometry(E, 4, 8)
    v = bump(1.0)
    f = scattering_amplitudes(v, geom).values
    fg = fourier_setup(GRID, geom)
    zero = np.flatnonzero(np.all(np.abs(fg.gamma_m) < 1e-9, 1))[0]
    members = fg.pushforward_groups[zero]
    assert pushforward(f, fg)[zero] == pytest.approx(np.mean(f[members]))
    psi = solve_total_field(v, geom.k[members[0]])
    assert far_field(v, psi, geom.k[members[0]]) == pytest.approx(f[members[0]], rel=1e-12)


def test_deterministic():
    geom = build_ewald_geometry(E, 2, 4)
    v = peaks_potential(GRID, norm_inf=5.0)
    a = scattering_amplitudes(v, geom, solver=HelmholtzSolver(GRID, E)).values
    b = scattering_amplitudes(v, geom, solver=HelmholtzSolver(GRID, E)).values
    np.testing.assert_array_equal(a, b)


def test_solver_failure_reports_direction():
    cfg = ForwardSolverConfig(ls_tol=1e-12, ls_max_iter=2, restart=2)
    geom = build_ewald_geometry(E, 2, 2)
    with pytest.raises(ForwardSolverError) as err:
        scattering_amplitudes(peaks_potential(GRID, norm_inf=20.0), geom, cfg)
    assert err.value.index == 0
    assert err.value.residual > 1e-12


def test_far_field_csv(tmp_path):
    geom = build_ewald_geometry(E, 2, 3)
    vals = np.arange(6) - 1j
    FarFieldSet(geom, vals).write_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(FarFieldSet.read_csv(tmp_path / "f.csv", geom).values, vals)
