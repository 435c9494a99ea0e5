import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phaseless.geometry import SpatialGrid, build_spatial_grid
from phaseless.inversion import zeta
from phaseless.ndft import ndft_forward
from phaseless.potentials import (ROBUSTNESS_PERTURBATION, BackgroundSet, GridFunction,
                                  Perturbation, corner_rectangles, make_type_a, make_type_b,
                                  nonsmooth_potential, peaks_potential, perturb_background,
                                  rectangle_bump, wendland, wendland_bump)

G50 = build_spatial_grid(100)


def test_peaks_zero_factor():
    assert np.all(peaks_potential(G50, factor=0.0).values == 0)


def test_peaks_norm_inf_exact():
    v = peaks_potential(G50, norm_inf=37.0)
    assert np.abs(v.values).max() == pytest.approx(37.0, rel=1e-15)
    assert v.is_real()


def test_peaks_reference_norms():
    l1, l2, linf = peaks_potential(G50, norm_inf=37.0).norms()
    assert l1 == pytest.approx(13.5, rel=0.15)
    assert l2 == pytest.approx(14.3, rel=0.15)
    assert linf == pytest.approx(37.0)


def test_peaks_rejects_bad_scale():
    with pytest.raises(ValueError):
        peaks_potential(G50, norm_inf=-1.0)
    with pytest.raises(ValueError):
        peaks_potential(G50)


def test_wendland_values():
    assert wendland(0.0, 0) == 1 and wendland(0.0, 1) == 1
    assert wendland(1.0, 0) == 0 and wendland(1.0, 1) == 0
    assert wendland(0.5, 1) == pytest.approx(0.1875)
    assert wendland(0.5, 0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        wendland(0.2, 2)


def test_wendland_bump_centre_and_support():
    g = SpatialGrid(50)
    w = wendland_bump(g, (0.0, 0.0), 0.4, 1)
    assert w.values[25, 25] == 1.0
    x1, x2 = g.mesh
    assert np.all(w.values[np.hypot(x1, x2) >= 0.4] == 0)


def test_rectangle_examples():
    assert np.all(rectangle_bump(G50, (0, 0), (0.3, 0.3), 0.0).values == 0)
    full = rectangle_bump(G50, (-1, -1), (1, 1), 2.5)
    assert np.all(full.values == 2.5)
    # points 0.04 n with 0 <= 0.04 n <= 0.3: n = 0..7 on each axis
    assert np.count_nonzero(rectangle_bump(G50, (0, 0), (0.3, 0.3)).values) == 64
    with pytest.raises(ValueError):
        rectangle_bump(G50, (0.2, 0), (0.1, 0.3))


def test_type_a():
    prof = rectangle_bump(G50, (0.5, 0.5), (0.9, 0.9), 3.0)
    bg = make_type_a(prof)
    assert bg.kind == "typeA" and bg.L == 2
    np.testing.assert_array_equal(bg[1].values, 1j * bg[0].values)
    assert np.all(bg[1].values.real == 0)
    with pytest.raises(ValueError):
        make_type_a(GridFunction(G50, np.zeros((50, 50))))
    with pytest.raises(ValueError):
        make_type_a(GridFunction(G50, 1j * prof.values))


def test_type_a_determinant():
    prof = rectangle_bump(G50, (0.5, 0.5), (0.9, 0.9), 3.0)
    bg = make_type_a(prof)
    p = np.random.default_rng(0).uniform(-20, 20, (50, 2))
    W1 = ndft_forward(bg[0], p).values
    W2 = ndft_forward(bg[1], p).values
    np.testing.assert_allclose(zeta(W1, W2), np.abs(W1) ** 2, rtol=1e-12)


def test_type_a_determinant_nonnegative_for_positive_definite_profile():
    # Wendland functions have a nonnegative Fourier transform
    bg = make_type_a(wendland_bump(G50, (0.0, 0.0), 0.5, 1))
    p = np.random.default_rng(1).uniform(-20, 20, (200, 2))
    z = zeta(ndft_forward(bg[0], p).values, ndft_forward(bg[1], p).values)
    assert np.all(z >= -1e-15)


def test_type_b_examples():
    prof = wendland_bump(G50, (0.0, 0.0), 0.3, 1)
    with pytest.raises(ValueError):
        make_type_b(prof, [(0.1, 0.0), (0.1, 0.0)])
    bg = make_type_b(prof, [(0.0, 0.0), (0.4, -0.2)])
    np.testing.assert_array_equal(bg[0].values, prof.values)
    with pytest.raises(ValueError):
        make_type_b(prof, [(0.0, 0.0), (0.9, 0.0)])


def test_type_b_determinant():
    prof = rectangle_bump(G50, (-0.2, -0.1), (0.1, 0.2), 2.0)
    T1, T2 = np.array([0.2, 0.4]), np.array([-0.4, 0.48])
    bg = make_type_b(prof, [T1, T2])
    p = np.random.default_rng(2).uniform(-20, 20, (10, 2))
    w = ndft_forward(prof, p).values
    z = zeta(ndft_forward(bg[0], p).values, ndft_forward(bg[1], p).values)
    np.testing.assert_allclose(z, np.sin(p @ (T2 - T1)) * np.abs(w) ** 2,
                               atol=1e-12 * np.abs(w).max() ** 2)


@given(st.integers(-10, 10), st.integers(-10, 10))
@settings(max_examples=30, deadline=None)
def test_translation_fourier_compatible(c1, c2):
    prof = wendland_bump(G50, (0.0, 0.0), 0.4, 0)
    T = G50.h * np.array([c1, c2])
    bg = make_type_b(prof, [(0.0, 0.0), T]) if (c1, c2) != (0, 0) else None
    if bg is None:
        return
    p = np.random.default_rng((c1 + 10) * 31 + c2 + 10).uniform(-25, 25, (10, 2))
    lhs = ndft_forward(bg[1], p).values
    rhs = np.exp(1j * p @ T) * ndft_forward(prof, p).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.abs(rhs).max()


def test_background_set_validation():
    w = rectangle_bump(G50, (0.5, 0.5), (0.9, 0.9))
    with pytest.raises(ValueError):
        BackgroundSet("custom", [w])
    with pytest.raises(ValueError):
        BackgroundSet("custom", [w, w])
    with pytest.raises(ValueError):
        BackgroundSet("other", [w, 2 * w])


def test_perturbation_identity_and_scale():
    w = rectangle_bump(G50, (0.5, 0.5), (0.9, 0.9), 2.0)
    np.testing.assert_array_equal(perturb_background(w, Perturbation()).values, w.values)
    np.testing.assert_array_equal(
        perturb_background(w, Perturbation(amplitude_scale=2)).values, 2 * w.values)


def test_robustness_perturbation_deterministic():
    w = corner_rectangles(G50, 10.0)[0]
    a = perturb_background(w, ROBUSTNESS_PERTURBATION)
    b = perturb_background(w, ROBUSTNESS_PERTURBATION)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.max(np.abs(a.values - w.values)) > 0
    # support shrinks, amplitude grows: the peak lies near 1.3 times the original level
    assert 0.8 * 13 < np.abs(a.values).max() < 1.2 * 13


def test_nonsmooth_potential():
    g = SpatialGrid(80)
    assert np.all(nonsmooth_potential(g, 0.0).values == 0)
    v = nonsmooth_potential(g, 2.0)
    assert len(np.unique(v.values)) <= 4
    x1, x2 = g.mesh
    assert np.all(np.hypot(x1, x2)[v.values != 0] <= 1)


def test_corner_rectangles_clear_of_unit_disk():
    bg = corner_rectangles(G50, 10.0)
    x1, x2 = G50.mesh
    for w in bg:
        assert np.all(np.hypot(x1, x2)[w.values != 0] > 0.8)


def test_grid_function_csv_roundtrip(tmp_path):
    v = peaks_potential(G50, norm_inf=3.0) + 1j * rectangle_bump(G50, (0, 0), (0.3, 0.3)).values
    v.write_csv(tmp_path / "v.csv", E=100)
    back = GridFunction.read_csv(tmp_path / "v.csv")
    np.testing.assert_array_equal(back.values, v.values)
