import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phaseless.forward import ForwardSolverConfig
from phaseless.geometry import SpatialGrid, build_ewald_geometry
from phaseless.measurement import apply_poisson, exact_dataset
from phaseless.ndft import FourierOperator
from phaseless.newtoncg import (NewtonCgConfig, PhaselessModel, adjoint_apply, derivative_apply,
                                newton_cg_refine, phaseless_forward_operator)
from phaseless.potentials import (BackgroundSet, GridFunction, corner_rectangles,
                                  peaks_potential, wendland_bump)

E = 36.0
GRID = SpatialGrid(16)
GEOM = build_ewald_geometry(E, 4, 8)
TIGHT = ForwardSolverConfig(ls_tol=1e-12, ls_max_iter=500)
BG = corner_rectangles(GRID, 5.0, side=0.4)
V = peaks_potential(GRID, norm_inf=10.0)


@pytest.fixture(scope="module")
def model():
    m = PhaselessModel(BG, GEOM, GRID, TIGHT)
    return m, m.linearize(V)


def smooth(rng):
    x1, x2 = GRID.mesh
    c = rng.uniform(-0.5, 0.5, 2)
    return np.exp(-((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2) / 0.1) * (1 + 0.3j * rng.standard_normal())


def test_config_validation():
    for bad in ({"tau_dp": 1.0}, {"max_outer": 0}, {"max_inner": 0}, {"inner_tol": 1.0},
                {"h1_weight": -1.0}, {"weighting": "other"}, {"max_backtrack": -1}):
        with pytest.raises(ValueError):
            NewtonCgConfig(**bad)


def test_forward_operator_matches_dataset():
    d = exact_dataset(V, BG, GEOM, TIGHT)
    np.testing.assert_allclose(phaseless_forward_operator(V, BG, GEOM, TIGHT), d.F.ravel(), rtol=1e-12)


def test_zero_direction(model):
    m, lin = model
    assert np.all(derivative_apply(m, lin, np.zeros((16, 16))) == 0)
    assert np.all(adjoint_apply(m, lin, np.zeros(m.potentials_count * GEOM.M)).values == 0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_adjoint_identity(seed):
    m, lin = PhaselessModel(BG, GEOM, GRID, TIGHT), None
    lin = _LIN
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    r = rng.standard_normal(m.potentials_count * GEOM.M)
    lhs = np.dot(m.derivative(lin, h), r)
    euclid = np.vdot(m.adjoint(lin, r, gram=False), h).real
    assert abs(lhs - euclid) <= 1e-8 * np.linalg.norm(m.derivative(lin, h)) * np.linalg.norm(r)
    # the Gram-preconditioned gradient is the adjoint in the H^1 pairing
    h1 = np.vdot(m.adjoint(lin, r, gram=True), m.gram(h)).real
    assert abs(lhs - h1) <= 1e-8 * np.linalg.norm(m.derivative(lin, h)) * np.linalg.norm(r)


_LIN = PhaselessModel(BG, GEOM, GRID, TIGHT).linearize(V)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=3, deadline=None)
def test_finite_difference(seed):
    m = PhaselessModel(BG, GEOM, GRID, TIGHT)
    h = smooth(np.random.default_rng(seed))
    eps = 1e-5
    fd = (m.evaluate(V + eps * h) - m.evaluate(V - eps * h)) / (2 * eps)
    d = m.derivative(_LIN, h)
    assert np.linalg.norm(fd - d) <= 1e-3 * np.linalg.norm(d)


def test_born_structure_at_zero_potential():
    eps = 1e-6
    w1 = wendland_bump(GRID, (0.4, 0.4), 0.4, 1, eps)
    w2 = wendland_bump(GRID, (-0.4, 0.4), 0.4, 1, eps)
    bg = BackgroundSet("custom", [w1, w2])
    m = PhaselessModel(bg, GEOM, GRID, TIGHT)
    zero = GridFunction(GRID, np.zeros((16, 16)))
    lin = m.linearize(zero)
    h = smooth(np.random.default_rng(0))
    A = FourierOperator(GRID, GEOM.p)
    d = m.derivative(lin, h).reshape(3, GEOM.M)
    assert np.all(d[0] == 0)
    for j, w in enumerate((w1, w2), start=1):
        expect = 2 * np.real(np.conj(A(w)) * A(h))
        assert np.linalg.norm(d[j] - expect) <= 1e-4 * np.linalg.norm(expect)


def test_gradient_real_for_real_backgrounds():
    geom = build_ewald_geometry(E, 4, 16)
    eps = 1e-8
    bg = BackgroundSet("custom", [wendland_bump(GRID, (0.4, 0.4), 0.4, 1, eps),
                                  wendland_bump(GRID, (-0.4, 0.4), 0.4, 1, eps)])
    m = PhaselessModel(bg, geom, GRID, TIGHT)
    lin = m.linearize(GridFunction(GRID, np.zeros((16, 16))))
    g = m.adjoint(lin, np.ones(3 * geom.M))
    assert np.abs(g.imag).max() < 1e-10
    assert np.abs(g.imag).max() <= 1e-6 * np.abs(g.real).max()


def test_truth_stops_immediately():
    data = exact_dataset(V, BG, GEOM, TIGHT)
    res = newton_cg_refine(V, data, BG, 0.0, fwd=TIGHT)
    assert res.stopped_by == "discrepancy"
    assert len(res.log) == 1 and res.log[0]["residual"] == 0
    np.testing.assert_array_equal(res.v.values, V.values)


def test_refinement_reduces_residual_and_logs():
    data = apply_poisson(exact_dataset(V, BG, GEOM, TIGHT), 1e9, seed=0)
    from phaseless.measurement import noise_level_estimate
    v0 = GridFunction(GRID, 0.8 * V.values)
    res = newton_cg_refine(v0, data, BG, noise_level_estimate(data),
                           NewtonCgConfig(max_outer=6), TIGHT, truth=V)
    resid = [r["residual"] for r in res.log]
    assert resid[-1] < resid[0]
    assert all(set(r) == {"outer", "residual", "cg_iters", "error_if_truth_known"} for r in res.log)
    assert res.stopped_by in ("discrepancy", "max_outer", "stalled")
    assert np.all(np.diff(resid) <= 0)
    if res.stopped_by == "discrepancy":
        assert resid[-1] <= 1.2 * noise_level_estimate(data)
    assert res.log[-1]["error_if_truth_known"] < res.log[0]["error_if_truth_known"]


def test_log_file(tmp_path):
    data = exact_dataset(V, BG, GEOM, TIGHT)
    res = newton_cg_refine(V, data, BG, 0.0, fwd=TIGHT, truth=V)
    res.write_log(tmp_path / "log.jsonl")
    import json
    recs = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert recs[0]["outer"] == 0 and recs[0]["error_if_truth_known"] == 0
