import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hivage.kernels import (
    build_kernels, calibrate_rho0, equilibria, r0, summary, weighted_survival_integral,
)
from hivage.params import AgeGrid, ModelParams, StepRate

GRID = AgeGrid()


def closed_form(p: ModelParams):
    mu, (T1, T2), (g1, g2) = p.mu, p.stage_duration, p.gamma_bar
    d1, d2, d3 = p.d

    def stage(T, g, d):
        dbar = -np.expm1(-d * T) / d + np.exp(-d * T) / (g + d)
        gam = np.exp(-d * T) * g / (g + d)
        return dbar, gam

    D1, G1 = stage(T1, g1, d1)
    D2, G2 = stage(T2, g2, d2)
    return (D1, D2, 1 / d3), (G1, G2)


def test_closed_form_kernels(params):
    k = build_kernels(params, GRID)
    Dbar, Gamma = closed_form(params)
    np.testing.assert_allclose(k.Dbar, Dbar, rtol=1e-13)
    np.testing.assert_allclose(k.Gamma, Gamma, rtol=1e-13)
    beta = params.rho0 * params.beta_hazard[0] / 1200
    np.testing.assert_allclose(k.Omega, beta * np.array(Dbar), rtol=1e-13)


def test_reference_r0_in_band(params):
    assert r0(build_kernels(params, GRID), params) == pytest.approx(2.55, abs=0.15)


def test_calibration_is_exact(params):
    rho = calibrate_rho0(params, GRID, 2.55)
    q = params.replace(rho0=rho)
    assert r0(build_kernels(q, GRID), q) == pytest.approx(2.55, rel=1e-13)
    assert calibrate_rho0(params, GRID, 0.0) == 0.0
    with pytest.raises(ValueError):
        calibrate_rho0(params.replace(beta_hazard=(0.0, 0.0, 0.0)), GRID, 2.0)


def test_brute_force_quadrature(params):
    """Fine midpoint sums of the survival integrals agree with the closed forms."""
    k = build_kernels(params, GRID)
    da = 1e-3
    a = (np.arange(int(900 / da)) + 0.5) * da
    for j in (1, 2):
        surv = k.survival(j, a)
        prog = k.hazards[j - 1][0](a)
        assert np.sum(surv) * da == pytest.approx(k.Dbar[j - 1], rel=1e-5)
        assert np.sum(prog * surv) * da == pytest.approx(k.Gamma[j - 1], rel=1e-5)


def test_constant_rate_r0_oracle():
    # stage durations ~ 0: each stage is exponential with rate g + d
    p = ModelParams(stage_duration=(1e-9, 1e-9), gamma_bar=(0.5, 0.02), beta_hazard=(200.0, 20.0, 0.0))
    k = build_kernels(p, GRID)
    b = p.rho0 * 200 / 1200
    d1, d2, _ = p.d
    G1 = 0.5 / (0.5 + d1)
    expect = b / (0.5 + d1) + p.eps * b / (0.02 + d2) * G1
    assert r0(k, p) == pytest.approx(expect, rel=1e-7)


def test_weighted_integral_divergence():
    with pytest.raises(ValueError):
        weighted_survival_integral(StepRate.constant(1.0), StepRate.constant(0.0))


@settings(max_examples=30, deadline=None)
@given(b1=st.floats(131, 509), T2a=st.floats(108, 170), dT=st.floats(1, 10))
def test_r0_monotone_in_latency(b1, T2a, dT):
    p = ModelParams(beta_hazard=(b1, 10.6, 0.0), stage_duration=(2.9, T2a))
    q = p.replace(stage_duration=(2.9, T2a + dT))
    assert r0(build_kernels(q, GRID), q) > r0(build_kernels(p, GRID), p)


@settings(max_examples=30, deadline=None)
@given(b1=st.floats(131, 500), db=st.floats(1, 9))
def test_r0_monotone_in_beta1(b1, db):
    # hold epsilon fixed so stage-2 transmission moves with beta1 too
    p = ModelParams(beta_hazard=(b1, 7.61, 0.0), epsilon=0.03)
    q = p.replace(beta_hazard=(b1 + db, 7.61, 0.0))
    assert r0(build_kernels(q, GRID), q) > r0(build_kernels(p, GRID), p)


def test_range_maximum_r0():
    p = ModelParams(beta_hazard=(509.0, 13.3, 0.0), stage_duration=(6.0, 180.0))
    assert r0(build_kernels(p, GRID), p) == pytest.approx(7.2, abs=0.1)


def test_endemic_fixed_point(params):
    k = build_kernels(params, GRID)
    eq = equilibria(k, params, GRID)
    e = eq.endemic
    assert e is not None
    # force of infection from the endemic profile reproduces the inflow I0
    E1 = sum(w * om * x for w, om, x in zip(
        (1.0, params.eps, params.dlt), k.Omega, (e.I0, e.I0 * k.Gamma[0], e.I0 * np.prod(k.Gamma))))
    assert e.S * E1 / e.P == pytest.approx(e.I0, rel=1e-12)
    assert params.lambda_in == pytest.approx(params.mu * e.S + e.I0, rel=1e-12)


def test_no_endemic_below_threshold(params):
    rho = calibrate_rho0(params, GRID, 0.8)
    q = params.replace(rho0=rho)
    eq = equilibria(build_kernels(q, GRID), q)
    assert eq.endemic is None and eq.dfe_S == pytest.approx(900.0)
    s = summary(build_kernels(q, GRID), q, eq)
    assert set(s) == {"r0", "omega", "gamma", "dbar", "dfe"}
