import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hivage.kernels import build_kernels, equilibria
from hivage.params import AgeGrid, ModelParams
from hivage.simulator import (
    EpidemicState, NumericalError, Simulator, initial_state, run, seeding_profile, trapezoid_time,
)


def test_initial_state_zero_prevalence(params, coarse):
    s = initial_state(params, coarse, 0.0)
    assert s.S == pytest.approx(900.0) and not s.i.any()


def test_initial_state_norms(params, coarse):
    s = initial_state(params, coarse, 0.05)
    tot = s.totals(coarse.da)
    N0 = s.S + tot.sum()
    np.testing.assert_allclose(tot[:2], 0.00025 * N0, rtol=1e-12)
    assert tot[2] == 0.0


def test_initial_state_rejects_negative(params, coarse):
    with pytest.raises(ValueError):
        initial_state(params, coarse, -1.0)


def test_seeding_profile_continuous(params):
    mu = params.mu
    left = seeding_profile(2.9, 2.9, mu)
    right = np.exp(-mu * (2 * 2.9 - 2.9))
    assert left == pytest.approx(np.exp(-mu * 2.9)) and right == pytest.approx(left)


def test_disease_free_invariance(params):
    g = AgeGrid(da=0.5, t_final=100.0)
    S0 = 200.0
    tr = Simulator(params, g).run(EpidemicState(0.0, S0, np.zeros((3, g.n_ages))))
    assert not tr.I.any()
    exact = params.lambda_in / params.mu + (S0 - 900.0) * np.exp(-params.mu * tr.t)
    np.testing.assert_allclose(tr.S, exact, rtol=1e-12)


@pytest.mark.parametrize("da", [0.2, 0.1, 0.05])
def test_endemic_one_step_residual(params, da):
    g = AgeGrid(da=da, t_final=da)
    e = equilibria(build_kernels(params, g), params, g).endemic
    state = EpidemicState(0.0, e.S, 0.5 * (e.i[:, 1:] + e.i[:, :-1]))
    nxt, _ = Simulator(params, g).step(state)
    change = abs(nxt.S - state.S) + da * np.abs(nxt.i - state.i).sum()
    assert change / e.P < 0.01 * da**2


def test_delay_without_initial_latents(params):
    g = AgeGrid(da=0.5, t_final=130.0)
    s = initial_state(params, g)
    s.i[1:] = 0.0
    tr = run(params, g, s)
    assert np.all(tr.I[tr.t <= 120.0, 2] == 0.0)
    assert tr.I[-1, 2] > 0


def test_volterra_consistency(params):
    g = AgeGrid(da=0.2, t_final=200.0)
    sim = Simulator(params, g)
    tr = sim.run(initial_state(params, g), snapshot_times=[200.0])
    dens = tr.snapshots[200.0][0]
    k = build_kernels(params, g)
    rng = np.random.default_rng(7)
    n = g.n_steps
    for cell in rng.integers(0, n - 1, 20):
        entered = n - cell - 1  # step whose boundary flux became this cell
        expect = tr.inflow[entered, 0] * k.survival(1, g.ages[cell])
        assert dens[cell] == pytest.approx(expect, rel=5 * g.da)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    S0=st.floats(1.0, 2000.0),
    scale=st.floats(0.0, 10.0),
    rho=st.floats(0.0, 6.0),
)
def test_positivity_and_population_bound(seed, S0, scale, rho):
    p = ModelParams(rho0=rho)
    g = AgeGrid(da=1.0, t_final=150.0)
    rng = np.random.default_rng(seed)
    i = scale * rng.random((3, g.n_ages)) * np.exp(-0.05 * g.ages)
    init = EpidemicState(0.0, S0, i)
    tr = Simulator(p, g).run(init)
    bound = max(p.lambda_in / p.mu, init.population(g.da))
    assert np.all(tr.P <= bound * (1 + 1e-10))
    assert np.all(tr.S > 0) and np.all(tr.I >= 0) and np.all(tr.E >= 0)


def test_population_decays_without_recruitment(params):
    p = params.replace(lambda_in=1e-9)
    g = AgeGrid(da=0.5, t_final=200.0)
    tr = run(p, g)
    assert np.all(np.diff(tr.P) < 0)


def test_first_order_grid_convergence(params):
    vals = [run(params, AgeGrid(da=da, t_final=60.0)).I[-1] for da in (0.4, 0.2)]
    diff = np.abs(vals[0] - vals[1])
    assert np.all(diff <= 0.05 * 0.4 * np.abs(vals[1]) + 1e-9)


def test_step_detects_negative_state(params, coarse):
    s = initial_state(params, coarse)
    s.i[0, 3] = -1.0
    with pytest.raises(NumericalError):
        Simulator(params, coarse).step(s)


def test_trapezoid_time():
    assert trapezoid_time(np.array([1.0, 1.0, 1.0]), 0.5) == 1.0
    assert trapezoid_time(np.array([2.0]), 0.5) == 0.0


def test_trajectory_columns(params, coarse):
    tr = run(params, coarse)
    assert tr.table().shape == (coarse.n_steps + 1, len(tr.COLUMNS))
    assert tr.COLUMNS == ("t", "S", "I1", "I2", "I3", "P", "E1", "E2", "E3")
