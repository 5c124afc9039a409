"""Forward solver for the ART-extended model with seven infected compartments.

Same cell transport as :mod:`hivage.simulator`; the difference is the split
of boundary inflows by the controls ``h = (h1, h2, h2TF)`` and drop-out
probabilities. Controls are piecewise constant: ``h[n]`` acts on
``[t_n, t_{n+1})``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import AgeGrid, ModelParams, StepRate, beta_rate, death_rate, gamma_rate
from .simulator import CellTransport, EpidemicState, NumericalError, trapezoid_time

NAMES = ("i1", "i1TF", "i1TS", "i2", "i2TF", "i2TS", "i3")
I1, I1TF, I1TS, I2, I2TF, I2TS, I3 = range(7)
PROGRESSING = (I1, I1TF, I2, I2TF)
CONTROL_NAMES = ("h1", "h2", "h2TF")


def compartment_hazards(params: ModelParams) -> list[tuple[StepRate, StepRate]]:
    zero = StepRate.constant(0.0)
    d1, d2, d3 = (death_rate(params, j) for j in (1, 2, 3))
    return [
        (gamma_rate(params, 1), d1),
        (gamma_rate(params, 1, fast_track=True), d1),
        (zero, d1),
        (gamma_rate(params, 2), d2),
        (gamma_rate(params, 2, fast_track=True), d2),
        (zero, d2),
        (zero, d3),
    ]


def infectivity_weights(params: ModelParams) -> np.ndarray:
    eps, dlt = params.eps, params.dlt
    return np.array([1.0, 1.0, 0.0, eps, eps, 0.0, dlt])


@dataclass
class ControlTrajectory:
    """Controls sampled at the time nodes; the last node is never used by the stepper."""

    h: np.ndarray  # shape (n_steps + 1, 3)
    h_max: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if self.h.ndim != 2 or self.h.shape[1] != 3:
            raise ValueError("controls must have shape (n_nodes, 3)")
        hm = np.asarray(self.h_max)
        if np.any(self.h < -1e-12) or np.any(self.h > hm + 1e-12):
            raise ValueError("controls outside the admissible set")

    @classmethod
    def constant(cls, grid: AgeGrid, value, h_max=(1.0, 1.0, 1.0)) -> "ControlTrajectory":
        value = np.broadcast_to(np.asarray(value, dtype=float), (3,))
        return cls(np.tile(value, (grid.n_steps + 1, 1)), tuple(h_max))

    @classmethod
    def zeros(cls, grid: AgeGrid, h_max=(1.0, 1.0, 1.0)) -> "ControlTrajectory":
        return cls.constant(grid, 0.0, h_max)

    @classmethod
    def from_samples(cls, grid: AgeGrid, t, h, h_max=(1.0, 1.0, 1.0)) -> "ControlTrajectory":
        """Left-continuous resampling of (t, h) rows onto the grid nodes."""
        t = np.asarray(t, dtype=float)
        h = np.asarray(h, dtype=float)
        order = np.argsort(t, kind="stable")
        t, h = t[order], h[order]
        nodes = grid.times
        if t.size == 0 or t[0] > nodes[0] + 1e-9:
            raise ValueError("controls must start at t = 0")
        idx = np.searchsorted(t, nodes + 1e-9, side="right") - 1
        return cls(h[idx], tuple(h_max))

    def project(self) -> "ControlTrajectory":
        return ControlTrajectory(np.clip(self.h, 0.0, np.asarray(self.h_max)), self.h_max)


@dataclass
class ControlState:
    t: float
    S: float
    i: np.ndarray  # shape (7, n_ages), order NAMES

    @classmethod
    def from_base(cls, base: EpidemicState) -> "ControlState":
        i = np.zeros((7, base.i.shape[1]))
        i[I1], i[I2], i[I3] = base.i
        return cls(base.t, base.S, i)

    def totals(self, da: float) -> np.ndarray:
        return da * self.i.sum(axis=1)

    def copy(self) -> "ControlState":
        return ControlState(self.t, self.S, self.i.copy())


def split_boundary(params: ModelParams, h, new_inf: float, prog: np.ndarray) -> np.ndarray:
    """Boundary masses for the seven compartments.

    ``prog`` holds the masses leaving (i1, i1TF, i2, i2TF) by progression.
    """
    h1, h2, h2tf = h
    p1, p2, p2tf = params.p_dropout
    e2, e2tf, e3, e3tf = prog
    out = np.empty(7)
    out[I1] = (1 - h1) * new_inf
    out[I1TF] = p1 * h1 * new_inf
    out[I1TS] = (1 - p1) * h1 * new_inf
    out[I2] = (1 - h2) * e2 + (1 - h2tf) * e2tf
    out[I2TF] = p2 * h2 * e2 + p2tf * h2tf * e2tf
    out[I2TS] = (1 - p2) * h2 * e2 + (1 - p2tf) * h2tf * e2tf
    out[I3] = e3 + e3tf
    return out


@dataclass
class ControlledTrajectory:
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray  # (n_t, 7) compartment totals
    P: np.ndarray
    E: np.ndarray  # (n_t, 4) quadratures E1, E2, E2TF, E3
    lam: np.ndarray  # (n_t - 1,) E1/P used in each step
    new_inf: np.ndarray  # (n_t - 1,) infection mass per step
    prog: np.ndarray  # (n_t - 1, 4) progression masses out of i1, i1TF, i2, i2TF
    boundary: np.ndarray  # (n_t - 1, 7) boundary masses
    dt: float

    COLUMNS = ("t", "S", *[n.replace("i", "I", 1) for n in NAMES], "P", "E1", "E2", "E2TF", "E3")

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.S, self.I, self.P, self.E])

    @property
    def aids_person_time(self) -> float:
        """int_0^T int i3 da dt, trapezoid in time."""
        return trapezoid_time(self.I[:, I3], self.dt)

    @property
    def aids_inflow(self) -> np.ndarray:
        """Mass entering stage 3 during each step."""
        return self.prog[:, 2] + self.prog[:, 3]


class ControlledSimulator:
    def __init__(self, params: ModelParams, grid: AgeGrid):
        self.params = params
        self.grid = grid
        self.transport = [CellTransport.build(g, d, grid) for g, d in compartment_hazards(params)]
        self.stay = np.array([tr.stay for tr in self.transport])
        self.prog = np.array([self.transport[c].prog for c in PROGRESSING])
        self.prog_avg = np.array([self.transport[c].prog_avg for c in PROGRESSING])
        edges = grid.edges
        beta = beta_rate(params).cell_average(edges[:-1], edges[1:])
        self.beta_w = infectivity_weights(params)[:, None] * beta[None, :]
        self.S_decay = np.exp(-params.mu * grid.da)
        self.S_recruit = params.lambda_in * -np.expm1(-params.mu * grid.da) / params.mu

    def forces(self, state: ControlState) -> np.ndarray:
        """(E1, E2, E2TF, E3) by cell quadrature."""
        h = self.grid.da
        i = state.i
        E1 = h * float(np.sum(self.beta_w * i))
        q = h * np.einsum("ck,ck->c", self.prog_avg, i[list(PROGRESSING)])
        return np.array([E1, q[0], q[1], q[2] + q[3]])

    def _advance(self, state: ControlState, h_now):
        dt = self.grid.da
        i = state.i
        S = state.S
        P = S + dt * float(i.sum())
        E1 = dt * float(np.sum(self.beta_w * i))
        lam = E1 / P if P > 0 else 0.0
        new_inf = S * self.S_decay * -np.expm1(-lam * dt)
        S_next = S * self.S_decay * np.exp(-lam * dt) + self.S_recruit
        prog = dt * np.einsum("ck,ck->c", self.prog, i[list(PROGRESSING)])
        bnd = split_boundary(self.params, h_now, new_inf, prog)
        out = np.empty_like(i)
        out[:, 1:] = self.stay[:, :-1] * i[:, :-1]
        out[:, 0] = bnd / dt
        nxt = ControlState(state.t + dt, S_next, out)
        if not np.isfinite(S_next) or S_next <= 0 or not np.all(np.isfinite(out)) or np.any(out < 0):
            raise NumericalError(f"invalid state at t={nxt.t:g}; reduce da")
        return nxt, lam, new_inf, prog, bnd

    def step(self, state: ControlState, h_now) -> ControlState:
        return self._advance(state, h_now)[0]

    def run(self, initial: ControlState, controls: ControlTrajectory) -> ControlledTrajectory:
        grid = self.grid
        n = grid.n_steps
        dt = grid.da
        if controls.h.shape[0] < n + 1:
            raise ValueError("controls do not cover the time grid")
        t = initial.t + dt * np.arange(n + 1)
        S = np.empty(n + 1)
        I = np.empty((n + 1, 7))
        P = np.empty(n + 1)
        E = np.empty((n + 1, 4))
        lam = np.empty(n)
        new_inf = np.empty(n)
        prog = np.empty((n, 4))
        bnd = np.empty((n, 7))
        state = initial
        for k in range(n + 1):
            S[k] = state.S
            I[k] = state.totals(dt)
            P[k] = S[k] + I[k].sum()
            E[k] = self.forces(state)
            if k < n:
                state, lam[k], new_inf[k], prog[k], bnd[k] = self._advance(state, controls.h[k])
        self.final_state = state
        return ControlledTrajectory(t, S, I, P, E, lam, new_inf, prog, bnd, dt)


def initial_control_state(params: ModelParams, grid: AgeGrid, prevalence_pct: float = 0.05) -> ControlState:
    from .simulator import initial_state

    return ControlState.from_base(initial_state(params, grid, prevalence_pct))


def run_controlled(params: ModelParams, grid: AgeGrid, initial: ControlState | None = None,
                   controls: ControlTrajectory | None = None) -> ControlledTrajectory:
    if initial is None:
        initial = initial_control_state(params, grid)
    if controls is None:
        controls = ControlTrajectory.zeros(grid, params.h_max)
    return ControlledSimulator(params, grid).run(initial, controls)
