"""Objective, adjoint solver, control characterisation and forward-backward sweep.

The backward solve is the transpose of one step of
:class:`hivage.control.ControlledSimulator`: costates are carried backward
along characteristics (cell ``k+1`` at ``t_{n+1}`` feeds cell ``k`` at
``t_n``), and at each step the boundary costates of the newly entered cells
are combined into the four scalars

    zeta1   = S * [(1-h1) l_i1 + p1 h1 l_i1TF + (1-p1) h1 l_i1TS](t, 0)
    zeta2   = (1-h2) l_i2 + p2 h2 l_i2TF + (1-p2) h2 l_i2TS
    zeta2TF = (1-h2TF) l_i2 + p2TF h2TF l_i2TF + (1-p2TF) h2TF l_i2TS
    zeta3   = l_i3

which feed back as the sources -beta zeta1 / P, -gamma1 zeta2,
-gamma1TF zeta2TF and -gamma2 (zeta3 + B).

``mode="exact"`` also propagates the dependence of the new-infection flux
S E1 / P on S and on P, which gives the exact gradient of the discrete
objective. ``mode="frozen"`` freezes S and P in that flux, so the susceptible
costate stays identically zero.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import (
    I1, I1TF, I1TS, I2, I2TF, I2TS, I3, PROGRESSING,
    ControlledSimulator, ControlledTrajectory, ControlState, ControlTrajectory,
    initial_control_state,
)
from .params import AgeGrid, ModelParams

log = logging.getLogger(__name__)

SCENARIOS = {
    "h1-only": (1, 0, 0),
    "h2-only": (0, 1, 0),
    "h1+h2": (1, 1, 0),
    "h1+h2TF": (1, 0, 1),
    "all": (1, 1, 1),
}
ADJOINT_MODES = ("exact", "frozen")


def objective(traj: ControlledTrajectory, h: ControlTrajectory, params: ModelParams) -> float:
    """B * (mass entering AIDS over [0, T_f]) + int C_k h_k^2 dt."""
    n = traj.new_inf.size
    if h.h.shape[0] < n:
        raise ValueError("controls and trajectory grids do not match")
    hh = h.h[:n]
    control_cost = traj.dt * float(np.sum(hh**2 @ np.asarray(params.cost_C)))
    return params.cost_B * float(traj.aids_inflow.sum()) + control_cost


@dataclass
class AdjointHistory:
    lam_S: np.ndarray  # (n + 1,) costate of S at each node
    trace: np.ndarray  # (n, 7) costates of the cells entered during step n, i.e. l(t_{n+1}, 0)
    zeta: np.ndarray  # (n, 4) zeta1, zeta2, zeta2TF, zeta3
    grad: np.ndarray  # (n, 3) dJ/dh at each step
    terminal: np.ndarray  # (7, n_ages) costate densities at T_f
    initial: np.ndarray  # (7, n_ages) costate densities at t = 0
    abs_max: np.ndarray  # (7,) max |costate| over the whole history
    mode: str


def solve_adjoint(traj: ControlledTrajectory, h: ControlTrajectory, params: ModelParams,
                  grid: AgeGrid, mode: str = "exact",
                  sim: ControlledSimulator | None = None) -> AdjointHistory:
    if mode not in ADJOINT_MODES:
        raise ValueError(f"unknown adjoint mode {mode!r}")
    sim = sim or ControlledSimulator(params, grid)
    n = traj.new_inf.size
    if n != grid.n_steps or traj.lam.size != n:
        raise ValueError("forward history missing or on another grid")
    dt = grid.da
    exact = mode == "exact"
    p1, p2, p2tf = params.p_dropout
    B = params.cost_B
    C = np.asarray(params.cost_C)
    e_mu = sim.S_decay
    stay = sim.stay
    prog_frac = sim.prog
    beta_w = sim.beta_w
    prog_rows = list(PROGRESSING)

    lam = np.zeros((7, grid.n_ages))
    terminal = lam.copy()
    lam_S = np.zeros(n + 1)
    trace = np.empty((n, 7))
    zeta = np.empty((n, 4))
    grad = np.empty((n, 3))
    abs_max = np.zeros(7)
    for k in range(n - 1, -1, -1):
        h1, h2, h2tf = h.h[k]
        S = traj.S[k]
        P = traj.P[k]
        E1 = traj.lam[k] * P
        e_l = np.exp(-traj.lam[k] * dt)
        gB = lam[:, 0] / dt
        trace[k] = gB
        gT = (1 - h1) * gB[I1] + p1 * h1 * gB[I1TF] + (1 - p1) * h1 * gB[I1TS]
        g2 = (1 - h2) * gB[I2] + p2 * h2 * gB[I2TF] + (1 - p2) * h2 * gB[I2TS]
        g2tf = (1 - h2tf) * gB[I2] + p2tf * h2tf * gB[I2TF] + (1 - p2tf) * h2tf * gB[I2TS]
        zeta[k] = (S * gT, g2, g2tf, gB[I3])
        grad[k] = (
            traj.new_inf[k] * (-gB[I1] + p1 * gB[I1TF] + (1 - p1) * gB[I1TS]),
            traj.prog[k, 0] * (-gB[I2] + p2 * gB[I2TF] + (1 - p2) * gB[I2TS]),
            traj.prog[k, 1] * (-gB[I2] + p2tf * gB[I2TF] + (1 - p2tf) * gB[I2TS]),
        )
        grad[k] += 2 * dt * C * h.h[k]

        ls_next = lam_S[k + 1]
        new = np.zeros_like(lam)
        new[:, :-1] = stay[:, :-1] * lam[:, 1:]
        g_prog = np.array([g2, g2tf, gB[I3] + B, gB[I3] + B])
        new[prog_rows] += dt * prog_frac * g_prog[:, None]
        if exact:
            g_lam = S * e_mu * dt * e_l * (gT - ls_next)
            lam_S[k] = (ls_next * e_mu * e_l + gT * e_mu * -np.expm1(-traj.lam[k] * dt)
                        - g_lam * E1 / P**2)
            new += g_lam * dt * (beta_w / P - E1 / P**2)
        else:
            g_lam = S * e_mu * dt * e_l * gT
            lam_S[k] = ls_next * e_mu * e_l
            new += g_lam * dt * beta_w / P
        lam = new
        abs_max = np.maximum(abs_max, np.abs(lam).max(axis=1))
        if not np.all(np.isfinite(lam)):
            from .simulator import NumericalError

            raise NumericalError(f"non-finite costate at step {k}")
    return AdjointHistory(lam_S, trace, zeta, grad, terminal, lam, abs_max, mode)


def characterize(adj: AdjointHistory, traj: ControlledTrajectory, params: ModelParams,
                 active=(1, 1, 1)) -> ControlTrajectory:
    """Stationary point of the Hamiltonian in h, projected onto [0, h_max]."""
    p1, p2, p2tf = params.p_dropout
    C = np.asarray(params.cost_C)
    g = adj.trace
    dt = traj.dt
    n = g.shape[0]
    h_hat = np.empty((n + 1, 3))
    h_hat[:n, 0] = traj.new_inf * (g[:, I1] - p1 * g[:, I1TF] - (1 - p1) * g[:, I1TS])
    h_hat[:n, 1] = traj.prog[:, 0] * (g[:, I2] - p2 * g[:, I2TF] - (1 - p2) * g[:, I2TS])
    h_hat[:n, 2] = traj.prog[:, 1] * (g[:, I2] - p2tf * g[:, I2TF] - (1 - p2tf) * g[:, I2TS])
    h_hat[:n] /= 2 * dt * C
    h_hat[n] = h_hat[n - 1] if n else 0.0
    h_hat *= np.asarray(active, dtype=float)
    return project(h_hat, params.h_max)


def unprojected_optimum(adj: AdjointHistory, h: ControlTrajectory, params: ModelParams, dt: float) -> np.ndarray:
    """h_hat recovered from the gradient: dJ/dh_k = 2 dt C_k (h_k - h_hat_k)."""
    C = np.asarray(params.cost_C)
    return h.h[: adj.grad.shape[0]] - adj.grad / (2 * dt * C)


def project(h_hat: np.ndarray, h_max) -> ControlTrajectory:
    hm = np.asarray(h_max, dtype=float)
    return ControlTrajectory(np.maximum(0.0, np.minimum(h_hat, hm)), tuple(h_max))


@dataclass
class SweepResult:
    h_star: ControlTrajectory
    J_history: list[float]
    iterations: int
    converged: bool
    final_forward: ControlledTrajectory
    J_star: float
    changes: list[float] = field(default_factory=list)


class Problem:
    """One optimal-control problem: params, grid, initial data."""

    def __init__(self, params: ModelParams, grid: AgeGrid, initial: ControlState | None = None,
                 adjoint: str = "exact"):
        self.params = params
        self.grid = grid
        self.initial = initial if initial is not None else initial_control_state(params, grid)
        self.sim = ControlledSimulator(params, grid)
        self.adjoint = adjoint

    def forward(self, h: ControlTrajectory) -> ControlledTrajectory:
        return self.sim.run(self.initial, h)

    def J(self, h: ControlTrajectory) -> float:
        return objective(self.forward(h), h, self.params)

    def gradient(self, h: ControlTrajectory) -> tuple[float, np.ndarray, AdjointHistory, ControlledTrajectory]:
        traj = self.forward(h)
        adj = solve_adjoint(traj, h, self.params, self.grid, self.adjoint, self.sim)
        return objective(traj, h, self.params), adj.grad, adj, traj

    def zero_controls(self) -> ControlTrajectory:
        return ControlTrajectory.zeros(self.grid, self.params.h_max)


def sweep(params: ModelParams, grid: AgeGrid, initial: ControlState | None = None,
          h0: ControlTrajectory | None = None, relax: float = 0.5, tol: float = 1e-4,
          max_iter: int = 200, active=(1, 1, 1), adjoint: str = "exact",
          backtrack: bool = True) -> SweepResult:
    """Forward-backward sweep with relaxed control updates.

    Each iteration runs the state forward under ``h``, the costates backward,
    and moves to ``relax * h_new + (1 - relax) * h``. With ``backtrack`` the
    weight is halved while the objective would increase (the update direction
    ``h_new - h`` is a scaled projected-gradient direction, so a small enough
    weight always decreases J) and restored after each accepted step.

    Inactive controls (``active[k] == 0``) are pinned at zero. Convergence is
    declared when ``relax * |h_new - h|_inf / max(|h_new|_inf, 1e-12) < tol``,
    i.e. when a nominal relaxed step would move the controls by less than
    ``tol``. Returns the iterate with the lowest objective.
    """
    if not 0 < relax <= 1:
        raise ValueError("relax must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    prob = Problem(params, grid, initial, adjoint)
    mask = np.asarray(active, dtype=float)
    if h0 is None:
        h0 = ControlTrajectory.constant(grid, np.asarray(params.h_max) / 2, params.h_max)
    h = ControlTrajectory(h0.h * mask, params.h_max)

    traj = prob.forward(h)
    J = objective(traj, h, params)
    J_hist: list[float] = [J]
    changes: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        adj = solve_adjoint(traj, h, params, grid, adjoint, prob.sim)
        h_new = characterize(adj, traj, params, active)
        step = h_new.h - h.h
        change = relax * float(np.abs(step).max() / max(np.abs(h_new.h).max(), 1e-12))
        changes.append(change)
        log.debug("sweep iter %d: J=%.10g change=%.3g", it, J, change)
        if change < tol:
            converged = True
            break
        w = relax
        while True:
            cand = ControlTrajectory(np.clip(h.h + w * step, 0.0, np.asarray(params.h_max)), params.h_max)
            cand_traj = prob.forward(cand)
            cand_J = objective(cand_traj, cand, params)
            if not backtrack or cand_J <= J or w < 1e-6:
                break
            w *= 0.5
        if backtrack and cand_J > J:
            # stalled: no decrease along the sweep direction
            break
        h, traj, J = cand, cand_traj, cand_J
        J_hist.append(J)
    return SweepResult(h, J_hist, it, converged, traj, J, changes)


def performance(params: ModelParams, grid: AgeGrid, initial: ControlState | None, h: ControlTrajectory) -> float:
    """AIDS person-time under h relative to no control."""
    prob = Problem(params, grid, initial)
    base = prob.forward(prob.zero_controls()).aids_person_time
    if base <= 0:
        raise ZeroDivisionError("no AIDS person-time without control; performance undefined")
    return prob.forward(h).aids_person_time / base


@dataclass
class SurfaceCell:
    p: tuple[float, float, float]
    delta: float
    converged: bool
    iterations: int
    J_star: float
    status: str = "ok"


def _surface_cell(args) -> SurfaceCell:
    params, grid, active, p, kw = args
    try:
        q = params.replace(p_dropout=p)
        res = sweep(q, grid, active=active, **kw)
        delta = performance(q, grid, None, res.h_star)
        return SurfaceCell(tuple(p), delta, res.converged, res.iterations, res.J_star)
    except Exception as exc:  # recorded per cell; the surface keeps going
        return SurfaceCell(tuple(p), float("nan"), False, 0, float("nan"), f"error: {exc}")


def performance_surface(params: ModelParams, grid: AgeGrid, scenario: str, p_grid,
                        jobs: int = 1, **sweep_kw) -> list[SurfaceCell]:
    """Sweep each drop-out tuple in ``p_grid`` with only the scenario's controls active."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    active = SCENARIOS[scenario]
    tasks = []
    for p in p_grid:
        p = tuple(float(x) for x in p)
        if len(p) != 3 or any(not 0 <= x <= 1 for x in p):
            raise ValueError(f"drop-out tuple {p} outside [0, 1]^3")
        tasks.append((params, grid, active, p, sweep_kw))
    if jobs <= 1:
        return [_surface_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_surface_cell, tasks))
