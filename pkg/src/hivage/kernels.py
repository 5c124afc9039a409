"""Survival kernels, R0 and equilibria of the three-stage model.

Every rate is piecewise constant in duration, so each survival kernel is a
piecewise exponential and every scalar integral has a closed form per segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import AgeGrid, ModelParams, StepRate, beta_rate, death_rate, gamma_rate


def stage_hazards(params: ModelParams, fast_track: bool = False) -> list[tuple[StepRate, StepRate]]:
    """(progression, death) rate pairs for stages 1..3."""
    zero = StepRate.constant(0.0)
    return [
        (gamma_rate(params, 1, fast_track), death_rate(params, 1)),
        (gamma_rate(params, 2, fast_track), death_rate(params, 2)),
        (zero, death_rate(params, 3)),
    ]


def weighted_survival_integral(weight: StepRate, hazard: StepRate) -> float:
    """Exact value of int_0^inf weight(a) exp(-int_0^a hazard) da."""
    if hazard.tail <= 0 and weight.tail > 0:
        raise ValueError("integral diverges: zero hazard tail")
    breaks = sorted(set(weight.breaks) | set(hazard.breaks))
    total = 0.0
    for lo, hi in zip([0.0, *breaks], [*breaks, np.inf]):
        w = weight(lo)
        if w == 0:
            continue
        r = hazard(lo)
        surv = np.exp(-hazard.cumulative(lo))
        if np.isinf(hi):
            seg = 1.0 / r
        elif r > 0:
            seg = -np.expm1(-r * (hi - lo)) / r
        else:
            seg = hi - lo
        total += w * surv * seg
    return float(total)


@dataclass(frozen=True)
class KernelTable:
    ages: np.ndarray  # nodes k*da, k = 0..n_ages
    D: np.ndarray  # shape (3, n_ages + 1)
    Dbar: tuple[float, float, float]
    Omega: tuple[float, float, float]
    Gamma: tuple[float, float]
    hazards: tuple

    def survival(self, stage: int, a):
        prog, death = self.hazards[stage - 1]
        return np.exp(-(prog.cumulative(a) + death.cumulative(a)))


def build_kernels(params: ModelParams, grid: AgeGrid) -> KernelTable:
    beta = beta_rate(params)
    one = StepRate.constant(1.0)
    hazards = stage_hazards(params)
    ages = grid.edges
    D, Dbar, Omega, Gamma = [], [], [], []
    for j, (prog, death) in enumerate(hazards):
        total = prog + death
        D.append(np.exp(-total.cumulative(ages)))
        Dbar.append(weighted_survival_integral(one, total))
        Omega.append(weighted_survival_integral(beta, total))
        if j < 2:
            Gamma.append(weighted_survival_integral(prog, total))
    return KernelTable(
        ages=ages,
        D=np.array(D),
        Dbar=tuple(Dbar),
        Omega=tuple(Omega),
        Gamma=tuple(Gamma),
        hazards=tuple(hazards),
    )


def r0(kernels: KernelTable, params: ModelParams) -> float:
    O1, O2, O3 = kernels.Omega
    G1, G2 = kernels.Gamma
    return O1 + params.eps * O2 * G1 + params.dlt * O3 * G1 * G2


def calibrate_rho0(params: ModelParams, grid: AgeGrid, target_r0: float) -> float:
    """rho0 giving ``target_r0``; exact because R0 is linear in rho0."""
    if target_r0 < 0:
        raise ValueError("target R0 must be >= 0")
    unit = r0(build_kernels(params.replace(rho0=1.0), grid), params)
    if unit <= 0:
        raise ValueError("zero-transmission parameterisation: R0 is 0 for every rho0")
    return target_r0 / unit


@dataclass(frozen=True)
class Endemic:
    S: float
    i: np.ndarray  # shape (3, n_ages + 1), densities at the age nodes
    I0: float
    Dbar: float
    totals: tuple[float, float, float]

    @property
    def P(self) -> float:
        return self.S + sum(self.totals)


@dataclass(frozen=True)
class EquilibriumSet:
    r0: float
    dfe_S: float
    endemic: Endemic | None


def equilibria(kernels: KernelTable, params: ModelParams, grid: AgeGrid | None = None) -> EquilibriumSet:
    R0 = r0(kernels, params)
    dfe = params.lambda_in / params.mu
    if R0 <= 1:
        return EquilibriumSet(R0, dfe, None)
    G1, G2 = kernels.Gamma
    D1, D2, D3 = kernels.Dbar
    Dbar = D1 + G1 * D2 + G1 * G2 * D3
    I0 = params.lambda_in * (R0 - 1) / (params.mu * Dbar + R0 - 1)
    S = I0 * Dbar / (R0 - 1)
    scale = np.array([I0, I0 * G1, I0 * G1 * G2])
    endemic = Endemic(
        S=S,
        i=scale[:, None] * kernels.D,
        I0=I0,
        Dbar=Dbar,
        totals=tuple(float(x) for x in scale * np.array([D1, D2, D3])),
    )
    return EquilibriumSet(R0, dfe, endemic)


def summary(kernels: KernelTable, params: ModelParams, eq: EquilibriumSet | None = None) -> dict:
    """JSON-ready summary with stable keys."""
    out = {
        "r0": r0(kernels, params),
        "omega": list(kernels.Omega),
        "gamma": list(kernels.Gamma),
        "dbar": list(kernels.Dbar),
    }
    if eq is not None:
        out["dfe"] = {"S": eq.dfe_S, "I1": 0.0, "I2": 0.0, "I3": 0.0}
        if eq.endemic is not None:
            e = eq.endemic
            out["endemic"] = {
                "S": e.S, "I1": e.totals[0], "I2": e.totals[1], "I3": e.totals[2],
                "I0": e.I0, "Dbar": e.Dbar, "P": e.P,
            }
    return out
