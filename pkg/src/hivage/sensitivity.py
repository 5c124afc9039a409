"""Full-factorial ANOVA sensitivity of cumulative AIDS person-time.

Factors are the stage-1/stage-2 durations (which set gamma1, gamma2) and the
stage-1/stage-2 transmission hazards. The response for each run is
``int_0^T int i3 da dt``. On a balanced full factorial every ANOVA sum of
squares is an orthogonal projection, computed here directly from marginal
means, so no regression solver is involved.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .params import AgeGrid, ModelParams
from .simulator import initial_state, run, trapezoid_time

FACTOR_RANGES = {
    "T0_1": (1.23, 6.0),
    "T0_2": (108.0, 180.0),
    "beta1": (131.0, 509.0),
    "beta2": (7.61, 13.3),
}
FACTORS = tuple(FACTOR_RANGES)


@dataclass(frozen=True)
class Design:
    factors: tuple[str, ...]
    levels: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.factors) != len(self.levels):
            raise ValueError("one level list per factor")
        for f, lv in zip(self.factors, self.levels):
            if f in FACTOR_RANGES:
                lo, hi = FACTOR_RANGES[f]
                if any(not lo <= x <= hi for x in lv):
                    raise ValueError(f"{f}: levels outside [{lo}, {hi}]")

    @classmethod
    def full_factorial(cls, n_levels: int = 4, factors=FACTORS) -> "Design":
        if n_levels < 2:
            raise ValueError("need at least 2 levels per factor")
        levels = tuple(tuple(np.linspace(*FACTOR_RANGES[f], n_levels)) for f in factors)
        return cls(tuple(factors), levels)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    def runs(self) -> list[dict[str, float]]:
        return [dict(zip(self.factors, combo)) for combo in itertools.product(*self.levels)]

    def cell_index(self, run: dict[str, float]) -> tuple[int, ...]:
        return tuple(self.levels[k].index(run[f]) for k, f in enumerate(self.factors))


def with_factors(params: ModelParams, run: dict[str, float]) -> ModelParams:
    T = list(params.stage_duration)
    b = list(params.beta_hazard)
    T[0] = run.get("T0_1", T[0])
    T[1] = run.get("T0_2", T[1])
    b[0] = run.get("beta1", b[0])
    b[1] = run.get("beta2", b[1])
    return params.replace(stage_duration=tuple(T), beta_hazard=tuple(b))


def evaluate_response(params: ModelParams, grid: AgeGrid, prevalence_pct: float = 0.05) -> float:
    """AIDS person-time over [0, grid.t_final] from the standard initial data."""
    traj = run(params, grid, initial_state(params, grid, prevalence_pct))
    return trapezoid_time(traj.I[:, 2], grid.da)


def _evaluate(args):
    params, grid, run_ = args
    try:
        return evaluate_response(with_factors(params, run_), grid)
    except Exception as exc:
        raise RuntimeError(f"run {run_} failed: {exc}") from exc


@dataclass
class SensitivityIndices:
    factors: tuple[str, ...]
    main: np.ndarray
    total: np.ndarray
    explained: float
    ss: dict[tuple[str, ...], float]
    ss_total: float

    def ranking(self) -> list[str]:
        return [self.factors[k] for k in np.argsort(-self.total, kind="stable")]


def anova_terms(y: np.ndarray) -> dict[tuple[int, ...], float]:
    """Sums of squares of every main effect and interaction of a balanced table."""
    y = np.asarray(y, dtype=float)
    k = y.ndim
    out = {}
    for order in range(1, k + 1):
        for subset in itertools.combinations(range(k), order):
            z = y
            for ax in range(k):
                if ax in subset:
                    z = z - z.mean(axis=ax, keepdims=True)
                else:
                    z = z.mean(axis=ax, keepdims=True)
            out[subset] = float(np.sum(np.broadcast_to(z, y.shape) ** 2))
    return out


def anova_decompose(design: Design, responses, max_order: int = 3) -> SensitivityIndices:
    """Main and total indices from the terms up to ``max_order``.

    ``responses`` is either an array shaped like the design or a mapping from
    run dicts (as tuples of items) to values.
    """
    y = _as_table(design, responses)
    ss_total = float(np.sum((y - y.mean()) ** 2))
    terms = anova_terms(y)
    names = design.factors
    kept = {s: v for s, v in terms.items() if len(s) <= max_order}
    ss_named = {tuple(names[i] for i in s): v for s, v in terms.items()}
    k = len(names)
    if ss_total == 0:
        return SensitivityIndices(names, np.zeros(k), np.zeros(k), 0.0, ss_named, 0.0)
    main = np.array([terms[(i,)] for i in range(k)]) / ss_total
    total = np.array([sum(v for s, v in kept.items() if i in s) for i in range(k)]) / ss_total
    explained = sum(kept.values()) / ss_total
    return SensitivityIndices(names, main, total, explained, ss_named, ss_total)


def _as_table(design: Design, responses) -> np.ndarray:
    if isinstance(responses, dict):
        y = np.full(design.shape, np.nan)
        for key, val in responses.items():
            run_ = dict(key)
            y[design.cell_index(run_)] = val
    else:
        y = np.asarray(responses, dtype=float).reshape(design.shape)
    if np.isnan(y).any():
        raise ValueError("incomplete design: missing responses")
    return y


def run_sensitivity(params: ModelParams, grid: AgeGrid, levels_per_factor: int = 4,
                    jobs: int = 1) -> tuple[SensitivityIndices, list[dict[str, float]]]:
    design = Design.full_factorial(levels_per_factor)
    runs = design.runs()
    tasks = [(params, grid, r) for r in runs]
    if jobs <= 1:
        values = [_evaluate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_evaluate, tasks))
    table = [dict(r, I3_tot=v) for r, v in zip(runs, values)]
    return anova_decompose(design, np.array(values)), table
