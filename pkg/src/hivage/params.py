"""Model constants, duration-dependent rates and config loading.

All rates are stored per person-month. Transmission hazards are quoted per
100 person-years (divide by 1200); the late-stage excess death rate is quoted
per 1000 person-years (divide by 12000).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli
import tomli_w

HAZARD_PER_100PY = 1200.0
RATE_PER_1000PY = 12000.0
LATE_STAGE_EXCESS_DEATH = 0.14  # per 1000 PYs, added to mu

ENV_PREFIX = "HIVAGE_"


class ConfigError(ValueError):
    """Invalid configuration value or file."""


# ---------------------------------------------------------------------------
# piecewise-constant rates


@dataclass(frozen=True)
class StepRate:
    """Piecewise-constant function of duration.

    ``values[i]`` holds on ``[breaks[i-1], breaks[i])`` with ``breaks[-1] = 0``
    implied and the last value extending to infinity.
    """

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.breaks) + 1:
            raise ValueError("need len(values) == len(breaks) + 1")
        if any(b <= 0 for b in self.breaks) or list(self.breaks) != sorted(self.breaks):
            raise ValueError("breaks must be positive and increasing")
        if any(v < 0 for v in self.values):
            raise ValueError("rates must be nonnegative")

    @classmethod
    def constant(cls, value: float) -> "StepRate":
        return cls((), (float(value),))

    @classmethod
    def step(cls, at: float, after: float, before: float = 0.0) -> "StepRate":
        if at <= 0:
            return cls.constant(after)
        return cls((float(at),), (float(before), float(after)))

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        idx = np.searchsorted(np.asarray(self.breaks), a, side="right")
        out = np.asarray(self.values)[idx]
        return out if out.ndim else float(out)

    def cumulative(self, a):
        """Exact integral of the rate over ``[0, a]``."""
        a = np.asarray(a, dtype=float)
        total = self.values[0] * a
        for b, lo, hi in zip(self.breaks, self.values[:-1], self.values[1:]):
            total = total + (hi - lo) * np.maximum(a - b, 0.0)
        return total if np.ndim(total) else float(total)

    def cell_average(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return (self.cumulative(hi) - self.cumulative(lo)) / (hi - lo)

    @property
    def max(self) -> float:
        return max(self.values)

    @property
    def tail(self) -> float:
        return self.values[-1]

    def __add__(self, other: "StepRate") -> "StepRate":
        breaks = tuple(sorted(set(self.breaks) | set(other.breaks)))
        probes = [0.0, *breaks]
        values = tuple(self(p) + other(p) for p in probes)
        return StepRate(breaks, values)


# ---------------------------------------------------------------------------
# parameters


def _triple(x, name, n=3):
    x = tuple(float(v) for v in x)
    if len(x) != n:
        raise ConfigError(f"{name}: expected {n} values, got {len(x)}")
    return x


@dataclass(frozen=True)
class ModelParams:
    lambda_in: float = 30.0
    mu: float = 1.0 / 30.0
    rho0: float = 2.48
    beta_hazard: tuple[float, float, float] = (276.0, 10.6, 0.0)
    # None: derived from the hazards as b2/b1 and b3/b1
    epsilon: float | None = None
    delta: float | None = None
    stage_duration: tuple[float, float] = (2.9, 120.0)
    gamma_bar: tuple[float, float] = (1.0, 1.0)
    # None: (mu, mu, mu + 0.14/12000)
    d: tuple[float, float, float] | None = None
    p_dropout: tuple[float, float, float] = (0.1, 0.1, 0.1)
    cost_B: float = 65.0
    cost_C: tuple[float, float, float] = (65.0, 65.0, 65.0)
    h_max: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("beta_hazard", _triple(self.beta_hazard, "beta_hazard"))
        set_("stage_duration", _triple(self.stage_duration, "stage_duration", 2))
        set_("gamma_bar", _triple(self.gamma_bar, "gamma_bar", 2))
        set_("p_dropout", _triple(self.p_dropout, "p_dropout"))
        set_("cost_C", _triple(self.cost_C, "cost_C"))
        set_("h_max", _triple(self.h_max, "h_max"))
        if self.d is None:
            excess = LATE_STAGE_EXCESS_DEATH / RATE_PER_1000PY
            set_("d", (self.mu, self.mu, self.mu + excess))
        else:
            set_("d", _triple(self.d, "d"))
        for k in ("lambda_in", "mu", "rho0", "cost_B"):
            set_(k, float(getattr(self, k)))
        for k in ("epsilon", "delta"):
            if getattr(self, k) is not None:
                set_(k, float(getattr(self, k)))
        self._validate()

    def _validate(self):
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        if not self.lambda_in > 0:
            bad("lambda_in", "must be > 0")
        if not self.mu > 0:
            bad("mu", "must be > 0")
        if self.rho0 < 0:
            bad("rho0", "must be >= 0")
        if any(b < 0 for b in self.beta_hazard):
            bad("beta_hazard", "must be >= 0")
        # tiny slack: the default d1 = mu is compared against itself
        if any(dj < self.mu * (1 - 1e-12) for dj in self.d):
            bad("d", "every stage death rate must be >= mu")
        for k in ("epsilon", "delta"):
            v = getattr(self, k)
            if v is not None and not 0 <= v <= 1:
                bad(k, "must lie in [0, 1]")
        if self.epsilon is None and self.beta_hazard[0] > 0:
            if not self.beta_hazard[1] <= self.beta_hazard[0]:
                bad("beta_hazard", "derived epsilon = b2/b1 must be <= 1")
        if any(t <= 0 for t in self.stage_duration):
            bad("stage_duration", "must be > 0")
        if any(g <= 0 for g in self.gamma_bar):
            bad("gamma_bar", "must be > 0")
        if any(not 0 <= p <= 1 for p in self.p_dropout):
            bad("p_dropout", "must lie in [0, 1]")
        if any(not 0 < h <= 1 for h in self.h_max):
            bad("h_max", "must lie in (0, 1]")
        if self.cost_B < 0:
            bad("cost_B", "must be >= 0")
        if any(c <= 0 for c in self.cost_C):
            bad("cost_C", "must be > 0")

    # derived quantities ---------------------------------------------------

    @property
    def eps(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        b1, b2, _ = self.beta_hazard
        return b2 / b1 if b1 > 0 else 0.0

    @property
    def dlt(self) -> float:
        if self.delta is not None:
            return self.delta
        b1, _, b3 = self.beta_hazard
        return b3 / b1 if b1 > 0 else 0.0

    @property
    def dfe_susceptibles(self) -> float:
        return self.lambda_in / self.mu

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def beta_of_age(params: ModelParams, stage: int, a=0.0):
    """Transmission rate during ``stage`` (1-based) in 1/month, constant in ``a``."""
    if stage not in (1, 2, 3):
        raise ValueError(f"invalid stage {stage!r}")
    rate = params.rho0 * params.beta_hazard[stage - 1] / HAZARD_PER_100PY
    return np.full_like(np.asarray(a, dtype=float), rate) if np.ndim(a) else rate


def gamma_of_age(params: ModelParams, stage: int, a, fast_track: bool = False):
    """Progression rate out of ``stage`` (1 or 2): zero until the stage duration."""
    return gamma_rate(params, stage, fast_track)(a)


def gamma_rate(params: ModelParams, stage: int, fast_track: bool = False) -> StepRate:
    if stage not in (1, 2):
        raise ValueError(f"invalid progression stage {stage!r}")
    T = params.stage_duration[stage - 1]
    if fast_track:
        T = T / 2
    return StepRate.step(T, params.gamma_bar[stage - 1])


def beta_rate(params: ModelParams) -> StepRate:
    """The model's beta(a): the stage-1 rate, scaled by eps/delta in later stages."""
    return StepRate.constant(beta_of_age(params, 1))


def death_rate(params: ModelParams, stage: int) -> StepRate:
    return StepRate.constant(params.d[stage - 1])


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class AgeGrid:
    """Shared duration/time discretisation with ``dt == da``."""

    da: float = 0.1
    a_max: float = 600.0
    t_final: float = 420.0

    def __post_init__(self):
        for k in ("da", "a_max", "t_final"):
            object.__setattr__(self, k, float(getattr(self, k)))
        if not self.da > 0:
            raise ConfigError("da: must be > 0")
        for k in ("a_max", "t_final"):
            v = getattr(self, k)
            n = v / self.da
            if v < 0 or abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise ConfigError(f"{k}: must be a nonnegative integer multiple of da")
        if self.a_max <= 0:
            raise ConfigError("a_max: must be > 0")

    @property
    def dt(self) -> float:
        return self.da

    @property
    def n_ages(self) -> int:
        return int(round(self.a_max / self.da))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.da))

    @property
    def edges(self) -> np.ndarray:
        return self.da * np.arange(self.n_ages + 1)

    @property
    def ages(self) -> np.ndarray:
        """Cell midpoints."""
        return self.da * (np.arange(self.n_ages) + 0.5)

    @property
    def times(self) -> np.ndarray:
        return self.da * np.arange(self.n_steps + 1)

    def check(self, params: ModelParams) -> None:
        need = params.stage_duration[1] + 10.0 / params.mu
        if self.a_max < need:
            raise ConfigError(f"a_max: must be >= T2 + 10/mu = {need:g}")

    def replace(self, **changes) -> "AgeGrid":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# config files

SECTIONS = {
    "model": (
        "lambda_in", "mu", "rho0", "beta_hazard", "epsilon", "delta",
        "stage_duration", "gamma_bar", "d",
    ),
    "control": ("p_dropout", "h_max"),
    "costs": ("cost_B", "cost_C"),
    "grid": ("da", "a_max", "t_final"),
}
RUN_KEYS = ("prevalence_pct", "relax", "tol", "max_iter", "stride", "adjoint", "target_r0")
_P_ALIASES = {"p1": 0, "p2": 1, "p2TF": 2}
_PARAM_KEYS = {f.name for f in dataclasses.fields(ModelParams)}
_GRID_KEYS = {f.name for f in dataclasses.fields(AgeGrid)}


@dataclass(frozen=True)
class Config:
    params: ModelParams = field(default_factory=ModelParams)
    grid: AgeGrid = field(default_factory=AgeGrid)
    run: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        p = self.params.to_dict()
        out: dict[str, Any] = {}
        for sec, keys in SECTIONS.items():
            src = self.grid.to_dict() if sec == "grid" else p
            out[sec] = {k: src[k] for k in keys if k in src}
        if self.run:
            out["run"] = dict(self.run)
        return out


def _flatten(doc: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for k, v in doc.items():
        if isinstance(v, Mapping):
            for kk, vv in v.items():
                flat[kk] = vv
        else:
            flat[k] = v
    return flat


def _env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    known = _PARAM_KEYS | _GRID_KEYS | set(RUN_KEYS) | set(_P_ALIASES)
    lookup = {k.upper(): k for k in known}
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = lookup.get(name[len(ENV_PREFIX):].upper())
        if key is None:
            raise ConfigError(f"{name}: unknown config key")
        try:
            out[key] = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            out[key] = raw
    return out


def config_from_mapping(values: Mapping[str, Any]) -> Config:
    """Build a validated config from flat or sectioned key-value pairs."""
    flat = _flatten(values)
    pkw: dict[str, Any] = {}
    gkw: dict[str, Any] = {}
    run: dict[str, Any] = {}
    p_override: dict[int, float] = {}
    for k, v in flat.items():
        if k in _PARAM_KEYS:
            pkw[k] = v
        elif k in _GRID_KEYS:
            gkw[k] = v
        elif k in RUN_KEYS:
            run[k] = v
        elif k in _P_ALIASES:
            p_override[_P_ALIASES[k]] = v
        else:
            raise ConfigError(f"{k}: unknown config key")
    if p_override:
        p = list(pkw.get("p_dropout", ModelParams.p_dropout))
        for i, v in p_override.items():
            p[i] = v
        pkw["p_dropout"] = p
    try:
        params = ModelParams(**pkw)
        grid = AgeGrid(**gkw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return Config(params, grid, run)


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        # run manifests carry the resolved config under "config"
        return doc.get("config", doc)
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Config:
    """Defaults < file < ``HIVAGE_*`` environment < explicit overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(_flatten(read_config_file(path)))
    values.update(_env_overrides(os.environ if environ is None else environ))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)


def load_params(path: str | os.PathLike) -> ModelParams:
    return load_config(path, environ={}).params


def save_params(params: ModelParams, path: str | os.PathLike, grid: AgeGrid | None = None) -> None:
    cfg = Config(params, grid or AgeGrid())
    Path(path).write_text(tomli_w.dumps(cfg.to_dict()))


__all__: Sequence[str] = [
    "AgeGrid", "Config", "ConfigError", "ModelParams", "StepRate",
    "beta_of_age", "beta_rate", "death_rate", "gamma_of_age", "gamma_rate",
    "load_config", "load_params", "save_params",
]
