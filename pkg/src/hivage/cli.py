"""Command-line entry point: ``hivage <subcommand> [options]``.

Every subcommand that writes files puts a ``manifest.json`` next to them.
Passing that manifest back as ``--config`` repeats the run with identical
outputs (the manifest holds the fully resolved configuration and the
subcommand options).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .control import ControlTrajectory, initial_control_state, run_controlled
from .kernels import build_kernels, calibrate_rho0, equilibria, summary
from .optimize import ADJOINT_MODES, SCENARIOS, Problem, performance, performance_surface, sweep
from .params import Config, ConfigError, load_config, read_config_file
from .sensitivity import run_sensitivity
from .simulator import NumericalError, Simulator, initial_state

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2, 64

RUN_DEFAULTS = {
    "prevalence_pct": 0.05,
    "relax": 0.5,
    "tol": 1e-4,
    "max_iter": 200,
    "stride": 1,
    "adjoint": "exact",
}

log = logging.getLogger("hivage")


# ---------------------------------------------------------------------------
# output helpers


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV back into (header, 2-D float array)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return header, data


def emit_trajectory(traj, path: str | Path, stride: int = 1) -> None:
    table = traj.table()[::stride]
    write_csv(path, traj.COLUMNS, table)


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# config resolution


def resolve(cfg: Config) -> Config:
    """Fill run defaults and apply ``target_r0`` calibration."""
    run = {**RUN_DEFAULTS, **dict(cfg.run)}
    if run["adjoint"] not in ADJOINT_MODES:
        raise ConfigError(f"adjoint: expected one of {ADJOINT_MODES}")
    if int(run["stride"]) < 1:
        raise ConfigError("stride: must be >= 1")
    params = cfg.params
    if run.get("target_r0") is not None:
        params = params.replace(rho0=calibrate_rho0(params, cfg.grid, float(run["target_r0"])))
    cfg.grid.check(params)
    return Config(params, cfg.grid, run)


def _parse_set(items: Sequence[str]) -> dict[str, Any]:
    import tomli

    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected key=value")
        try:
            out[key.strip()] = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            out[key.strip()] = raw
    return out


def _manifest_options(path: str | None) -> dict[str, Any]:
    if path and Path(path).suffix == ".json" and Path(path).is_file():
        doc = json.loads(Path(path).read_text())
        return doc.get("options", {})
    return {}


class Run:
    """One CLI invocation: resolved config, output dir, manifest."""

    def __init__(self, command: str, args: argparse.Namespace, options: dict[str, Any]):
        self.command = command
        self.args = args
        self.options = options
        overrides = _parse_set(args.set)
        if args.da is not None:
            overrides["da"] = args.da
        if args.t_final is not None:
            overrides["t_final"] = args.t_final
        if args.config is not None:
            read_config_file(args.config)  # surfaces missing/invalid files early
        self.cfg = resolve(load_config(args.config, overrides))
        self.out = Path(args.out) if args.out else None
        self.started = time.perf_counter()

    @property
    def params(self):
        return self.cfg.params

    @property
    def grid(self):
        return self.cfg.grid

    def outdir(self) -> Path:
        if self.out is None:
            raise ConfigError(f"{self.command}: --out is required")
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out

    def finish(self) -> None:
        if self.out is None:
            return
        manifest = {
            "subcommand": self.command,
            "version": __version__,
            "config": self.cfg.to_dict(),
            "options": self.options,
            "determinism": "no random numbers are drawn; identical config gives identical outputs",
            "wall_time_s": round(time.perf_counter() - self.started, 3),
        }
        write_json(self.outdir() / "manifest.json", _jsonable(manifest))


# ---------------------------------------------------------------------------
# subcommands


def cmd_r0(run: Run) -> int:
    k = build_kernels(run.params, run.grid)
    eq = equilibria(k, run.params, run.grid)
    out = summary(k, run.params, eq)
    out.pop("endemic", None)
    out["rho0"] = run.params.rho0
    return _print_summary(run, out)


def cmd_equilibrium(run: Run) -> int:
    k = build_kernels(run.params, run.grid)
    out = summary(k, run.params, equilibria(k, run.params, run.grid))
    out["rho0"] = run.params.rho0
    return _print_summary(run, out)


def _print_summary(run: Run, out: dict) -> int:
    text = json.dumps(_jsonable(out), indent=2, sort_keys=True)
    print(text)
    if run.out is not None:
        (run.outdir() / "summary.json").write_text(text + "\n")
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    out = run.outdir()
    snaps = run.options.get("snapshots") or []
    sim = Simulator(run.params, run.grid)
    traj = sim.run(initial_state(run.params, run.grid, run.cfg.run["prevalence_pct"]), snaps)
    emit_trajectory(traj, out / "trajectory.csv", int(run.cfg.run["stride"]))
    if snaps:
        ages = run.grid.ages
        times = sorted(traj.snapshots)
        for j in range(3):
            cols = ["a", *[f"t={fmt(t)}" for t in times]]
            mat = np.column_stack([ages, *[traj.snapshots[t][j] for t in times]])
            write_csv(out / f"density_i{j + 1}.csv", cols, mat)
    return EXIT_OK


def _read_controls(path: str | Path, run: Run) -> ControlTrajectory:
    header, data = read_csv(path)
    need = ["t", "h1", "h2", "h2TF"]
    if header[:4] != need:
        raise ConfigError(f"{path}: expected columns {','.join(need)}")
    return ControlTrajectory.from_samples(run.grid, data[:, 0], data[:, 1:4], run.params.h_max)


def _write_controls(path: Path, grid, h: ControlTrajectory) -> None:
    write_csv(path, ["t", "h1", "h2", "h2TF"], np.column_stack([grid.times, h.h]))


def cmd_simulate_controlled(run: Run) -> int:
    src = run.options.get("controls")
    if not src:
        raise ConfigError("simulate-controlled: --controls is required")
    h = _read_controls(src, run)
    out = run.outdir()
    used = out / "controls.csv"
    if Path(src).resolve() != used.resolve():
        shutil.copyfile(src, used)
    run.options["controls"] = str(used.resolve())
    init = initial_control_state(run.params, run.grid, run.cfg.run["prevalence_pct"])
    traj = run_controlled(run.params, run.grid, init, h)
    emit_trajectory(traj, out / "trajectory.csv", int(run.cfg.run["stride"]))
    base = run_controlled(run.params, run.grid, init, None).aids_person_time
    delta = traj.aids_person_time / base if base > 0 else None
    write_json(out / "summary.json", {"aids_person_time": traj.aids_person_time, "delta": delta})
    return EXIT_OK


def cmd_optimize(run: Run) -> int:
    out = run.outdir()
    r = run.cfg.run
    init = initial_control_state(run.params, run.grid, r["prevalence_pct"])
    active = SCENARIOS[run.options.get("scenario") or "all"]
    res = sweep(run.params, run.grid, init, relax=float(r["relax"]), tol=float(r["tol"]),
                max_iter=int(r["max_iter"]), active=active, adjoint=r["adjoint"])
    prob = Problem(run.params, run.grid, init)
    J_zero = prob.J(prob.zero_controls())
    delta = performance(run.params, run.grid, init, res.h_star)
    _write_controls(out / "controls.csv", run.grid, res.h_star)
    write_csv(out / "objective.csv", ["iter", "J"], enumerate(res.J_history))
    emit_trajectory(res.final_forward, out / "trajectory.csv", int(r["stride"]))
    write_json(out / "summary.json", {
        "J_star": res.J_star,
        "J_zero": J_zero,
        "delta": delta,
        "iterations": res.iterations,
        "converged": res.converged,
    })
    if not res.converged:
        log.warning("sweep did not converge after %d iterations", res.iterations)
    return EXIT_OK


def parse_p_grid(spec: str, base: Sequence[float]) -> list[tuple[float, float, float]]:
    """``p1=0:0.8:5,p2=0.1|0.2`` -> cartesian product; ``a:b:n`` is an n-point linspace.

    Axes not named keep their value from ``base``.
    """
    names = ("p1", "p2", "p2TF")
    axes: list[list[float]] = [[float(v)] for v in base]
    for part in filter(None, (s.strip() for s in spec.split(","))):
        key, sep, val = part.partition("=")
        if not sep or key.strip() not in names:
            raise ConfigError(f"--p-grid: bad axis {part!r}; use p1=..., p2=..., p2TF=...")
        try:
            if ":" in val:
                lo, hi, n = val.split(":")
                vals = [float(x) for x in np.linspace(float(lo), float(hi), int(n))]
            else:
                vals = [float(x) for x in val.split("|")]
        except ValueError as exc:
            raise ConfigError(f"--p-grid: {part!r}: {exc}") from exc
        if any(not 0 <= x <= 1 for x in vals):
            raise ConfigError(f"--p-grid: {part!r}: probabilities must lie in [0, 1]")
        axes[names.index(key.strip())] = vals
    return [tuple(p) for p in itertools.product(*axes)]


def cmd_sweep_performance(run: Run) -> int:
    scenario = run.options.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"--scenario: choose from {sorted(SCENARIOS)}")
    grid_p = parse_p_grid(run.options.get("p_grid") or "", run.params.p_dropout)
    r = run.cfg.run
    cells = performance_surface(run.params, run.grid, scenario, grid_p, jobs=run.args.jobs,
                                relax=float(r["relax"]), tol=float(r["tol"]),
                                max_iter=int(r["max_iter"]), adjoint=r["adjoint"])
    rows = [(*c.p, c.delta, c.converged, c.iterations, c.J_star, c.status) for c in cells]
    write_csv(run.outdir() / "surface.csv",
              ["p1", "p2", "p2TF", "delta", "converged", "iterations", "J_star", "status"], rows)
    return EXIT_OK


def cmd_sensitivity(run: Run) -> int:
    levels = int(run.options.get("levels") or 4)
    idx, table = run_sensitivity(run.params, run.grid, levels, jobs=run.args.jobs)
    out = run.outdir()
    cols = [*idx.factors, "I3_tot"]
    write_csv(out / "runs.csv", cols, ([row[c] for c in cols] for row in table))
    write_csv(out / "indices.csv", ["factor", "main", "total"],
              zip(idx.factors, idx.main, idx.total))
    return EXIT_OK


COMMANDS = {
    "r0": cmd_r0,
    "equilibrium": cmd_equilibrium,
    "simulate": cmd_simulate,
    "simulate-controlled": cmd_simulate_controlled,
    "optimize": cmd_optimize,
    "sweep-performance": cmd_sweep_performance,
    "sensitivity": cmd_sensitivity,
}


# ---------------------------------------------------------------------------
# argument parsing


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which we reserve
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config, or a manifest.json from a previous run")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--da", type=float, help="grid step (months)")
    common.add_argument("--t-final", type=float, help="time horizon (months)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="hivage", description="Duration-structured HIV model toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.add_parser("r0", parents=[common], help="basic reproduction number")
    sub.add_parser("equilibrium", parents=[common], help="disease-free and endemic equilibria")
    p = sub.add_parser("simulate", parents=[common], help="uncontrolled epidemic")
    p.add_argument("--snapshots", help="comma-separated times for density snapshots")
    p = sub.add_parser("simulate-controlled", parents=[common], help="epidemic under given controls")
    p.add_argument("--controls", help="CSV with columns t,h1,h2,h2TF")
    p = sub.add_parser("optimize", parents=[common], help="optimal ART controls")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p = sub.add_parser("sweep-performance", parents=[common], help="performance over drop-out grids")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p.add_argument("--p-grid", help="e.g. p1=0:0.8:5 or p2=0.05|0.1|0.2")
    p = sub.add_parser("sensitivity", parents=[common], help="factorial ANOVA of AIDS person-time")
    p.add_argument("--levels", type=int)
    return parser


OPTION_KEYS = {
    "simulate": ("snapshots",),
    "simulate-controlled": ("controls",),
    "optimize": ("scenario",),
    "sweep-performance": ("scenario", "p_grid"),
    "sensitivity": ("levels",),
}


def _options(command: str, args: argparse.Namespace) -> dict[str, Any]:
    opts = {}
    saved = _manifest_options(args.config)
    for key in OPTION_KEYS.get(command, ()):
        val = getattr(args, key, None)
        if val is None:
            val = saved.get(key)
        if key == "snapshots" and isinstance(val, str):
            try:
                val = [float(t) for t in val.split(",") if t.strip()]
            except ValueError as exc:
                raise ConfigError(f"--snapshots: {exc}") from exc
        if val is not None:
            opts[key] = val
    return opts


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv or (not argv[0].startswith("-") and argv[0] not in COMMANDS):
        if argv:
            print(f"hivage: unknown subcommand {argv[0]!r}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run = Run(args.command, args, _options(args.command, args))
        code = COMMANDS[args.command](run)
        run.finish()
        return code
    except (NumericalError, FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        print(f"hivage: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, FileNotFoundError, OSError, KeyError) as exc:
        print(f"hivage: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
