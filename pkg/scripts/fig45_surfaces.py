"""Performance surfaces over drop-out probabilities for each control scenario."""

import argparse
from pathlib import Path

from hivage.cli import parse_p_grid, write_csv
from hivage.optimize import performance_surface
from hivage.params import AgeGrid, ModelParams

DEFAULT_GRIDS = {
    "h1-only": "p1=0:0.8:5",
    "h2-only": "p2=0:0.3:7",
    "h1+h2": "p1=0:0.8:5,p2=0:0.3:4",
    "h1+h2TF": "p1=0:0.8:5,p2TF=0:0.3:4",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/fig45")
    ap.add_argument("--da", type=float, default=0.5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--scenarios", nargs="*", default=list(DEFAULT_GRIDS))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = ModelParams()
    grid = AgeGrid(da=args.da, t_final=420.0)
    for sc in args.scenarios:
        cells = performance_surface(p, grid, sc, parse_p_grid(DEFAULT_GRIDS[sc], p.p_dropout), jobs=args.jobs)
        write_csv(out / f"surface_{sc.replace('+', '_')}.csv",
                  ["p1", "p2", "p2TF", "delta", "converged", "iterations", "J_star", "status"],
                  [(*c.p, c.delta, c.converged, c.iterations, c.J_star, c.status) for c in cells])
        for c in cells:
            print(f"{sc:8s} p={c.p} Delta={c.delta:.4f} converged={c.converged}", flush=True)


if __name__ == "__main__":
    main()
