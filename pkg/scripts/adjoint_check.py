"""Gradient of J from both adjoint variants against central finite differences.

``exact`` is the transpose of the discrete forward step; ``frozen`` keeps the
susceptible costate at zero as in the printed costate system.
"""

import argparse

import numpy as np

from hivage.control import ControlTrajectory
from hivage.optimize import Problem
from hivage.params import AgeGrid, ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--da", type=float, default=0.5)
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--eta", type=float, default=1e-4)
    args = ap.parse_args()
    p = ModelParams()
    grid = AgeGrid(da=args.da, t_final=420.0)
    rng = np.random.default_rng(0)
    h = ControlTrajectory(0.1 + 0.8 * rng.random((grid.n_steps + 1, 3)))
    grads = {m: Problem(p, grid, adjoint=m).gradient(h)[1] for m in ("exact", "frozen")}
    prob = Problem(p, grid)
    print(f"{'step':>5} {'ctl':>4} {'finite diff':>14} {'exact':>14} {'frozen':>14}")
    for n, k in zip(rng.choice(grid.n_steps, args.samples, replace=False), rng.integers(0, 3, args.samples)):
        up, dn = h.h.copy(), h.h.copy()
        up[n, k] += args.eta
        dn[n, k] -= args.eta
        fd = (prob.J(ControlTrajectory(up)) - prob.J(ControlTrajectory(dn))) / (2 * args.eta)
        print(f"{n:5d} {('h1', 'h2', 'h2TF')[k]:>4} {fd:14.6e} {grads['exact'][n, k]:14.6e} "
              f"{grads['frozen'][n, k]:14.6e}")


if __name__ == "__main__":
    main()
