"""Learning-rate schedules for the desk-scale homogeneous eigenvalue case.

Runs the shipped case with each (eta0, milestone_every, floor) triple
(gamma = 0.1) and reports k, its error against the buckling formula and
whether the outer iteration met its tolerances within the budget.
"""
import argparse
import time

import numpy as np

from mfpinn.bench import case_from_dict, case_to_dict, load_config, shipped_configs
from mfpinn.eigen import solve_eigen

SCHEDULES = [(2e-4, 10000, 1e-6), (1e-3, 4000, 1e-6), (1e-3, 3500, 1e-9), (1e-3, 3000, 1e-9)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", default="homogeneous_eigen")
    args = ap.parse_args()
    raw = case_to_dict(load_config(shipped_configs()[args.case]))
    m = raw["materials"][0]
    L = raw["geometry"]["domain_max"][0] - raw["geometry"]["domain_min"][0]
    k_exact = m["nu_sigma_f"][0] / (m["sigma_r"][0] + m["D"][0] * 2 * (np.pi / L) ** 2)
    for eta0, every, floor in SCHEDULES:
        raw["training"].update(eta0=eta0, gamma=0.1, milestone_every=every, floor=floor)
        case = case_from_dict(raw)
        t0 = time.perf_counter()
        k, _, state, _ = solve_eigen(case.field, case.eigen_options(), case.train_options())
        print(f"eta0={eta0:g} every={every} floor={floor:g}: k={k:.6f} ({1e5 * abs(k - k_exact):6.1f} pcm) "
              f"converged={state.converged} outer={state.outer_index} "
              f"last eps_phi={state.eps_phi[-1]:.1e}  {time.perf_counter() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
