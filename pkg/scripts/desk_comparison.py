"""Scaled vs unscaled loss on a fixed-source case over several seeds.

Defaults reproduce the desk-scale C5G7 comparison (3 x 32 Sin network,
2048 Sobol points, 10000 iterations, seeds 0-2).
"""
import argparse
import time

import numpy as np

from mfpinn.bench import get_reference, load_config, shipped_configs, with_overrides
from mfpinn.bench.metrics import compute_metrics
from mfpinn.network import build_hbc, constrained_eval
from mfpinn.training import SourceProblem, train_source


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", default="c5g7_source_desk")
    ap.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    ap.add_argument("--iters", type=int)
    ap.add_argument("--cache", help="reference cache directory")
    args = ap.parse_args()
    base = load_config(shipped_configs()[args.case])
    ref = get_reference(base, args.cache)
    Xt = ref.cell_centers()
    errors = {"scaled": [], "unscaled": []}
    for seed in args.seeds:
        for loss in errors:
            case = with_overrides(base, loss=loss, seed=seed, iters=args.iters)
            t0 = time.perf_counter()
            params, history = train_source(SourceProblem(case.field), case.train_options())
            out = constrained_eval(params, build_hbc(case.geometry), Xt)
            m = compute_metrics(out.phi, out.p, ref.phi, ref.p, "source")
            errors[loss].append(m.rel_flux_error_pct)
            print(f"seed {seed} {loss:>8s}: flux {m.rel_flux_error_pct:8.3f}%  current {m.rel_current_error_pct:8.3f}%  "
                  f"loss {history.losses[-1]:.3e}  {time.perf_counter() - t0:.0f}s", flush=True)
    for loss, v in errors.items():
        print(f"median flux error {loss:>8s}: {np.median(v):.3f}%")


if __name__ == "__main__":
    main()
