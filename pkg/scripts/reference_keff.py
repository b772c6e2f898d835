"""Reference k_eff of the shipped eigenvalue cases against their literature values."""
import argparse
import time

from mfpinn.bench import get_reference, load_config, shipped_configs
from mfpinn.bench.metrics import delta_keff_pcm


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", nargs="*", default=["sc5g7", "twigl2d", "twigl3d", "homogeneous_eigen"])
    ap.add_argument("--cache", help="reference cache directory")
    args = ap.parse_args()
    shipped = shipped_configs()
    print(f"{'case':>18s} {'grid':>10s} {'k_ref':>10s} {'k_lit':>10s} {'pcm':>7s} {'time':>7s}")
    for name in args.cases:
        case = load_config(shipped[name])
        t0 = time.perf_counter()
        ref = get_reference(case, args.cache)
        lit = case.reference.get("keff")
        grid = "x".join(map(str, case.reference["resolution"]))
        dk = "" if lit is None else f"{delta_keff_pcm(ref.keff, lit):7.1f}"
        print(f"{name:>18s} {grid:>10s} {ref.keff:10.5f} {lit or float('nan'):10.5f} {dk:>7s} "
              f"{time.perf_counter() - t0:6.1f}s")


if __name__ == "__main__":
    main()
