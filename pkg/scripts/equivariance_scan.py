"""Chi-square p-values for transported ensembles of the canonical states."""

import argparse

from relbohm.canonical import CANONICAL
from relbohm.dynamics import IntegratorConfig
from relbohm.ensemble import EnsembleSpec, equivariance_test


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--states", nargs="+", default=["two_mode_1d", "entangled_two_branch", "generic_four_mode"])
    ap.add_argument("--delta-s", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--count", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = IntegratorConfig(step=args.step)
    print(f"{'state':<22} {'delta_s':>8} {'kept':>7} {'p_min':>8}")
    for name in args.states:
        s = CANONICAL[name]()
        spec = EnsembleSpec.full_box(s, args.count, seed=args.seed, workers=args.workers)
        for ds in args.delta_s:
            rep = equivariance_test(s, spec, ds, cfg)
            print(f"{name:<22} {ds:8.3g} {rep.kept:7d} {rep.p_min:8.3f}")


if __name__ == "__main__":
    main()
