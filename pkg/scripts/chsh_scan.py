"""Empirical outcome correlation E(theta) from pointer statistics against -cos(theta)."""

import argparse

import numpy as np

from relbohm.measurement import chsh_amplitudes, correlation_scenario, run_chsh, run_correlation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--angles", type=int, default=7)
    ap.add_argument("--chsh", action="store_true", help="also run the four CHSH settings")
    args = ap.parse_args()

    print(f"{'theta':>8} {'E':>8} {'-cos':>8} {'z':>6}")
    for i, th in enumerate(np.linspace(0, np.pi, args.angles)):
        rep = run_correlation(correlation_scenario(chsh_amplitudes(th), count=args.count, seed=args.seed + i))
        e = rep.correlation()
        se = np.sqrt(max(1 - e**2, 1e-12) / rep.count)
        print(f"{th:8.4f} {e:8.4f} {-np.cos(th):8.4f} {abs(e + np.cos(th)) / se:6.2f}")
    if args.chsh:
        r = run_chsh(count=args.count, seed=args.seed)
        print(f"S = {r.S:.4f} +- {r.stderr:.4f} (2 sqrt 2 = {2 * np.sqrt(2):.4f})")


if __name__ == "__main__":
    main()
