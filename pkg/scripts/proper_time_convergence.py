"""Quantum proper-time residual against step size for the two-mode state.

The residual of ds^2 (V.V) = dX.dX along an integrated path should fall as ds^2.
"""

import argparse

import numpy as np

from relbohm.canonical import two_mode_1d
from relbohm.dynamics import IntegratorConfig, integrate, proper_time_audit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--span", type=float, default=10.0)
    ap.add_argument("--steps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025, 0.0125, 0.001])
    args = ap.parse_args()

    s = two_mode_1d()
    x0 = np.array([[10.0, 3.0, 1.0, 2.0]])
    prev = None
    print(f"{'ds':>10} {'residual':>12} {'ratio':>8}")
    for h in args.steps:
        r = proper_time_audit(s, integrate(s, x0, (0, args.span), IntegratorConfig(step=h))).max_residual_v
        ratio = f"{prev / r:8.2f}" if prev else f"{'':>8}"
        print(f"{h:10.4g} {r:12.3e} {ratio}")
        prev = r


if __name__ == "__main__":
    main()
