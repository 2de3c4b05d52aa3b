"""Discrete transport residual of a smoothed point-particle density under grid refinement."""

import argparse

import numpy as np

from relbohm.classical import ClassicalState, classical_trajectory, delta_equivariance_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p3", type=float, nargs=3, default=[0.6, 0.0, 0.0])
    ap.add_argument("--mass", type=float, default=1.0)
    ap.add_argument("--widths", type=float, nargs="+", default=[0.4, 0.2, 0.1, 0.05])
    args = ap.parse_args()

    path = classical_trajectory(ClassicalState.from_p3([args.mass], [args.p3]), np.zeros((1, 4)), (0, 5))
    prev = None
    print(f"{'width':>8} {'spacing':>8} {'weak':>10} {'ratio':>7} {'transport':>10} {'marginal':>10}")
    for w in args.widths:
        r = delta_equivariance_check(path, w, w / 4)
        ratio = f"{prev / r.weak_residual:7.2f}" if prev else f"{'':>7}"
        print(f"{w:8.3g} {w / 4:8.3g} {r.weak_residual:10.3e} {ratio} {r.transport_mismatch:10.3e} {r.marginal_l1:10.1e}")
        prev = r.weak_residual


if __name__ == "__main__":
    main()
