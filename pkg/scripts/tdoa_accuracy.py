#!/usr/bin/env python3
"""TDoA error against arrival-time noise for a square of four receivers.

Emitters are drawn uniformly inside the square; arrival times come from the
forward model plus Gaussian noise. Prints median and 90th percentile error.
"""

import argparse

import numpy as np

from dronesense.swarm import TriangObs, tdoa_arrivals, tdoa_locate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=float, default=200.0)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--noise-ns", type=float, nargs="+", default=[0.0, 1.0, 3.0, 10.0, 30.0])
    args = ap.parse_args()

    s = args.side
    receivers = [(0.0, 0.0), (s, 0.0), (s, s), (0.0, s)]
    rng = np.random.default_rng(args.seed)
    emitters = rng.uniform(0.01 * s, 0.99 * s, size=(args.trials, 2))
    print(f"{'noise_ns':>9} {'median_m':>10} {'p90_m':>10} {'max_m':>10}")
    for noise in args.noise_ns:
        errors = []
        for e in emitters:
            t = np.array(tdoa_arrivals(tuple(e), receivers)) + rng.normal(0.0, noise * 1e-9, 4)
            est = tdoa_locate([TriangObs(x, y, arrival_s=float(ti)) for (x, y), ti in zip(receivers, t)])
            errors.append(est.error_to(*e))
        q = np.percentile(errors, [50, 90, 100])
        print(f"{noise:9.1f} {q[0]:10.3g} {q[1]:10.3g} {q[2]:10.3g}")


if __name__ == "__main__":
    main()
