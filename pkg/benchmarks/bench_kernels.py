"""Compare the compiled and numpy kernel backends on one synthetic workload.

    python3 benchmarks/bench_kernels.py [--atoms 4000] [--repeat 3]

Prints one line per (kernel, backend) with the best wall time, the speedup
over the python backend, and the max abs difference between backends.
"""
import argparse
import time

import numpy as np

from reifenberg.generators import snowflake_balls, SnowflakeSpec
from reifenberg.kernels import backends
from reifenberg.measure import GridIndex, measure_from_balls


def workload(atoms):
    # pick the scale index whose ball count is closest to the request
    best = None
    for s in range(3, 9):
        bc = snowflake_balls(SnowflakeSpec.constant(0.3, 6), s)
        if best is None or abs(len(bc) - atoms) < abs(len(best) - atoms):
            best = bc
    mu = measure_from_balls(best, 1)
    return mu


def cases(mu):
    n, k = mu.n, mu.k
    r = 0.05
    g = GridIndex(mu.positions, r)
    w = np.ascontiguousarray(mu.weights[g.order])
    args = g._args()
    centers = np.ascontiguousarray(mu.positions[::2])
    C = len(centers)
    bases = centers.copy()
    frames = np.zeros((C, k, n))
    frames[:, 0, 0] = 1.0
    normals = np.zeros((C, n - k, n))
    normals[:, 0, 1] = 1.0
    vals = np.ascontiguousarray(np.stack([w, w * w], axis=1))
    sg = GridIndex(centers, 4 * r)
    sb = np.ascontiguousarray(bases[sg.order])
    sf = np.ascontiguousarray(frames[sg.order])
    pts = np.ascontiguousarray(np.random.default_rng(0).uniform(-1, 1, (20000, n)))
    return {
        "query_ball": lambda m: m.query_ball(*args, centers, r),
        "ball_sums": lambda m: m.ball_sums(*args, vals, centers, r),
        "ball_moments": lambda m: m.ball_moments(*args, w, centers, r, centers, frames, 2.0, np.zeros(C)),
        "ball_residuals": lambda m: m.ball_residuals(*args, w, centers, r, bases, frames, 4.0),
        "ball_newton": lambda m: m.ball_newton(*args, w, centers, r, bases, frames, normals, 4.0),
        "sigma_eval": lambda m: m.sigma_eval(sg.points, sg.keys, sg.origin, sg.cell, sg.dims, sg.strides,
                                             sb, sf, r, pts),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.asarray(o, dtype=float).ravel() for o in out])
    return np.asarray(out, dtype=float).ravel()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--atoms", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    mu = workload(args.atoms)
    mods = backends()
    print(f"atoms={len(mu)} backends={sorted(mods)}")
    print(f"{'kernel':<16}{'backend':<9}{'best_s':>10}{'speedup':>9}{'max_diff':>11}")
    for name, fn in cases(mu).items():
        times, outs = {}, {}
        for b, m in sorted(mods.items()):
            best = float("inf")
            for _ in range(args.repeat):
                t = time.perf_counter()
                outs[b] = fn(m)
                best = min(best, time.perf_counter() - t)
            times[b] = best
        ref = _flat(outs["python"])
        for b in sorted(times):
            diff = float(np.max(np.abs(_flat(outs[b]) - ref))) if len(ref) else 0.0
            print(f"{name:<16}{b:<9}{times[b]:>10.4f}{times['python'] / times[b]:>9.1f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
