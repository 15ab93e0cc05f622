"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--batch 128] [--json out.json]

Each kernel runs on the same inputs under both backends; the table reports
the best-of-N wall time and the max abs difference between the results.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from vir.kernels import backends
from vir.topology import ReservoirSpec, build_reservoir, with_radius


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def cases(batch: int):
    rng = np.random.default_rng(0)
    big = build_reservoir(ReservoirSpec(n=1000))
    small = with_radius(build_reservoir(ReservoirSpec(n=100, jump=14, input_dim=1)), 1.2)
    drive = np.ascontiguousarray(rng.normal(0, 0.5, (49, batch, 1000)))
    states = backends()["python"].scan_states(big.W, drive, False)
    grads = np.ascontiguousarray(rng.normal(0, 1, states.shape))
    ly_drive = np.ascontiguousarray(rng.normal(0, 1, (5100, 1)) @ small.V.T)
    return [
        ("scan_pooled   N=1000 T=49", lambda k: k.scan_pooled(big.W, drive, 0, False)),
        ("scan_states   N=1000 T=49", lambda k: k.scan_states(big.W, drive, False)),
        ("scan_backward N=1000 T=49", lambda k: k.scan_backward(big.W, states, grads, False)),
        ("lyapunov_run  N=100 T=5100", lambda k: k.lyapunov_run(small.W, ly_drive, 1e-8, 100, False)),
    ]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)

    impls = backends()
    if "compiled" not in impls:
        print("compiled extension not built; only the numpy backend is available")
    rows = []
    for name, fn in cases(args.batch):
        times, outs = {}, {}
        for backend, mod in impls.items():
            times[backend], outs[backend] = best_of(lambda: fn(mod), args.repeat)
        row = {"kernel": name, **{f"{b}_s": t for b, t in times.items()}}
        if "compiled" in impls:
            row["speedup"] = times["python"] / times["compiled"]
            row["max_abs_diff"] = max_diff(outs["python"], outs["compiled"])
        rows.append(row)

    print(f"{'kernel':28s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} {'max |diff|':>11s}")
    for r in rows:
        print(
            f"{r['kernel']:28s} {r['python_s']:11.4f} {r.get('compiled_s', float('nan')):13.4f} "
            f"{r.get('speedup', float('nan')):8.2f} {r.get('max_abs_diff', float('nan')):11.2e}"
        )
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
