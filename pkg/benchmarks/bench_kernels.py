"""Compare the numba kernels with the pure-Python fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``ADICFLOW_DISABLE_NUMBA``.  The workload advances a batch of
Parry-random points on Q_A through a log-spaced time grid (the inner loop of
the error audits) and also times single-point fast and slow integrals.

    python benchmarks/bench_kernels.py [--samples 64] [--points 20] [--repeat 3]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from adicflow import _accel
from adicflow.graph_core import Q_A, OrientedGraph
from adicflow.spectral import decompose
from adicflow.observables import CylinderObservable, mean_zero
from adicflow.limit_harness import PeriodicModel, _run_grid

samples, points, repeat = map(int, sys.argv[1:4])
g = OrientedGraph.from_matrix(Q_A)
sd = decompose(Q_A)
model = PeriodicModel(g, sd)
f = mean_zero(CylinderObservable.indicator((3, 4)), sd, g)
eng = model.engine([model.xi(f), sd.v2], [f])
T = np.logspace(np.log10(16.0), np.log10(4.0 ** 12), points)

t0 = time.perf_counter()
_run_grid(eng, T[:3], 2, 0)                      # compile / warm up
warm = time.perf_counter() - t0

batch = []
for r in range(repeat):
    t0 = time.perf_counter()
    out = _run_grid(eng, T, samples, r)
    batch.append(time.perf_counter() - t0)

st = eng.minimal_state(14, 0)
single = []
for r in range(repeat):
    t0 = time.perf_counter()
    for k in range(50):
        eng.advance(st, 1000.0 + 37.0 * k)
    single.append(time.perf_counter() - t0)

slow = []
for r in range(repeat):
    t0 = time.perf_counter()
    for k in range(5):
        eng.advance_slow(st, 1000.0 + 37.0 * k)
    slow.append(time.perf_counter() - t0)

print(json.dumps({"backend": _accel.backend(), "warmup_s": warm, "batch_s": min(batch),
                  "advance_50_s": min(single), "advance_slow_5_s": min(slow),
                  "checksum": float(np.abs(out).sum())}))
"""


def run(disable: bool, samples: int, points: int, repeat: int) -> dict:
    env = dict(os.environ)
    if disable:
        env["ADICFLOW_DISABLE_NUMBA"] = "1"
    else:
        env.pop("ADICFLOW_DISABLE_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", WORKER, str(samples), str(points), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    t0 = time.perf_counter()
    fast = run(False, args.samples, args.points, args.repeat)
    slow = run(True, args.samples, args.points, args.repeat)
    print(f"{'measure':<18}{'numba':>12}{'python':>12}{'speedup':>10}")
    for key in ("batch_s", "advance_50_s", "advance_slow_5_s"):
        a, b = fast[key], slow[key]
        print(f"{key:<18}{a:>12.4f}{b:>12.4f}{b / a:>10.1f}x")
    print(f"{'warmup_s':<18}{fast['warmup_s']:>12.4f}{slow['warmup_s']:>12.4f}")
    same = abs(fast["checksum"] - slow["checksum"]) <= 1e-9 * max(1.0, abs(fast["checksum"]))
    print(f"results agree: {same} (checksum {fast['checksum']:.12g})")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
