"""Benchmark the scenario kernel under both backends.

Runs the same replicate workload in a subprocess per backend (the
backend is fixed at import time by SOILRCT_BACKEND), reports wall time
per replicate batch, and checks that the outputs agree.

Usage: python benchmarks/bench_kernels.py [--replicates R] [--n N]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile

_WORKER = r"""
import json, sys, time
import numpy as np
from soilrct import harness, kernels
from soilrct.population import generate_population

replicates, n, n_pop, out_path = (
    int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3]), sys.argv[4])
grid = harness.ScenarioGrid.paper_defaults(
    n_replicates=replicates, population_size=n_pop, sample_sizes=(n,))
scenario = harness.Scenario(tau=0.15, beta_mod=-0.5, sd_eps1=0.2, n=n, m=5.0)
rng = harness.population_rng(7, *scenario.pop_key)
pop = generate_population(grid.population_params(*scenario.pop_key), rng)
bundle = harness.build_bundle(pop)

rng = harness.scenario_rng(7, scenario)
perm = np.empty((replicates, n), dtype=np.int64)
for r in range(replicates):
    perm[r] = rng.permutation(pop.n_plots)[:n]
noise = rng.standard_normal((replicates, n, 2))
args = (pop.baseline, np.ascontiguousarray(pop.po[:, 0]),
        np.ascontiguousarray(pop.po[:, 1]), bundle.sort_b, bundle.cum0,
        bundle.cum1, bundle.mean_y0, bundle.mean_y1, perm, noise,
        grid.sigma_delta(scenario.m), n // 2)

kernels.scenario_kernel(*args)  # warm up: jit compile or cache load
times = []
for _ in range(5):
    t0 = time.perf_counter()
    out = kernels.scenario_kernel(*args)
    times.append(time.perf_counter() - t0)
np.save(out_path + ".npy", out)
with open(out_path, "w") as fh:
    json.dump({"backend": kernels.BACKEND, "best_s": min(times),
               "mean_s": sum(times) / len(times)}, fh)
"""


def run_backend(backend, replicates, n, n_pop, out_path):
    env = dict(os.environ, SOILRCT_BACKEND=backend)
    subprocess.run(
        [sys.executable, "-c", _WORKER, str(replicates), str(n),
         str(n_pop), out_path],
        env=env, check=True)
    with open(out_path) as fh:
        return json.load(fh)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replicates", type=int, default=2000)
    parser.add_argument("--n", type=int, default=100)
    parser.add_argument("--population", type=int, default=5000)
    opts = parser.parse_args()

    import numpy as np

    results = {}
    with tempfile.TemporaryDirectory() as tmp:
        for backend in ("numpy", "numba"):
            out_path = os.path.join(tmp, backend)
            results[backend] = run_backend(
                backend, opts.replicates, opts.n, opts.population, out_path)
            results[backend]["out"] = np.load(out_path + ".npy")

    a, b = results["numpy"]["out"], results["numba"]["out"]
    agree = np.allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)
    print(f"workload: {opts.replicates} replicates, n={opts.n}, "
          f"population={opts.population}")
    for backend in ("numpy", "numba"):
        r = results[backend]
        per_rep = r["best_s"] / opts.replicates * 1e6
        print(f"{backend:>6}: best {r['best_s'] * 1e3:8.2f} ms "
              f"({per_rep:7.2f} us/replicate, mean of 5 runs "
              f"{r['mean_s'] * 1e3:.2f} ms)")
    speedup = results["numpy"]["best_s"] / results["numba"]["best_s"]
    print(f"speedup: {speedup:.1f}x (numba over numpy)")
    print(f"outputs agree to round-off: {agree}")
    if not agree:
        sys.exit(1)


if __name__ == "__main__":
    main()
