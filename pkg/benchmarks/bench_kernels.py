"""Compare the numba and pure-numpy kernel paths.

Each path runs in its own interpreter because LGGP_DISABLE_NUMBA is read at
import time. The worker prints one JSON line; the driver prints a table and
checks that both paths agree on the log-density.

    python benchmarks/bench_kernels.py [--sizes 32 64 128] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat, number):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def worker(sizes, n_transitions):
    from lggp import model as M
    from lggp._numba import USE_NUMBA
    from lggp.linearization import iterate_pl
    from lggp.sampler import nuts_draw
    from lggp.schemes import simulate_lggp

    spec = M.PRESETS["synthetic"]
    rows = []
    for K in sizes:
        ds, _, _ = simulate_lggp(np.linspace(0, 1, K), rng=np.random.default_rng(K))
        target = M.make_target(ds, spec)
        q = target.initial
        t0 = time.perf_counter()
        lp, _ = target(q)  # includes compile or cache load on the numba path
        first = time.perf_counter() - t0
        grad_s = _best_of(lambda: target(q), 3, 200 if USE_NUMBA else 20)

        rng = np.random.default_rng(0)
        inv_mass = np.ones(target.dim)
        nuts_draw(target, q, 1e-3, inv_mass, rng, max_depth=6)
        t0 = time.perf_counter()
        state = q
        for _ in range(n_transitions):
            state, _ = nuts_draw(target, state, 1e-3, inv_mass, rng, max_depth=6)
        nuts_s = (time.perf_counter() - t0) / n_transitions

        iterate_pl(spec, ds, 10, 1, np.random.default_rng(1), tol=None)
        t0 = time.perf_counter()
        iterate_pl(spec, ds, 2000, 2, np.random.default_rng(1), tol=None)
        pl_s = time.perf_counter() - t0
        rows.append({"K": K, "log_density": lp, "first_call_s": first, "grad_s": grad_s,
                     "nuts_transition_s": nuts_s, "pl_s": pl_s})
    print(json.dumps({"numba": USE_NUMBA, "rows": rows}))


def run_path(disable, sizes, n_transitions):
    env = dict(os.environ, LGGP_DISABLE_NUMBA="1" if disable else "0")
    cmd = [sys.executable, __file__, "--worker", "--sizes", *map(str, sizes),
           "--transitions", str(n_transitions)]
    out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--transitions", type=int, default=10)
    ap.add_argument("--json", help="also write raw timings here")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.sizes, args.transitions)
        return 0

    fast = run_path(False, args.sizes, args.transitions)
    slow = run_path(True, args.sizes, args.transitions)
    print(f"{'K':>5} {'metric':<18} {'numba':>12} {'numpy':>12} {'speedup':>8}")
    ok = True
    for a, b in zip(fast["rows"], slow["rows"]):
        for key in ("grad_s", "nuts_transition_s", "pl_s", "first_call_s"):
            print(f"{a['K']:>5} {key:<18} {a[key]:>12.3e} {b[key]:>12.3e} {b[key] / a[key]:>8.1f}")
        rel = abs(a["log_density"] - b["log_density"]) / abs(b["log_density"])
        ok &= rel < 1e-10
        print(f"{a['K']:>5} {'lp rel. diff':<18} {rel:>12.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": fast, "numpy": slow}, fh, indent=2)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
