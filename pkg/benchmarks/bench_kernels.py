"""Time the numba kernels against the pure-numpy fallback.

Runs each workload in this process, then re-runs this script with
MACALLOC_DISABLE_NUMBA=1 in a subprocess and prints both timings, the
speedup and the largest elementwise difference between the two outputs
(LLVM may contract or reorder float operations, so they need not agree
bitwise).

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def workloads():
    from macalloc import _kernels
    from macalloc.channel import FadingProcess, geometric_chain, sample_path
    from macalloc.power_control import _kernels as pk

    rng = np.random.default_rng(0)

    def rank_tables():
        q = rng.uniform(0.1, 5.0, size=(200, 12))
        return _kernels.mc_rank_table(np.ascontiguousarray(q), 1.0)

    def rate_split():
        out = []
        for _ in range(300):
            m = 64
            q = rng.uniform(0.1, 5.0, m)
            r = rng.uniform(0.0, 0.1, m)
            status, label, order = _kernels.rate_split(q, r, 1.0, 1e-12)
            out.append(status)
            out.extend(order[:4])
        return np.array(out, dtype=np.int64)

    def projection():
        out = []
        for _ in range(300):
            m = 16
            q = rng.uniform(0.1, 5.0, m)
            y = rng.uniform(0.0, 1.0, m)
            x, _, k = _kernels.approx_project_split(y, q, 1.0, 1e-12, 4096)
            out.append(x)
        return np.concatenate(out)

    def markov():
        proc = FadingProcess.iid(geometric_chain(1.0, 1.22), 8)
        return sample_path(proc, 200_000, 1).gains

    def envelope():
        H = rng.exponential(1.0, size=(20_000, 6))
        mu = np.array([1.0, 1.5, 2.0, 0.5, 1.2, 0.8])
        lam = np.full(6, 0.3)
        P, R = pk.tse_batch(np.ascontiguousarray(H), mu, lam, 1.0)
        return np.concatenate([P.ravel(), R.ravel()])

    return {"mc_rank_table": rank_tables, "rate_split_m64": rate_split,
            "approx_project_m16": projection, "markov_walk": markov,
            "tse_envelope": envelope}


def run(repeat: int, save=None) -> dict:
    from macalloc import backend
    res = {"backend": backend(), "timings": {}}
    outputs = {}
    for name, fn in workloads().items():
        out = fn()  # warm-up, includes compilation or cache load
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        res["timings"][name] = best
        outputs[name] = np.asarray(out, dtype=float)
    if save:
        np.savez(save, **outputs)
    return res, outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="write results to this file")
    ap.add_argument("--child", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run(args.repeat, args.child)[0]))
        return 0

    fast, out_fast = run(args.repeat)
    env = dict(os.environ, MACALLOC_DISABLE_NUMBA="1")
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "fallback.npz")
        proc = subprocess.run([sys.executable, __file__, "--child", path,
                               "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        slow = json.loads(proc.stdout.strip().splitlines()[-1])
        with np.load(path) as z:
            out_slow = {k: z[k] for k in z.files}

    print(f"{'workload':<22}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}"
          f"{'max diff':>12}")
    for name, t in fast["timings"].items():
        ts = slow["timings"][name]
        diff = float(np.max(np.abs(out_fast[name] - out_slow[name])))
        fast.setdefault("max_diff", {})[name] = diff
        print(f"{name:<22}{t:>11.4f}s{ts:>11.4f}s{ts / t:>9.1f}x{diff:>12.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"accelerated": fast, "fallback": slow}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
