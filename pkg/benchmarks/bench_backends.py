"""Compare the numba and pure-Python backends on the same seeded runs.

Each backend runs in its own subprocess (the backend is fixed at import time
by POPLABEL_DISABLE_NUMBA).  Reports compile/warm-up time, steady-state
interactions per second, and checks that both backends agree bit for bit.

    python3 benchmarks/bench_backends.py [--quick]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from poplabel import BACKEND, build, run

cases = json.loads(sys.argv[1])
out = {"backend": BACKEND, "cases": []}
for name, n, params, seeds in cases:
    proto = build(name, n, **params)
    t = time.perf_counter()
    run(proto, seed=10 ** 6)  # warm-up, includes compilation
    warm = time.perf_counter() - t
    t = time.perf_counter()
    used, digest = 0, []
    for s in range(seeds):
        r = run(proto, seed=s)
        used += r.interactions_used
        digest.append([r.interactions_used, list(r.final_labels)])
    dt = time.perf_counter() - t
    out["cases"].append({"case": f"{name} n={n} {params}", "warmup_s": warm, "seconds": dt,
                         "interactions": used, "digest": digest})
print(json.dumps(out))
"""

CASES = [
    ("single-cycle", 36, {}, 5),
    ("interval-2n", 1024, {}, 5),
    ("interval-2n", 512, {"leader_mode": "elected"}, 5),
    ("k-cycle", 64, {"k": 4}, 5),
    ("dispenser", 64, {}, 5),
]
QUICK = [("single-cycle", 16, {}, 3), ("interval-2n", 128, {}, 3)]


def bench(cases, disable):
    env = dict(os.environ)
    env.pop("POPLABEL_DISABLE_NUMBA", None)
    if disable:
        env["POPLABEL_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, json.dumps(cases)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    cases = QUICK if args.quick else CASES
    fast = bench(cases, disable=False)
    slow = bench(cases, disable=True)
    print(f"{'case':44s} {'numba Mint/s':>12s} {'python Mint/s':>13s} {'speedup':>8s} {'warmup':>7s} same")
    for a, b in zip(fast["cases"], slow["cases"]):
        ra = a["interactions"] / a["seconds"] / 1e6
        rb = b["interactions"] / b["seconds"] / 1e6
        same = a["digest"] == b["digest"]
        print(f"{a['case']:44s} {ra:12.2f} {rb:13.3f} {ra / rb:7.0f}x {a['warmup_s']:6.1f}s {same}")
        if not same:
            sys.exit("backends disagree")


if __name__ == "__main__":
    main()
