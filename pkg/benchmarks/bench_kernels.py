"""Throughput of the numba kernels against the pure-Python fallback.

Each backend runs in its own process (the switch is read at import time):

    python3 benchmarks/bench_kernels.py --execs 20000

Reports executions per second for a havoc-heavy and a deterministic-heavy
campaign, excluding numba compilation, and checks both backends build the
same queue.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

CASES = [
    ("nested_keyword", b"<!ATTLIST doc type CDATA #IMPLIED>", "fairfuzz"),
    ("magic_bytes", b"BAD?xxxx", "afl"),
    ("length_loop", b"hello", "fidgety"),
]


def worker(execs: int) -> dict:
    from rarebranch import JIT_ENABLED
    from rarebranch.fuzzer import FuzzConfig, Fuzzer

    # warm-up so compilation is not timed
    for target, seed, mode in CASES:
        Fuzzer(FuzzConfig(target=target, seeds=[seed], mode=mode, execs=2000)).run()
    results = []
    for target, seed, mode in CASES:
        f = Fuzzer(FuzzConfig(target=target, seeds=[seed], mode=mode, execs=execs, rng_seed=1))
        t0 = time.perf_counter()
        s = f.run()
        dt = time.perf_counter() - t0
        digest = hashlib.sha256(b"".join(e.input for e in f.executor.queue)).hexdigest()[:16]
        results.append({"target": target, "mode": mode, "execs": s.execs, "seconds": dt,
                        "execs_per_s": s.execs / dt, "queue": s.queue_len, "digest": digest})
    return {"jit": JIT_ENABLED, "results": results}


def spawn(disable_jit: bool, execs: int) -> dict:
    env = dict(os.environ)
    env.pop("RAREBRANCH_DISABLE_JIT", None)
    if disable_jit:
        env["RAREBRANCH_DISABLE_JIT"] = "1"
    p = subprocess.run([sys.executable, __file__, "--worker", "--execs", str(execs)], env=env,
                       capture_output=True, text=True, check=True)
    return json.loads(p.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--execs", type=int, default=20_000)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(args.execs)))
        return 0

    jit = spawn(False, args.execs)
    py = spawn(True, args.execs)
    print(f"{'target':<16}{'mode':<10}{'jit exec/s':>12}{'python exec/s':>15}{'speedup':>9}  same queue")
    same_all = True
    for a, b in zip(jit["results"], py["results"]):
        same = a["digest"] == b["digest"] and a["queue"] == b["queue"]
        same_all &= same
        print(f"{a['target']:<16}{a['mode']:<10}{a['execs_per_s']:>12.0f}{b['execs_per_s']:>15.0f}"
              f"{a['execs_per_s'] / b['execs_per_s']:>8.1f}x  {same}")
    if not jit["jit"]:
        print("warning: numba unavailable, both runs used the fallback")
    return 0 if same_all else 1


if __name__ == "__main__":
    sys.exit(main())
