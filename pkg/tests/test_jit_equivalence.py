"""The numba kernels and their pure-Python fallback produce identical campaigns."""

from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from rarebranch import JIT_ENABLED

SCRIPT = r"""
import hashlib, json, sys
from rarebranch import JIT_ENABLED
from rarebranch.fuzzer import FuzzConfig, Fuzzer
out = {"jit": JIT_ENABLED, "runs": []}
for target, seed, mode in json.loads(sys.argv[1]):
    f = Fuzzer(FuzzConfig(target=target, seeds=[seed.encode()], mode=mode, execs=int(sys.argv[2]), rng_seed=3,
                          shadow=mode == "fairfuzz"))
    s = f.run()
    digest = hashlib.sha256(b"".join(e.input for e in f.executor.queue)).hexdigest()
    out["runs"].append([s.execs, s.queue_len, s.branches, f.executor.coverage.pair_count, digest,
                        [list(r.row()) for r in f.shadow_stats]])
print(json.dumps(out))
"""

CASES = [
    ("nested_keyword", "<!ATTLIST doc type CDATA #IMPLIED>", "fairfuzz"),
    ("magic_bytes", "BAD?xxxx", "afl"),
    ("length_loop", "hello", "fidgety"),
]


def campaign(disable_jit: bool, execs: int):
    env = dict(os.environ)
    env.pop("RAREBRANCH_DISABLE_JIT", None)
    if disable_jit:
        env["RAREBRANCH_DISABLE_JIT"] = "1"
    p = subprocess.run([sys.executable, "-c", SCRIPT, json.dumps(CASES), str(execs)], env=env,
                       capture_output=True, text=True, check=True)
    return json.loads(p.stdout.strip().splitlines()[-1])


@pytest.mark.skipif(not JIT_ENABLED, reason="numba unavailable")
def test_fallback_matches_jit():
    jit = campaign(False, 6000)
    py = campaign(True, 6000)
    assert jit["jit"] is True and py["jit"] is False
    assert jit["runs"] == py["runs"]
