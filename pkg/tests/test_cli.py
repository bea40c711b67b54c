from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from rarebranch.cli import EXIT_OK, EXIT_USAGE, PLOT_HEADER, SHADOW_HEADER, main, parse_config
from rarebranch.coverage import GlobalCoverage, signature
from rarebranch.executor import Executor
from rarebranch.targets import get_target


@pytest.fixture
def seed_dir(tmp_path):
    d = tmp_path / "seeds"
    d.mkdir()
    (d / "a").write_bytes(b"<!ATTLIST")
    (d / "b").write_bytes(b"<!ATTLIST ID")
    (d / "c").write_bytes(b"zzz")
    (d / "empty").write_bytes(b"")
    return d


def test_parse_config_example(seed_dir, tmp_path):
    c = parse_config(["fuzz", "--target", "nested_keyword", "--mode", "afl", "--seed-dir", str(seed_dir),
                      "--out", str(tmp_path / "o"), "--execs", "1000", "--rng-seed", "7"])
    assert (c.target, c.mode, c.trim, c.det, c.execs, c.rng_seed) == ("nested_keyword", "afl", "path", "all", 1000, 7)
    # empty seed files are skipped
    assert sorted(c.seeds) == [b"<!ATTLIST", b"<!ATTLIST ID", b"zzz"]


@pytest.mark.parametrize(
    "extra",
    [
        ["--mode", "bogus"],
        ["--mode", "afl", "--shadow"],
        ["--execs", "0"],
        ["--frobnicate"],
        ["--target", "no_such_target"],
    ],
)
def test_usage_errors_exit_1(seed_dir, tmp_path, extra, capsys):
    argv = ["fuzz", "--target", "magic_bytes", "--seed-dir", str(seed_dir), "--out", str(tmp_path / "o"),
            "--execs", "100"] + extra
    assert main(argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err.lower()


def test_missing_required_inputs(tmp_path):
    out = str(tmp_path / "o")
    assert main(["fuzz", "--seed-file", "x", "--out", out, "--execs", "10"]) == EXIT_USAGE
    assert main(["fuzz", "--target", "magic_bytes", "--out", out, "--execs", "10"]) == EXIT_USAGE
    assert main(["fuzz", "--target", "magic_bytes", "--seed-dir", str(tmp_path / "nope"), "--out", out,
                 "--execs", "10"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def read_plot(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_shadow_campaign_layout(seed_dir, tmp_path):
    out = tmp_path / "run"
    rc = main(["fuzz", "--target", "nested_keyword", "--seed-dir", str(seed_dir), "--out", str(out),
               "--shadow", "--cycles", "1", "--snapshot-every", "5000"])
    assert rc == EXIT_OK
    header, rows = read_plot(out / "plot_data.csv")
    assert tuple(header) == PLOT_HEADER and len(rows) >= 2
    ex_col, br_col = header.index("execs"), header.index("branches")
    for a, b in zip(rows, rows[1:]):
        assert int(b[ex_col]) >= int(a[ex_col]) and int(b[br_col]) >= int(a[br_col])

    with open(out / "shadow_stats.csv", newline="") as fh:
        srows = list(csv.reader(fh))
    assert tuple(srows[0]) == SHADOW_HEADER
    stats = json.loads((out / "stats.json").read_text())
    assert stats["shadow"] is True and stats["stop_reason"] == "cycles"
    assert len(srows) - 1 == stats["selections"]

    files = sorted((out / "queue").iterdir())
    assert files[0].name == "id:000000"
    assert [f.name for f in files] == [f"id:{i:06d}" for i in range(len(files))]
    assert len(files) == stats["final"]["queue_len"]


def test_every_queue_file_adds_coverage(seed_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["fuzz", "--target", "nested_keyword", "--mode", "afl", "--seed-dir", str(seed_dir),
                 "--out", str(out), "--execs", "30000"]) == EXIT_OK
    ex = Executor(get_target("nested_keyword"))
    g = GlobalCoverage()
    for f in sorted((out / "queue").iterdir()):
        sig = signature(ex.execute(f.read_bytes()).map)
        # path trimming preserves signatures, so replay in id order adds new pairs every time
        assert g.observe(sig), f.name


def test_refuses_non_empty_queue(seed_dir, tmp_path):
    out = tmp_path / "run"
    (out / "queue").mkdir(parents=True)
    (out / "queue" / "id:000000").write_bytes(b"x")
    assert main(["fuzz", "--target", "magic_bytes", "--seed-dir", str(seed_dir), "--out", str(out),
                 "--execs", "100"]) == EXIT_USAGE


def test_crashes_persisted(tmp_path):
    seed = tmp_path / "s"
    seed.write_bytes(b"BAD!")
    out = tmp_path / "run"
    assert main(["fuzz", "--target", "magic_bytes", "--seed-file", str(seed), "--out", str(out),
                 "--execs", "500"]) == EXIT_OK
    assert (out / "crashes" / "id:000000").read_bytes() == b"BAD!"


def test_targets_subcommand_and_module_entry():
    p = subprocess.run([sys.executable, "-m", "rarebranch", "targets"], capture_output=True, text=True, check=True)
    assert "nested_keyword" in p.stdout and "length_loop" in p.stdout
