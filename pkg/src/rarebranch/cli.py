"""Command-line entry point: ``rarebranch fuzz --target NAME --seed-dir DIR --out DIR ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .fuzzer import DET_CHOICES, MODES, TRIM_CHOICES, ConfigError, FuzzConfig, Fuzzer, ShadowStats, Snapshot
from .mutators import MAX_INPUT_LEN
from .executor import DEFAULT_BUDGET
from .targets import TARGETS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

PLOT_HEADER = ("execs", "seconds", "cycles", "queue_len", "branches", "rarity_cutoff", "excluded", "crashes")
SHADOW_HEADER = ("seed_id", "target_branch", "det_mask_pct", "det_plain_pct", "havoc_mask_pct", "havoc_plain_pct")

log = logging.getLogger("rarebranch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rarebranch", description="Coverage-guided fuzzing with rare-branch targeting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuzz", help="run a fuzzing campaign against a bundled target")
    p.add_argument("--target", required=True, choices=sorted(TARGETS))
    p.add_argument("--mode", choices=MODES, default="fairfuzz")
    p.add_argument("--trim", choices=TRIM_CHOICES, help="default depends on --mode")
    p.add_argument("--det", choices=DET_CHOICES, help="default depends on --mode")
    p.add_argument("--shadow", action="store_true", help="pair every masked stage with an unmasked side-effect-free run")
    p.add_argument("--seed-dir", type=Path, help="directory of seed files")
    p.add_argument("--seed-file", type=Path, action="append", default=[], help="seed file (repeatable)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--execs", type=_positive_int, help="execution budget")
    p.add_argument("--seconds", type=_positive_float, help="wall-clock budget")
    p.add_argument("--cycles", type=_positive_int, help="stop after this many queue cycles")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--snapshot-every", type=_positive_int, default=100_000, help="executions between plot rows")
    p.add_argument("--max-len", type=_positive_int, default=MAX_INPUT_LEN)
    p.add_argument("--exec-budget", type=_positive_int, default=DEFAULT_BUDGET, help="cover calls per execution")
    p.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("targets", help="list the bundled targets")
    return parser


def load_seeds(seed_dir: Optional[Path], seed_files: Sequence[Path]) -> List[bytes]:
    paths: List[Path] = []
    if seed_dir is not None:
        if not seed_dir.is_dir():
            raise UsageError(f"rarebranch: error: seed directory {seed_dir} does not exist")
        paths.extend(sorted(p for p in seed_dir.iterdir() if p.is_file()))
    paths.extend(seed_files)
    seeds = [p.read_bytes() for p in paths]
    seeds = [s for s in seeds if s]
    if not seeds:
        raise UsageError("rarebranch: error: no non-empty seed inputs found")
    return seeds


def parse_config(argv: Sequence[str]) -> FuzzConfig:
    """Validated configuration of a ``fuzz`` invocation; raises UsageError."""
    args = build_parser().parse_args(list(argv))
    if args.command != "fuzz":
        raise UsageError("parse_config expects the fuzz subcommand")
    if args.seed_dir is None and not args.seed_file:
        raise UsageError("rarebranch: error: one of --seed-dir or --seed-file is required")
    seeds = load_seeds(args.seed_dir, args.seed_file)
    try:
        cfg = FuzzConfig(
            target=args.target, seeds=seeds, mode=args.mode, trim=args.trim, det=args.det,
            shadow=args.shadow, execs=args.execs, seconds=args.seconds, rng_seed=args.rng_seed,
            snapshot_every=args.snapshot_every, max_len=args.max_len, exec_budget=args.exec_budget,
            cycles=args.cycles,
        )
    except ConfigError as e:
        raise UsageError(f"rarebranch: error: {e}") from None
    return cfg


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


class OutputDir:
    """On-disk layout of a campaign: queue/, crashes/, plot_data.csv, shadow_stats.csv, stats.json."""

    def __init__(self, root: Path) -> None:
        self.root = root
        self.queue_dir = root / "queue"
        self.crash_dir = root / "crashes"
        if self.queue_dir.is_dir() and any(self.queue_dir.iterdir()):
            raise UsageError(f"rarebranch: error: {self.queue_dir} is not empty; choose a fresh --out directory")
        self.queue_dir.mkdir(parents=True, exist_ok=True)
        self.crash_dir.mkdir(parents=True, exist_ok=True)
        self._plot = open(root / "plot_data.csv", "w", newline="")
        self._plot_w = csv.writer(self._plot)
        self._plot_w.writerow(PLOT_HEADER)
        self._shadow = None
        self._shadow_w = None
        self._n_crashes = 0

    def attach(self, fuzzer: Fuzzer) -> None:
        ex = fuzzer.executor
        ex.on_queue.append(lambda e: self.write_entry(self.queue_dir, e.id, e.input))
        ex.on_crash.append(self.write_crash)
        fuzzer.on_trim.append(lambda e: self.write_entry(self.queue_dir, e.id, e.input))
        fuzzer.on_snapshot.append(self.write_snapshot)
        if fuzzer.config.shadow:
            self._shadow = open(self.root / "shadow_stats.csv", "w", newline="")
            self._shadow_w = csv.writer(self._shadow)
            self._shadow_w.writerow(SHADOW_HEADER)
            fuzzer.on_shadow.append(self.write_shadow)

    @staticmethod
    def write_entry(directory: Path, idx: int, data: bytes) -> None:
        (directory / f"id:{idx:06d}").write_bytes(data)

    def write_crash(self, entry) -> None:
        self.write_entry(self.crash_dir, self._n_crashes, entry.input)
        self._n_crashes += 1

    def write_snapshot(self, s: Snapshot) -> None:
        self._plot_w.writerow([s.execs, f"{s.seconds:.3f}", s.cycles, s.queue_len, s.branches,
                               "" if s.rarity_cutoff is None else s.rarity_cutoff, s.excluded, s.crashes])
        self._plot.flush()

    def write_shadow(self, s: ShadowStats) -> None:
        self._shadow_w.writerow([_fmt(v) for v in s.row()])
        self._shadow.flush()

    def finish(self, fuzzer: Fuzzer) -> None:
        self._plot.close()
        if self._shadow is not None:
            self._shadow.close()
        (self.root / "stats.json").write_text(json.dumps(fuzzer.summary(), indent=2, sort_keys=True) + "\n")


def cmd_fuzz(argv: Sequence[str]) -> int:
    cfg = parse_config(argv)
    out = build_parser().parse_args(list(argv)).out
    try:
        fuzzer = Fuzzer(cfg)
        od = OutputDir(out)
        od.attach(fuzzer)
        final = fuzzer.run()
        od.finish(fuzzer)
    except UsageError:
        raise
    except OSError as e:
        print(f"rarebranch: I/O error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"done: {final.execs} execs, {final.cycles} cycles, {final.queue_len} queued, "
          f"{final.branches} branches, {final.crashes} crashes ({fuzzer.stop_reason})")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "targets":
            for name in sorted(TARGETS):
                t = TARGETS[name]
                print(f"{name}: {t.description} [deepest: {t.deepest_label}, branch {t.deepest_branch}]")
            return EXIT_OK
        return cmd_fuzz(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.exception("fuzzing failed")
        print(f"rarebranch: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
