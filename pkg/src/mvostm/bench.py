"""Benchmark harness: configurable workloads over the transactional table.

Workers share one table and run fixed-length transactions of randomly
chosen operations (lookup/insert/delete per the mix) over uniform random
keys.  Reports carry throughput, abort counts and the live-version counter.
Runs are deterministic for a fixed seed at one thread.  A watchdog bounds
every run; a hung run is a failure, never a wait.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import statistics
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .core import HashTable, Status
from .history import History, HistoryRecorder, check_opacity
from .version_store import Policy

DEFAULT_WATCHDOG_SECS = 60.0

# Operation mixes (lookup%, insert%, delete%).
MIX_LOOKUP_HEAVY = (90, 8, 2)      # W1
MIX_UPDATE_HEAVY = (10, 45, 45)    # W2
MIX_BALANCED = (50, 25, 25)        # W3


class WatchdogTimeout(RuntimeError):
    """A worker failed to finish within the watchdog budget."""


@dataclass
class WorkloadSpec:
    mix: Tuple[int, int, int] = MIX_UPDATE_HEAVY
    threads: int = 8
    txns_per_thread: int = 100
    ops_per_txn: int = 10
    key_space: int = 1000
    buckets: int = 5
    policy: Policy = field(default_factory=Policy.unbounded)
    seed: int = 0
    record_history: bool = False
    history_cap: Optional[int] = 1_000_000
    retry: bool = False
    watchdog_secs: Optional[float] = None

    def validate(self) -> None:
        lookups, inserts, deletes = self.mix
        if lookups < 0 or inserts < 0 or deletes < 0 or lookups + inserts + deletes != 100:
            raise ValueError(f"mix must be three non-negative shares of 100, got {self.mix}")
        for name in ("threads", "txns_per_thread", "ops_per_txn", "key_space", "buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def preset(name: str) -> WorkloadSpec:
    """Named workload and contention presets."""
    name = name.upper()
    if name == "W1":
        return WorkloadSpec(mix=MIX_LOOKUP_HEAVY)
    if name == "W2":
        return WorkloadSpec(mix=MIX_UPDATE_HEAVY)
    if name == "W3":
        return WorkloadSpec(mix=MIX_BALANCED)
    if name == "C1":  # high contention: many transactions over few keys
        return WorkloadSpec(mix=MIX_UPDATE_HEAVY, txns_per_thread=100, key_space=50)
    if name == "C2":  # low contention: one transaction per thread, wide key range
        return WorkloadSpec(mix=MIX_UPDATE_HEAVY, txns_per_thread=1, key_space=1000)
    raise ValueError(f"unknown preset {name!r}")


@dataclass
class RunReport:
    policy: str
    threads: int
    mix: Tuple[int, int, int]
    committed: int
    aborted: int
    secs: float
    peak_versions: int
    final_versions: int
    history: Optional[History] = None

    @property
    def abort_rate(self) -> float:
        total = self.committed + self.aborted
        return self.aborted / total if total else 0.0

    @property
    def txns_per_sec(self) -> float:
        return self.committed / self.secs if self.secs > 0 else 0.0

    def to_row(self) -> Dict[str, object]:
        return {
            "policy": self.policy,
            "threads": self.threads,
            "mix": "/".join(str(m) for m in self.mix),
            "committed": self.committed,
            "aborted": self.aborted,
            "abort_rate": round(self.abort_rate, 6),
            "secs": round(self.secs, 6),
            "txns_per_sec": round(self.txns_per_sec, 2),
            "peak_versions": self.peak_versions,
            "final_versions": self.final_versions,
        }


REPORT_COLUMNS = ["policy", "threads", "mix", "committed", "aborted", "abort_rate",
                  "secs", "txns_per_sec", "peak_versions", "final_versions"]


def _txn_program(rng: random.Random, spec: WorkloadSpec) -> List[Tuple[str, int, int]]:
    lookups, inserts, _ = spec.mix
    ops = []
    for _ in range(spec.ops_per_txn):
        roll = rng.randrange(100)
        if roll < lookups:
            kind = "lookup"
        elif roll < lookups + inserts:
            kind = "insert"
        else:
            kind = "delete"
        key = rng.randrange(1, spec.key_space + 1)
        value = rng.randrange(1, 2**32)
        ops.append((kind, key, value))
    return ops


def _worker(table: HashTable, spec: WorkloadSpec, thread_idx: int,
            out: List[Optional[Tuple[int, int]]], failures: List[BaseException]) -> None:
    rng = random.Random((spec.seed, thread_idx))
    committed = aborted = 0
    try:
        for _ in range(spec.txns_per_thread):
            program = _txn_program(rng, spec)
            while True:
                txn = table.begin()
                doomed = False
                for kind, key, value in program:
                    if kind == "insert":
                        table.insert(txn, key, value)
                    elif kind == "lookup":
                        _, status = table.lookup(txn, key)
                        if status is Status.ABORT:
                            doomed = True
                            break
                    else:
                        _, status = table.delete(txn, key)
                        if status is Status.ABORT:
                            doomed = True
                            break
                if not doomed:
                    doomed = table.try_commit(txn) is Status.ABORT
                if doomed:
                    aborted += 1
                    if spec.retry:
                        continue
                else:
                    committed += 1
                break
        out[thread_idx] = (committed, aborted)
    except BaseException as exc:  # surface worker crashes to the harness
        failures.append(exc)
        out[thread_idx] = (committed, aborted)
        raise


def run(spec: WorkloadSpec) -> RunReport:
    spec.validate()
    recorder = HistoryRecorder(cap=spec.history_cap) if spec.record_history else None
    table = HashTable(buckets=spec.buckets, policy=spec.policy, recorder=recorder)
    out: List[Optional[Tuple[int, int]]] = [None] * spec.threads
    failures: List[BaseException] = []
    workers = [threading.Thread(target=_worker, args=(table, spec, i, out, failures),
                                daemon=True)
               for i in range(spec.threads)]
    budget = spec.watchdog_secs
    if budget is None:
        budget = float(os.environ.get("MVOSTM_WATCHDOG_SECS", DEFAULT_WATCHDOG_SECS))
    start = time.perf_counter()
    for worker in workers:
        worker.start()
    deadline = start + budget
    stragglers = False
    for worker in workers:
        worker.join(max(0.0, deadline - time.perf_counter()))
        stragglers = stragglers or worker.is_alive()
    secs = time.perf_counter() - start
    if failures:
        raise failures[0]
    if stragglers:
        raise WatchdogTimeout(f"worker still running after {budget:.0f}s")
    committed = sum(c for c, _ in out)   # type: ignore[misc]
    aborted = sum(a for _, a in out)     # type: ignore[misc]
    return RunReport(policy=spec.policy.label(), threads=spec.threads, mix=spec.mix,
                     committed=committed, aborted=aborted, secs=secs,
                     peak_versions=table.version_counter.peak,
                     final_versions=table.version_counter.value,
                     history=recorder.history() if recorder else None)


def sweep_k(spec: WorkloadSpec, k_values: Sequence[Optional[int]]) -> List[RunReport]:
    """One run per version bound, same seed; ``None`` means unbounded."""
    if not k_values:
        raise ValueError("k_values must be non-empty")
    reports = []
    for k in k_values:
        policy = Policy.unbounded() if k is None else Policy.k_bounded(k)
        reports.append(run(replace(spec, policy=policy)))
    return reports


def report(reports: Sequence[RunReport], fmt: str = "csv",
           aggregate: bool = False) -> bytes:
    """Render reports with a stable column order; optionally append a
    mean +/- stdev aggregation row over the numeric columns."""
    if not reports:
        raise ValueError("need at least one report")
    rows = [r.to_row() for r in reports]
    if aggregate:
        rows.append(aggregate_row(reports))
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue().encode()
    if fmt == "json":
        return json.dumps(rows, indent=2).encode()
    raise ValueError(f"unknown format {fmt!r}")


def aggregate_row(reports: Sequence[RunReport]) -> Dict[str, object]:
    rows = [r.to_row() for r in reports]
    agg: Dict[str, object] = {}
    for col in REPORT_COLUMNS:
        values = [row[col] for row in rows]
        if all(isinstance(v, (int, float)) for v in values):
            mean = statistics.fmean(values)
            stdev = statistics.pstdev(values) if len(values) > 1 else 0.0
            agg[col] = f"{mean:.2f}±{stdev:.2f}"
        else:
            agg[col] = values[0] if len(set(map(str, values))) == 1 else "mixed"
    return agg


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _parse_mix(text: str) -> Tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("mix must be lookup,insert,delete")
    return parts[0], parts[1], parts[2]


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mvostm-bench",
        description="Benchmark the multi-version transactional hash table.")
    parser.add_argument("--preset", choices=["W1", "W2", "W3", "C1", "C2"],
                        help="start from a named workload/contention preset")
    parser.add_argument("--mix", type=_parse_mix, help="lookup,insert,delete percentages")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--txns", type=int, help="transactions per thread")
    parser.add_argument("--ops", type=int, help="operations per transaction")
    parser.add_argument("--keys", type=int, help="key space size")
    parser.add_argument("--buckets", type=int)
    parser.add_argument("--policy", type=Policy.parse, default=None,
                        help="unbounded | gc | k:<N>")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", type=int, default=1,
                        help="run this many consecutive seeds and aggregate")
    parser.add_argument("--retry", action="store_true",
                        help="retry aborted transactions until they commit")
    parser.add_argument("--record", action="store_true",
                        help="capture a history and check it for opacity")
    parser.add_argument("--history-out", metavar="FILE",
                        help="write the captured history to FILE")
    parser.add_argument("--sweep-k", metavar="K1,K2,...",
                        help="run once per version bound (inf for unbounded)")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    args = parser.parse_args(argv)

    spec = preset(args.preset) if args.preset else WorkloadSpec()
    overrides = {}
    if args.mix is not None:
        overrides["mix"] = args.mix
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.txns is not None:
        overrides["txns_per_thread"] = args.txns
    if args.ops is not None:
        overrides["ops_per_txn"] = args.ops
    if args.keys is not None:
        overrides["key_space"] = args.keys
    if args.buckets is not None:
        overrides["buckets"] = args.buckets
    if args.policy is not None:
        overrides["policy"] = args.policy
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.retry:
        overrides["retry"] = True
    if args.record:
        overrides["record_history"] = True
    spec = replace(spec, **overrides)

    try:
        if args.sweep_k:
            k_values = [None if v in ("inf", "unbounded") else int(v)
                        for v in args.sweep_k.split(",")]
            reports = sweep_k(spec, k_values)
        else:
            reports = [run(replace(spec, seed=spec.seed + i)) for i in range(args.seeds)]
    except WatchdogTimeout as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    sys.stdout.write(report(reports, fmt=args.format, aggregate=len(reports) > 1).decode())

    failures = 0
    for run_report in reports:
        if run_report.history is None:
            continue
        if args.history_out:
            run_report.history.save(args.history_out)
        result = check_opacity(run_report.history)
        print(f"opacity: {result.verdict.value}", file=sys.stderr)
        if not result.is_opaque():
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
