"""History recording and the opacity oracle.

Events are captured at each method's linearization point (the first lock
release for lock-protected methods, the invocation otherwise) and analysed
offline: build the opacity graph of the completed history under the
timestamp version order, decide acyclicity, emit a witness serial order,
and verify the witness is legal.

Graph construction, for a history ``H`` and per-key version order ``<<``:

* rt edges    -- ``Ti`` terminated before ``Tj`` began.
* rvf edges   -- ``Tj`` returned a value from a version created by a
                 committed ``Ti`` in ``H``.
* mv edges    -- for a committed writer ``Ti`` of the version ``Tj`` read,
                 and any other committed writer ``Tk`` of the same key with
                 a different value: ``Tj -> Tk`` when ``Ti``'s version
                 precedes ``Tk``'s, else ``Tk -> Ti``.

Reads of the synthetic initial version (timestamp 0) reference no
transaction of the history and therefore induce no edges.
"""

from __future__ import annotations

import argparse
import bisect
import enum
import heapq
import sys
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple


class Method(enum.Enum):
    BEGIN = "BEGIN"
    LOOKUP = "LOOKUP"
    DELETE = "DELETE"
    INSERT_EFFECT = "INSERT_EFFECT"
    TRYC = "TRYC"


@dataclass(slots=True)
class Event:
    seq: int
    txn: int
    method: Method
    key: Optional[int] = None
    value: Optional[int] = None
    status: Optional[str] = None
    version_read_ts: Optional[int] = None

    def is_read(self) -> bool:
        return self.method in (Method.LOOKUP, Method.DELETE)

    def to_line(self) -> str:
        def fmt(x):
            return "-" if x is None else str(x)
        return "\t".join([str(self.seq), str(self.txn), self.method.value,
                          fmt(self.key), fmt(self.value), fmt(self.status),
                          fmt(self.version_read_ts)])

    @staticmethod
    def from_line(line: str) -> "Event":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 7:
            raise ValueError(f"malformed history line: {line!r}")
        seq, txn, method, key, value, status, vrt = parts
        def num(x):
            return None if x == "-" else int(x)
        return Event(int(seq), int(txn), Method(method), num(key), num(value),
                     None if status == "-" else status, num(vrt))


class History:
    """An immutable snapshot of recorded events, ordered by sequence number."""

    def __init__(self, events: Iterable[Event]):
        self.events: List[Event] = sorted(events, key=lambda e: e.seq)

    def __len__(self) -> int:
        return len(self.events)

    def transactions(self) -> List[int]:
        return sorted({e.txn for e in self.events})

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            for event in self.events:
                fh.write(event.to_line() + "\n")

    @staticmethod
    def load(path: str) -> "History":
        with open(path) as fh:
            return History(Event.from_line(line) for line in fh if line.strip())


class HistoryRecorder:
    """Append-only event log shared by all threads of a table.

    The single sequencer lock both orders events and hands out transaction
    timestamps (so begin order and timestamp order agree in the log).  When
    ``cap`` is hit further events are dropped and ``truncated`` set.
    """

    def __init__(self, cap: Optional[int] = None):
        self._lock = threading.Lock()
        self._events: List[Event] = []
        self._cap = cap
        self.truncated = False

    def record(self, txn: int, method: Method, key: Optional[int] = None,
               value: Optional[int] = None, status: Optional[str] = None,
               version_read_ts: Optional[int] = None) -> None:
        with self._lock:
            if self._cap is not None and len(self._events) >= self._cap:
                self.truncated = True
                return
            self._events.append(Event(len(self._events), txn, method, key,
                                      value, status, version_read_ts))

    def record_begin(self, counter) -> int:
        """Atomically draw a timestamp and log the BEGIN event."""
        with self._lock:
            ts = counter.fetch_increment()
            if self._cap is not None and len(self._events) >= self._cap:
                self.truncated = True
            else:
                self._events.append(Event(len(self._events), ts, Method.BEGIN))
            return ts

    def history(self) -> History:
        with self._lock:
            return History(list(self._events))


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

OK_STATUSES = ("OK", "FAIL")


@dataclass
class _TxnView:
    ts: int
    begin_seq: int
    term_seq: Optional[int] = None
    committed: bool = False
    events: List[Event] = field(default_factory=list)
    # key -> (is_insert, value): the final pending update per key
    final_updates: Dict[int, Tuple[bool, Optional[int]]] = field(default_factory=dict)


def _complete(history: History) -> History:
    """Append an aborting termination for every still-live transaction."""
    terminated = {e.txn for e in history.events if e.method is Method.TRYC}
    events = list(history.events)
    next_seq = (events[-1].seq + 1) if events else 0
    for ts in sorted({e.txn for e in events} - terminated):
        events.append(Event(next_seq, ts, Method.TRYC, status="ABORT"))
        next_seq += 1
    return History(events)


def _views(history: History) -> Dict[int, _TxnView]:
    views: Dict[int, _TxnView] = {}
    for event in history.events:
        view = views.get(event.txn)
        if view is None:
            view = views[event.txn] = _TxnView(event.txn, begin_seq=event.seq)
        view.events.append(event)
        if event.method is Method.TRYC and view.term_seq is None:
            view.term_seq = event.seq
            view.committed = event.status == "COMMIT"
        elif event.method is Method.INSERT_EFFECT:
            view.final_updates[event.key] = (True, event.value)
        elif event.method is Method.DELETE:
            view.final_updates[event.key] = (False, None)
    return views


def _committed_writers(views: Dict[int, _TxnView]) -> Dict[int, Dict[int, Optional[int]]]:
    """key -> {writer ts -> version value} over committed transactions."""
    writers: Dict[int, Dict[int, Optional[int]]] = {}
    for view in views.values():
        if not view.committed:
            continue
        for key, (is_insert, value) in view.final_updates.items():
            writers.setdefault(key, {})[view.ts] = value if is_insert else None
    return writers


def ts_version_order(history: History) -> Dict[int, List[int]]:
    """Per key, version creators ordered by ascending timestamp."""
    views = _views(_complete(history))
    writers = _committed_writers(views)
    return {key: sorted(by_ts) for key, by_ts in writers.items()}


def check_validity(history: History) -> List[str]:
    """Report reads that name no committed update of their key.

    A read attributed to timestamp 0 references the synthetic initial
    version and is always valid.
    """
    views = _views(_complete(history))
    writers = _committed_writers(views)
    problems = []
    for view in views.values():
        for event in view.events:
            if not event.is_read() or event.version_read_ts is None:
                continue
            if event.status not in OK_STATUSES:
                continue
            vrt = event.version_read_ts
            if vrt == 0:
                if event.value is not None:
                    problems.append(f"seq {event.seq}: read of initial version returned {event.value}")
                continue
            writer = views.get(vrt)
            if writer is None or not writer.committed or event.key not in writer.final_updates:
                problems.append(f"seq {event.seq}: txn {event.txn} reads key {event.key} "
                                f"from {vrt}, which committed no such update")
                continue
            if writer.term_seq is None or writer.term_seq > event.seq:
                problems.append(f"seq {event.seq}: txn {event.txn} reads key {event.key} "
                                f"from {vrt} before it committed")
                continue
            expected = writers[event.key][vrt]
            if expected != event.value:
                problems.append(f"seq {event.seq}: txn {event.txn} read {event.value} from "
                                f"{vrt} on key {event.key}, which wrote {expected}")
    return problems


class OpacityGraph:
    """Typed edge sets over the transactions of a completed history."""

    def __init__(self, vertices: Set[int]):
        self.vertices = vertices
        self.rt: Set[Tuple[int, int]] = set()
        self.rvf: Set[Tuple[int, int]] = set()
        self.mv: Set[Tuple[int, int]] = set()

    def edges(self) -> Set[Tuple[int, int]]:
        return self.rt | self.rvf | self.mv

    def adjacency(self) -> Dict[int, Set[int]]:
        adj: Dict[int, Set[int]] = {v: set() for v in self.vertices}
        for src, dst in self.edges():
            adj[src].add(dst)
        return adj

    def find_cycle(self) -> Optional[List[int]]:
        adj = self.adjacency()
        WHITE, GREY, BLACK = 0, 1, 2
        colour = {v: WHITE for v in self.vertices}
        parent: Dict[int, int] = {}
        for root in sorted(self.vertices):
            if colour[root] != WHITE:
                continue
            stack = [(root, iter(sorted(adj[root])))]
            colour[root] = GREY
            while stack:
                node, it = stack[-1]
                advanced = False
                for nxt in it:
                    if colour[nxt] == WHITE:
                        colour[nxt] = GREY
                        parent[nxt] = node
                        stack.append((nxt, iter(sorted(adj[nxt]))))
                        advanced = True
                        break
                    if colour[nxt] == GREY:
                        cycle = [nxt, node]
                        cur = node
                        while cur != nxt:
                            cur = parent[cur]
                            cycle.append(cur)
                        cycle.reverse()
                        return cycle
                if not advanced:
                    colour[node] = BLACK
                    stack.pop()
        return None

    def topological_order(self) -> List[int]:
        """Kahn's algorithm, breaking ties toward smaller timestamps."""
        adj = self.adjacency()
        indeg = {v: 0 for v in self.vertices}
        for _, dst in self.edges():
            indeg[dst] += 1
        ready = [v for v, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            node = heapq.heappop(ready)
            order.append(node)
            for nxt in adj[node]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(ready, nxt)
        if len(order) != len(self.vertices):
            raise ValueError("graph is cyclic")
        return order


def build_opg(history: History,
              version_order: Optional[Dict[int, List[int]]] = None) -> OpacityGraph:
    """The opacity graph of the completed history under a version order."""
    completed = _complete(history)
    views = _views(completed)
    writers = _committed_writers(views)
    if version_order is None:
        version_order = {key: sorted(by_ts) for key, by_ts in writers.items()}
    graph = OpacityGraph(set(views))

    # rt: termination before begin.
    terms = sorted((v.term_seq, v.ts) for v in views.values() if v.term_seq is not None)
    term_seqs = [seq for seq, _ in terms]
    for later in views.values():
        cutoff = bisect.bisect_left(term_seqs, later.begin_seq)
        for k in range(cutoff):
            ts = terms[k][1]
            if ts != later.ts:
                graph.rt.add((ts, later.ts))

    # rvf and mv: one pass over shared reads.
    positions_by_key = {key: {ts: i for i, ts in enumerate(chain)}
                        for key, chain in version_order.items()}
    for view in views.values():
        for event in view.events:
            if not event.is_read() or event.version_read_ts is None:
                continue
            if event.status not in OK_STATUSES:
                continue
            vrt = event.version_read_ts
            if vrt == 0 or vrt == view.ts:
                continue
            graph.rvf.add((vrt, view.ts))
            positions = positions_by_key.get(event.key, {})
            if vrt not in positions:
                continue
            read_value = event.value
            for other, other_value in writers.get(event.key, {}).items():
                if other in (vrt, view.ts) or other not in positions:
                    continue
                if other_value == read_value:
                    continue
                if positions[vrt] < positions[other]:
                    graph.mv.add((view.ts, other))
                else:
                    graph.mv.add((other, vrt))
    return graph


def check_legal_serial(history: History) -> bool:
    """Replay a serial (transaction-by-transaction) history against the rules.

    A return-value method must reflect its own transaction's log when it has
    one (insert -> that value; lookup -> the cached result; delete -> null),
    and otherwise the shared state: a read returning a value requires the
    key's latest committed update to be an insert of exactly that value.  A
    null return always has a committed delete to draw on (every key starts
    deleted), so it constrains nothing across transactions.
    """
    committed: Dict[int, Tuple[bool, Optional[int]]] = {}
    for view in _views(_complete(history)).values():
        log: Dict[int, Tuple[str, Optional[int], Optional[str]]] = {}
        for event in view.events:
            if event.method is Method.INSERT_EFFECT:
                log[event.key] = ("INSERT", event.value, "OK")
            elif event.method is Method.LOOKUP:
                if event.status == "ABORT":
                    continue
                if event.key in log:
                    opn, val, status = log[event.key]
                    expect = (None, "FAIL") if opn == "DELETE" else (val, status)
                else:
                    is_insert, val = committed.get(event.key, (False, None))
                    expect = (val, "OK") if is_insert else (None, "FAIL")
                    if event.value is None and event.status == "FAIL":
                        expect = (None, "FAIL")  # null reads are never stale
                if (event.value, event.status) != expect:
                    return False
                log[event.key] = ("LOOKUP", event.value, event.status)
            elif event.method is Method.DELETE:
                if event.status == "ABORT":
                    continue
                if event.key in log:
                    opn, val, status = log[event.key]
                    if opn == "INSERT":
                        expect = (val, "OK")
                    elif opn == "DELETE":
                        expect = (None, "FAIL")
                    else:
                        expect = (val, status)
                else:
                    is_insert, val = committed.get(event.key, (False, None))
                    expect = (val, "OK") if is_insert else (None, "FAIL")
                    if event.value is None and event.status == "FAIL":
                        expect = (None, "FAIL")
                if (event.value, event.status) != expect:
                    return False
                log[event.key] = ("DELETE", None, event.status)
        if view.committed:
            for key, (is_insert, value) in view.final_updates.items():
                committed[key] = (is_insert, value)
    return True


class Verdict(enum.Enum):
    OPAQUE = "OPAQUE"
    NOT_OPAQUE = "NOT_OPAQUE"
    INVALID = "INVALID"


@dataclass
class OpacityResult:
    verdict: Verdict
    witness: Optional[List[int]] = None
    cycle: Optional[List[int]] = None
    problems: List[str] = field(default_factory=list)

    def is_opaque(self) -> bool:
        return self.verdict is Verdict.OPAQUE


def serialize(history: History, order: List[int]) -> History:
    """Reorder a history transaction-by-transaction along ``order``."""
    completed = _complete(history)
    rank = {ts: i for i, ts in enumerate(order)}
    events = sorted(completed.events, key=lambda e: (rank[e.txn], e.seq))
    return History(Event(i, e.txn, e.method, e.key, e.value, e.status,
                         e.version_read_ts) for i, e in enumerate(events))


def _respects_real_time(history: History, order: List[int]) -> bool:
    views = _views(_complete(history))
    rank = {ts: i for i, ts in enumerate(order)}
    for earlier in views.values():
        for later in views.values():
            if earlier.ts != later.ts and earlier.term_seq is not None \
                    and earlier.term_seq < later.begin_seq \
                    and rank[earlier.ts] > rank[later.ts]:
                return False
    return True


def check_opacity(history: History) -> OpacityResult:
    """Decide opacity of a recorded history under the timestamp version order.

    Returns OPAQUE with an equivalent legal serial order (a topological sort
    of the opacity graph), NOT_OPAQUE with a witnessing cycle or the failed
    legality, or INVALID when some read names no committed update.
    """
    completed = _complete(history)
    if not completed.events:
        return OpacityResult(Verdict.OPAQUE, witness=[])
    problems = check_validity(completed)
    if problems:
        return OpacityResult(Verdict.INVALID, problems=problems)
    graph = build_opg(completed)
    cycle = graph.find_cycle()
    if cycle is not None:
        return OpacityResult(Verdict.NOT_OPAQUE, cycle=cycle)
    order = graph.topological_order()
    witness = serialize(completed, order)
    if not _respects_real_time(completed, order):
        raise AssertionError("topological order broke the real-time order")
    if not check_legal_serial(witness):
        # Acyclic yet no ordering can be legal: an intra-transaction
        # inconsistency (the serial order cannot repair a transaction's
        # own log).
        return OpacityResult(Verdict.NOT_OPAQUE,
                             problems=["witness serialization is not legal"])
    return OpacityResult(Verdict.OPAQUE, witness=order)


def assert_edges_timestamp_ordered(history: History,
                                   graph: Optional[OpacityGraph] = None) -> OpacityGraph:
    """Every edge of the opacity graph must go from smaller to larger ts."""
    if graph is None:
        graph = build_opg(history)
    for src, dst in graph.edges():
        if src >= dst:
            raise AssertionError(f"edge {src} -> {dst} violates timestamp order")
    return graph


# ---------------------------------------------------------------------------
# CLI: opg-check <history-file>
# ---------------------------------------------------------------------------

def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="opg-check",
        description="Check a recorded transaction history for opacity.")
    parser.add_argument("history_file", help="tab-separated event log")
    args = parser.parse_args(argv)
    result = check_opacity(History.load(args.history_file))
    if result.is_opaque():
        print("OPAQUE")
        print("witness: " + " ".join(f"T{ts}" for ts in result.witness))
        return 0
    if result.verdict is Verdict.INVALID:
        print("INVALID")
        for problem in result.problems:
            print("  " + problem)
        return 1
    print("NOT_OPAQUE")
    if result.cycle:
        print("cycle: " + " -> ".join(f"T{ts}" for ts in result.cycle))
    for problem in result.problems:
        print("  " + problem)
    return 1


if __name__ == "__main__":
    sys.exit(main())
