"""Transaction lifecycle and the timestamp-ordered optimistic commit protocol.

A transaction buffers every operation in a local log.  Inserts touch no
shared state until commit.  Lookups and deletes (the return-value methods)
read shared state at most once per key: they search the bucket lock-free,
lock and validate the window, pick the version with the largest timestamp
below their own, register themselves as its reader, and release.

Commit works in two phases over the update records sorted by key.  Phase
one re-locates and locks every update window (locks are kept), then checks
that no younger transaction already read the version this one would
supersede; any conflict aborts.  Phase two applies the updates --
repairing each window against the previous update of the same transaction
-- creates the new versions, and releases every lock in increasing key
order.  Lock acquisition follows the global key order throughout, which
rules out deadlock.
"""

from __future__ import annotations

import enum
import threading
from typing import Dict, Iterator, List, Optional, Tuple

from . import variants as variants_mod
from .history import HistoryRecorder, Method
from .rbl_list import (KEY_MAX, KEY_MIN, InsertMode, Node, RedBlueList,
                       SearchWindow, lock_window, rv_validate, unlock_window)
from .variants import LiveList
from .version_store import Policy, PolicyKind, VersionCounter, VersionList


class Status(enum.IntEnum):
    """Method outcome: FAIL means the key was absent, ABORT kills the txn."""

    ABORT = 0
    OK = 1
    FAIL = 2
    COMMIT = 3


class TxnStatus(enum.Enum):
    LIVE = "live"
    COMMITTED = "committed"
    ABORTED = "aborted"


class OpName(enum.Enum):
    INSERT = "insert"
    DELETE = "delete"
    LOOKUP = "lookup"


class InactiveTransactionError(RuntimeError):
    """A method was invoked on a committed or aborted transaction."""


class AtomicCounter:
    def __init__(self, initial: int = 1):
        self._lock = threading.Lock()
        self._value = initial

    def fetch_increment(self) -> int:
        with self._lock:
            value = self._value
            self._value += 1
            return value

    def peek(self) -> int:
        return self._value


class LogRecord:
    """Per-key local-log entry; ``window`` is cached during commit."""

    __slots__ = ("key", "opn", "value", "op_status", "window")

    def __init__(self, key: int, opn: OpName, value: Optional[int], op_status: Status):
        self.key = key
        self.opn = opn
        self.value = value
        self.op_status = op_status
        self.window: Optional[SearchWindow] = None


class TxnHandle:
    """Transaction identity: unique timestamp, status, and local log.

    A handle may move between threads but must never be used from two
    threads at once.
    """

    __slots__ = ("ts", "status", "log")

    def __init__(self, ts: int):
        self.ts = ts
        self.status = TxnStatus.LIVE
        self.log: Dict[int, LogRecord] = {}

    def __repr__(self):
        return f"TxnHandle(ts={self.ts}, status={self.status.value})"


class HashTable:
    """A transactional hash table of B buckets, each a red-blue lazy list.

    Keys map statically to buckets (key mod B).  The retention policy and
    the optional history recorder are fixed at construction.
    """

    def __init__(self, buckets: int = 5, policy: Policy = Policy.unbounded(),
                 recorder: Optional[HistoryRecorder] = None):
        if buckets < 1:
            raise ValueError("need at least one bucket")
        self.policy = policy
        self.recorder = recorder
        self.version_counter = VersionCounter()
        self.altl: Optional[LiveList] = LiveList() if policy.kind is PolicyKind.GC else None
        self._counter = AtomicCounter(1)

        gc_hook = None
        if self.altl is not None:
            altl = self.altl

            def gc_hook(vl: VersionList, creator_ts: int) -> None:
                variants_mod.gc_on_version_create(vl, creator_ts, altl)

        counter = self.version_counter

        def vl_factory() -> VersionList:
            return VersionList(policy, counter, gc_hook)

        self._buckets = [RedBlueList(vl_factory) for _ in range(buckets)]

    # -- lifecycle -----------------------------------------------------------

    def begin(self) -> TxnHandle:
        if self.recorder is not None:
            ts = self.recorder.record_begin(self._counter)
        else:
            ts = self._counter.fetch_increment()
        if self.altl is not None:
            self.altl.register(ts)
        return TxnHandle(ts)

    def insert(self, txn: TxnHandle, key: int, value: int) -> Status:
        """Buffer an insert; the shared table is untouched until commit."""
        self._require_live(txn)
        self._check_key(key)
        if value is None:
            raise ValueError("insert value must be non-null")
        rec = txn.log.get(key)
        if rec is None:
            txn.log[key] = LogRecord(key, OpName.INSERT, value, Status.OK)
        else:
            rec.opn = OpName.INSERT
            rec.value = value
            rec.op_status = Status.OK
        if self.recorder is not None:
            self.recorder.record(txn.ts, Method.INSERT_EFFECT, key=key,
                                 value=value, status="OK")
        return Status.OK

    def lookup(self, txn: TxnHandle, key: int) -> Tuple[Optional[int], Status]:
        self._require_live(txn)
        self._check_key(key)
        rec = txn.log.get(key)
        if rec is not None:
            if rec.opn is OpName.DELETE:
                value, status = None, Status.FAIL
            else:
                value, status = rec.value, rec.op_status
            if self.recorder is not None:
                self.recorder.record(txn.ts, Method.LOOKUP, key=key, value=value,
                                     status=status.name)
            return value, status
        value, status = self._read_shared(txn, key, Method.LOOKUP)
        if status is not Status.ABORT:
            txn.log[key] = LogRecord(key, OpName.LOOKUP, value, status)
        return value, status

    def delete(self, txn: TxnHandle, key: int) -> Tuple[Optional[int], Status]:
        """Return the key's current value like a lookup, then buffer a delete."""
        self._require_live(txn)
        self._check_key(key)
        rec = txn.log.get(key)
        if rec is not None:
            if rec.opn is OpName.INSERT:
                value, status = rec.value, Status.OK
            elif rec.opn is OpName.DELETE:
                value, status = None, Status.FAIL
            else:
                value, status = rec.value, rec.op_status
            rec.opn = OpName.DELETE
            rec.value = None
            rec.op_status = status
            if self.recorder is not None:
                self.recorder.record(txn.ts, Method.DELETE, key=key, value=value,
                                     status=status.name)
            return value, status
        value, status = self._read_shared(txn, key, Method.DELETE)
        if status is not Status.ABORT:
            txn.log[key] = LogRecord(key, OpName.DELETE, None, status)
        return value, status

    def try_commit(self, txn: TxnHandle) -> Status:
        self._require_live(txn)
        # Lock acquisition must follow one predefined total order over all
        # nodes.  Keys sort per bucket first: a record's window may span
        # nodes far above its own key, so raw key order is not a global
        # lock order once keys interleave across buckets.
        num_buckets = len(self._buckets)
        updates = sorted((rec for rec in txn.log.values()
                          if rec.opn is not OpName.LOOKUP),
                         key=lambda rec: (rec.key % num_buckets, rec.key))
        if not updates:
            if self.recorder is not None:
                self.recorder.record(txn.ts, Method.TRYC, status="COMMIT")
            self._finalize(txn, TxnStatus.COMMITTED)
            return Status.COMMIT

        held: List[Node] = []
        held_ids = set()

        def release_all() -> None:
            for node in sorted(held, key=lambda n: n.key):
                node.lock.release()
            held.clear()
            held_ids.clear()

        # Phase 1: lock and validate every update window in key order.
        for rec in updates:
            bucket = self._bucket(rec.key)
            while True:
                window = bucket.search(rec.key)
                fresh = [n for n in window.distinct_nodes() if id(n) not in held_ids]
                for node in fresh:
                    node.lock.acquire()
                if rv_validate(window):
                    for node in fresh:
                        held_ids.add(id(node))
                        held.append(node)
                    break
                for node in fresh:
                    node.lock.release()
            rec.window = window
            node = window.rc if window.rc.key == rec.key else None
            if node is not None and not self._commit_validation(node, txn.ts):
                if self.recorder is not None:
                    self.recorder.record(txn.ts, Method.TRYC, status="ABORT")
                release_all()
                self._finalize(txn, TxnStatus.ABORTED)
                return Status.ABORT

        # Phase 2: apply updates, repairing windows against this
        # transaction's own earlier splices.  Windows can only be invalidated
        # by earlier updates in the same bucket, so repairs pair per bucket.
        prev_by_bucket: Dict[int, LogRecord] = {}
        for rec in updates:
            bucket_idx = rec.key % len(self._buckets)
            self._intra_trans_validation(prev_by_bucket.get(bucket_idx), rec)
            prev_by_bucket[bucket_idx] = rec
            window = rec.window
            bucket = self._buckets[bucket_idx]
            if rec.opn is OpName.INSERT:
                if window.bc.key == rec.key:
                    node = window.bc
                elif window.rc.key == rec.key:
                    node = bucket.insert_node(window, rec.key, InsertMode.RELINK_BLUE)
                else:
                    node = bucket.insert_node(window, rec.key, InsertMode.BLUE_AND_RED)
                    held_ids.add(id(node))
                    held.append(node)
                node.vl.add_version(txn.ts, rec.value)
            else:
                if window.bc.key == rec.key:
                    node = window.bc
                    node.vl.add_version(txn.ts, None)
                    bucket.unlink_blue(window)
                elif window.rc.key == rec.key:
                    node = window.rc
                    node.vl.add_version(txn.ts, None)
                else:
                    node = bucket.insert_node(window, rec.key, InsertMode.RED_ONLY)
                    held_ids.add(id(node))
                    held.append(node)
                    node.vl.add_version(txn.ts, None)

        if self.recorder is not None:
            self.recorder.record(txn.ts, Method.TRYC, status="COMMIT")
        release_all()
        self._finalize(txn, TxnStatus.COMMITTED)
        return Status.COMMIT

    # -- internals ------------------------------------------------------------

    def _bucket(self, key: int) -> RedBlueList:
        return self._buckets[key % len(self._buckets)]

    def _check_key(self, key: int) -> None:
        if not (KEY_MIN < key < KEY_MAX):
            raise ValueError(f"key must lie strictly between {KEY_MIN} and {KEY_MAX}")

    def _require_live(self, txn: TxnHandle) -> None:
        if txn.status is not TxnStatus.LIVE:
            raise InactiveTransactionError(f"transaction {txn.ts} is {txn.status.value}")

    def _finalize(self, txn: TxnHandle, status: TxnStatus) -> None:
        txn.status = status
        if self.altl is not None:
            self.altl.deregister(txn.ts)

    def _commit_validation(self, node: Node, ts: int) -> bool:
        """May ``ts`` create a version on this key?

        A younger reader of the version this one would supersede kills the
        commit.  Under bounded versions the predecessor version may have
        been evicted together with its reader list; without that evidence
        the update cannot be validated, so it aborts as well.
        """
        if not node.vl.check_versions(ts):
            return False
        if (self.policy.kind is PolicyKind.K_BOUNDED and len(node.vl) > 0
                and node.vl.find_lts(ts) is None):
            return False
        return True

    def _read_shared(self, txn: TxnHandle, key: int,
                     method: Method) -> Tuple[Optional[int], Status]:
        """First read of ``key`` by ``txn``: consult the shared version lists."""
        bucket = self._bucket(key)
        while True:
            window = bucket.search(key)
            lock_window(window)
            if rv_validate(window):
                break
            unlock_window(window)
        created: Optional[Node] = None
        if window.rc.key == key:
            node = window.rc
            version = node.vl.find_lts(txn.ts)
            if version is None:
                if self.policy.kind is PolicyKind.K_BOUNDED:
                    # every surviving version is younger; nothing safe to read
                    if self.recorder is not None:
                        self.recorder.record(txn.ts, method, key=key, status="ABORT")
                    unlock_window(window)
                    self._finalize(txn, TxnStatus.ABORTED)
                    if self.recorder is not None:
                        self.recorder.record(txn.ts, Method.TRYC, status="ABORT")
                    return None, Status.ABORT
                version = node.vl.attach_zero_version(txn.ts)
                value, status, read_ts = None, Status.FAIL, 0
            else:
                node.vl.register_reader(version, txn.ts)
                read_ts = version.ts
                if version.val is None:
                    value, status = None, Status.FAIL
                else:
                    value, status = version.val, Status.OK
        else:
            created = bucket.insert_node(window, key, InsertMode.RED_ONLY)
            created.vl.create_zero_version(txn.ts)
            value, status, read_ts = None, Status.FAIL, 0
        if self.recorder is not None:
            self.recorder.record(txn.ts, method, key=key, value=value,
                                 status=status.name, version_read_ts=read_ts)
        unlock_window(window)
        if created is not None:
            created.lock.release()
        return value, status

    def _intra_trans_validation(self, prev: Optional[LogRecord],
                                rec: LogRecord) -> None:
        """Repair ``rec``'s window after the previous update's splices.

        Only the predecessors can go stale: earlier updates of the same
        transaction work on strictly smaller keys, so they may splice nodes
        in below but never move this record's currents.  The repaired nodes
        come out of the previous record's (already repaired) window, which
        this transaction locked in phase 1.
        """
        if prev is None:
            return
        window, prev_window = rec.window, prev.window
        if window.bp.marked or window.bp.blue_next is not window.bc:
            if prev.opn is OpName.INSERT:
                window.bp = prev_window.bp.blue_next
            else:
                window.bp = prev_window.bp
        if window.rp.red_next is not window.rc:
            window.rp = prev_window.rp.red_next

    # -- introspection ----------------------------------------------------------

    def buckets(self) -> List[RedBlueList]:
        return list(self._buckets)

    def iter_nodes(self) -> Iterator[Node]:
        """All non-sentinel nodes; consistent only at quiescence."""
        for bucket in self._buckets:
            yield from bucket.red_nodes()

    def next_ts(self) -> int:
        return self._counter.peek()
