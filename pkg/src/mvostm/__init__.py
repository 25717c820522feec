"""Multi-version object software transactional memory for a hash table.

The table exports transactional insert/lookup/delete over integer keys.
Every committed update leaves a timestamped version behind, so readers
almost always find something consistent to return instead of aborting.
Buckets are red-blue lazy lists (deleted nodes stay red-reachable for
their versions); commits validate and apply under per-node locks taken in
global key order.

>>> from mvostm import HashTable, Policy, Status
>>> table = HashTable(buckets=5, policy=Policy.unbounded())
>>> txn = table.begin()
>>> table.insert(txn, 7, 700)
<Status.OK: 1>
>>> table.try_commit(txn)
<Status.COMMIT: 3>
"""

from .core import (HashTable, InactiveTransactionError, LogRecord, OpName,
                   Status, TxnHandle, TxnStatus)
from .history import (Event, History, HistoryRecorder, Method, OpacityResult,
                      Verdict, build_opg, check_legal_serial, check_opacity,
                      ts_version_order)
from .rbl_list import KEY_MAX, KEY_MIN, InsertMode, Node, RedBlueList, SearchWindow
from .variants import LiveList, gc_on_version_create
from .version_store import Policy, PolicyKind, Version, VersionCounter, VersionList

__all__ = [
    "HashTable", "InactiveTransactionError", "LogRecord", "OpName", "Status",
    "TxnHandle", "TxnStatus",
    "Event", "History", "HistoryRecorder", "Method", "OpacityResult", "Verdict",
    "build_opg", "check_legal_serial", "check_opacity", "ts_version_order",
    "KEY_MAX", "KEY_MIN", "InsertMode", "Node", "RedBlueList", "SearchWindow",
    "LiveList", "gc_on_version_create",
    "Policy", "PolicyKind", "Version", "VersionCounter", "VersionList",
]

__version__ = "0.1.0"
