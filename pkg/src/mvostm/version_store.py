"""Per-node version lists.

Every key keeps its committed values as timestamped versions.  A version
records the creating transaction's timestamp, the value (``None`` encodes a
delete, and the synthetic initial version), the set of reader timestamps
(``rvl``) and a link to the next-higher version.  All operations here assume
the owning node's lock is held; the list does no locking of its own.
"""

from __future__ import annotations

import bisect
import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Set


class PolicyKind(enum.Enum):
    UNBOUNDED = "unbounded"
    GC = "gc"
    K_BOUNDED = "k_bounded"


@dataclass(frozen=True)
class Policy:
    """Version retention policy selected at table construction."""

    kind: PolicyKind
    k: Optional[int] = None

    @staticmethod
    def unbounded() -> "Policy":
        return Policy(PolicyKind.UNBOUNDED)

    @staticmethod
    def gc() -> "Policy":
        return Policy(PolicyKind.GC)

    @staticmethod
    def k_bounded(k: int) -> "Policy":
        if k < 1:
            raise ValueError("version bound must be >= 1")
        return Policy(PolicyKind.K_BOUNDED, k)

    def label(self) -> str:
        if self.kind is PolicyKind.K_BOUNDED:
            return f"k:{self.k}"
        return self.kind.value

    @staticmethod
    def parse(text: str) -> "Policy":
        text = text.strip().lower()
        if text == "unbounded":
            return Policy.unbounded()
        if text == "gc":
            return Policy.gc()
        if text.startswith("k:"):
            return Policy.k_bounded(int(text[2:]))
        raise ValueError(f"unknown policy {text!r} (expected unbounded | gc | k:<N>)")


class VersionCounter:
    """Tally of live versions across a table: +1 on create, -1 on evict/GC."""

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0
        self.peak = 0

    def incr(self) -> None:
        with self._lock:
            self.value += 1
            if self.value > self.peak:
                self.peak = self.value

    def decr(self, n: int = 1) -> None:
        with self._lock:
            self.value -= n


@dataclass(slots=True)
class Version:
    """One committed (or synthetic 0th) value of a key."""

    ts: int
    val: Optional[int]
    rvl: Set[int] = field(default_factory=set)
    vnext: Optional["Version"] = None


class VersionList:
    """Timestamp-sorted versions of one key.

    Mutations require the owning node's lock.  ``gc_hook`` (wired only under
    the GC policy) runs after every regular version insertion.
    """

    def __init__(self, policy: Policy, counter: Optional[VersionCounter] = None,
                 gc_hook: Optional[Callable[["VersionList", int], None]] = None):
        self.policy = policy
        self.counter = counter
        self.gc_hook = gc_hook
        self.versions: List[Version] = []
        self._ts_keys: List[int] = []

    def __len__(self) -> int:
        return len(self.versions)

    def is_empty(self) -> bool:
        return not self.versions

    # -- reads ---------------------------------------------------------------

    def find_lts(self, ts: int) -> Optional[Version]:
        """The version with the largest timestamp strictly below ``ts``."""
        idx = bisect.bisect_left(self._ts_keys, ts)
        if idx == 0:
            return None
        return self.versions[idx - 1]

    def register_reader(self, version: Version, ts: int) -> None:
        """Record that transaction ``ts`` returned this version's value."""
        assert ts > version.ts, "readers must be younger than the version"
        version.rvl.add(ts)

    def check_versions(self, ts: int) -> bool:
        """Commit-time test: may ``ts`` still create a version here?

        False iff the closest older version was already read by a
        transaction younger than ``ts``.
        """
        version = self.find_lts(ts)
        if version is None:
            return True
        return all(reader <= ts for reader in version.rvl)

    # -- writes ----------------------------------------------------------------

    def add_version(self, ts: int, val: Optional[int]) -> Version:
        """Insert a committed version, then run the retention policy."""
        version = self._insert(ts, val)
        if self.policy.kind is PolicyKind.K_BOUNDED:
            self.k_evict(self.policy.k)
        elif self.gc_hook is not None:
            self.gc_hook(self, ts)
        return version

    def create_zero_version(self, reader_ts: int) -> Version:
        """Seed an empty list with the synthetic ``ts=0`` null version."""
        assert not self.versions, "zero version only seeds empty lists"
        version = self._insert(0, None)
        version.rvl.add(reader_ts)
        return version

    def attach_zero_version(self, reader_ts: int) -> Version:
        """Give an old reader something to read when every version is younger.

        Only reached when ``find_lts`` came up empty on a non-empty list; no
        version with ``ts < reader_ts`` exists, so a fresh 0th version slots
        in at the front.  Bypasses retention hooks.
        """
        assert self.find_lts(reader_ts) is None
        version = self._insert(0, None)
        version.rvl.add(reader_ts)
        return version

    def k_evict(self, k: int) -> None:
        """Drop oldest versions until at most ``k`` remain."""
        while len(self.versions) > k:
            self._remove_at(0)

    def _insert(self, ts: int, val: Optional[int]) -> Version:
        idx = bisect.bisect_left(self._ts_keys, ts)
        assert not (idx < len(self._ts_keys) and self._ts_keys[idx] == ts), \
            f"duplicate version timestamp {ts}"
        version = Version(ts, val)
        self.versions.insert(idx, version)
        self._ts_keys.insert(idx, ts)
        if idx > 0:
            self.versions[idx - 1].vnext = version
        version.vnext = self.versions[idx + 1] if idx + 1 < len(self.versions) else None
        if self.counter is not None:
            self.counter.incr()
        return version

    def _remove_at(self, idx: int) -> None:
        version = self.versions.pop(idx)
        self._ts_keys.pop(idx)
        if idx > 0:
            self.versions[idx - 1].vnext = self.versions[idx] if idx < len(self.versions) else None
        version.vnext = None
        if self.counter is not None:
            self.counter.decr()

    def remove_versions(self, doomed: List[Version]) -> None:
        """Drop specific versions (GC); the node lock must be held."""
        for version in doomed:
            idx = self.versions.index(version)
            self._remove_at(idx)

    # -- audits -----------------------------------------------------------------

    def timestamps(self) -> List[int]:
        return list(self._ts_keys)

    def audit_links(self) -> None:
        """Assert strict ts ascent and vnext adjacency over the whole list."""
        for i, version in enumerate(self.versions):
            assert version.ts == self._ts_keys[i]
            if i + 1 < len(self.versions):
                assert version.ts < self.versions[i + 1].ts
                assert version.vnext is self.versions[i + 1]
            else:
                assert version.vnext is None
