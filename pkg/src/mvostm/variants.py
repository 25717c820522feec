"""Memory-management variants: live-transaction tracking and version GC.

Under the GC policy every transaction registers its timestamp in a global
live list (ALTL) at begin and removes it at commit/abort.  When the least
live transaction itself creates a version of a key, it reclaims that key's
stale history: every version older than the least live timestamp goes,
except the newest one that timestamp can still read.
"""

from __future__ import annotations

import threading
from typing import Optional, Set

from .version_store import VersionList


class LiveList:
    """ALTL: the set of live transaction timestamps, guarded by its own lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self._live: Set[int] = set()

    def register(self, ts: int) -> None:
        with self._lock:
            self._live.add(ts)

    def deregister(self, ts: int) -> None:
        with self._lock:
            assert ts in self._live, f"double deregister of {ts}"
            self._live.discard(ts)

    def min_live(self) -> Optional[int]:
        with self._lock:
            return min(self._live) if self._live else None

    def snapshot(self) -> Set[int]:
        with self._lock:
            return set(self._live)

    def __contains__(self, ts: int) -> bool:
        with self._lock:
            return ts in self._live


def gc_on_version_create(vl: VersionList, creator_ts: int, altl: LiveList) -> None:
    """Collect stale versions after ``creator_ts`` added one to ``vl``.

    Runs under the owning node's lock.  Only the least live transaction
    collects; it keeps the newest version it could itself still read (so no
    live reader loses its version) and never touches versions at or above
    the least live timestamp.  A stale minimum merely makes GC less eager.
    """
    min_live = altl.min_live()
    if min_live is None or creator_ts != min_live:
        return
    keep = vl.find_lts(min_live)
    doomed = [v for v in vl.versions if v.ts < min_live and v is not keep]
    if doomed:
        vl.remove_versions(doomed)
