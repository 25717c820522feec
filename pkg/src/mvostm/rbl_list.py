"""Concurrent red-blue lazy list.

A sorted linked list in which every node carries two forward links: the red
link chains *all* nodes (live and logically deleted) while the blue link
chains only the live (unmarked) ones.  Deleted nodes are kept red-reachable
forever so that old versions of their keys stay accessible.

Locking protocol
----------------
Traversal takes no locks.  Any mutation first captures a ``SearchWindow``
(two predecessor / two current nodes, one pair per colour), locks its
distinct nodes in increasing key order, re-validates the window under the
locks, and only then splices.  Locks are re-entrant: the same thread may
hold a node under several roles at once.
"""

from __future__ import annotations

import enum
import threading
from typing import Callable, Iterator, List, Optional

KEY_MIN = 0
KEY_MAX = 2**64 - 1


class InsertMode(enum.Enum):
    RED_ONLY = "red_only"
    BLUE_AND_RED = "blue_and_red"
    RELINK_BLUE = "relink_blue"


class Node:
    """One key of a bucket: ``(key, lock, marked, vl, red_next, blue_next)``."""

    __slots__ = ("key", "lock", "marked", "vl", "red_next", "blue_next")

    def __init__(self, key: int, vl=None, marked: bool = False):
        self.key = key
        self.lock = threading.RLock()
        self.marked = marked
        self.vl = vl
        self.red_next: Optional[Node] = None
        self.blue_next: Optional[Node] = None

    def is_sentinel(self) -> bool:
        return self.key == KEY_MIN or self.key == KEY_MAX

    def __repr__(self):
        return f"Node({self.key}, marked={self.marked})"


class SearchWindow:
    """Blue and red predecessor/current pairs bracketing a key.

    At capture time ``bp.key <= rp.key < key <= rc.key <= bc.key`` and the
    four slots name two, three or four distinct nodes.  The window may go
    stale immediately; callers lock it and call :func:`rv_validate`.
    """

    __slots__ = ("bp", "bc", "rp", "rc")

    def __init__(self, bp: Node, bc: Node, rp: Node, rc: Node):
        self.bp = bp
        self.bc = bc
        self.rp = rp
        self.rc = rc

    def distinct_nodes(self) -> List[Node]:
        """The window's distinct nodes, sorted by key (lock order)."""
        seen = {}
        for node in (self.bp, self.rp, self.rc, self.bc):
            seen[id(node)] = node
        return sorted(seen.values(), key=lambda n: n.key)

    def __repr__(self):
        return (f"SearchWindow(bp={self.bp.key}, bc={self.bc.key}, "
                f"rp={self.rp.key}, rc={self.rc.key})")


class RedBlueList:
    """One bucket: a red-blue lazy list between -inf/+inf sentinels.

    ``vl_factory`` builds the version list attached to every new node; the
    list itself never looks inside it.
    """

    def __init__(self, vl_factory: Optional[Callable[[], object]] = None):
        self._vl_factory = vl_factory or (lambda: None)
        self.head = Node(KEY_MIN, vl=self._vl_factory())
        self.tail = Node(KEY_MAX, vl=self._vl_factory())
        self.head.red_next = self.tail
        self.head.blue_next = self.tail

    # -- traversal ---------------------------------------------------------

    def search(self, key: int) -> SearchWindow:
        """Locate the blue and red windows around ``key`` without locking.

        The result may be stale by the time the caller locks it; that is
        detected by :func:`rv_validate`.
        """
        assert KEY_MIN < key < KEY_MAX, key
        bp = self.head
        bc = bp.blue_next
        while bc.key < key:
            bp = bc
            bc = bc.blue_next
        rp = bp
        rc = rp.red_next
        while rc.key < key:
            rp = rc
            rc = rc.red_next
        return SearchWindow(bp, bc, rp, rc)

    # -- mutation under window locks ---------------------------------------

    def insert_node(self, window: SearchWindow, key: int, mode: InsertMode) -> Node:
        """Splice ``key`` into the window; the window must be locked and valid.

        RED_ONLY creates a marked node reachable only via red links;
        BLUE_AND_RED creates a live node on both chains; RELINK_BLUE revives
        the existing red node ``rc`` by giving it fresh blue links.  Newly
        created nodes are returned already locked by the caller.
        """
        if mode is InsertMode.RELINK_BLUE:
            node = window.rc
            assert node.key == key and node.marked, "RELINK_BLUE needs a marked red node"
            assert window.bc.key != key
            node.blue_next = window.bc
            window.bp.blue_next = node
            node.marked = False
            return node

        assert window.rc.key != key, "key already red-reachable"
        node = Node(key, vl=self._vl_factory())
        node.lock.acquire()
        if mode is InsertMode.RED_ONLY:
            node.marked = True
            node.red_next = window.rc
            window.rp.red_next = node
        else:
            node.red_next = window.rc
            node.blue_next = window.bc
            window.rp.red_next = node
            window.bp.blue_next = node
        return node

    def unlink_blue(self, window: SearchWindow) -> None:
        """Logically delete ``bc``: mark it and bypass it on the blue chain."""
        node = window.bc
        assert not node.is_sentinel(), "sentinels are never unlinked"
        node.marked = True
        window.bp.blue_next = node.blue_next

    # -- audits (test support; consistent only at quiescence) ---------------

    def red_keys(self) -> List[int]:
        return [n.key for n in self._iter(red=True)]

    def blue_keys(self) -> List[int]:
        return [n.key for n in self._iter(red=False)]

    def red_nodes(self) -> List[Node]:
        return list(self._iter(red=True))

    def _iter(self, red: bool) -> Iterator[Node]:
        node = self.head.red_next if red else self.head.blue_next
        while node is not self.tail:
            yield node
            node = node.red_next if red else node.blue_next


def lock_window(window: SearchWindow) -> None:
    """Lock each distinct window node once, in increasing key order."""
    for node in window.distinct_nodes():
        node.lock.acquire()


def unlock_window(window: SearchWindow) -> None:
    """Release each distinct window node exactly once."""
    for node in window.distinct_nodes():
        node.lock.release()


def rv_validate(window: SearchWindow) -> bool:
    """Check the locked window still reflects the list.

    True iff neither blue node is marked and both predecessors still point
    at their currents.
    """
    return (not window.bp.marked
            and not window.bc.marked
            and window.bp.blue_next is window.bc
            and window.rp.red_next is window.rc)
