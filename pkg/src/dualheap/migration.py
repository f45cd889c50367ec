"""Cache migration: persist hints, closure marking, and the H2 transfer.

persist() stamps the header mark word of a partition's root object; no
object moves until the next major collection.  During that collection's
marking phase the closure of every hinted root is computed over
non-transient reference fields and marked with the root's partition id
(eager, non-transient closure).  The compaction phase then appends every
marked live object to its partition's H2 region through a pluggable write
strategy.

Transient reference fields are not followed by closure marking and keep
their H1 targets after the move, becoming backward references that the
dirty-card scans keep alive and the adjust phase keeps up to date.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import InvalidHandleError
from .objmodel import SpaceKind, cache_word, cache_word_partition

if TYPE_CHECKING:
    from .runtime import Runtime


@dataclass(frozen=True)
class PersistHint:
    root: int
    partition_id: int


class HintRegistry:
    """Pending persist hints, ordered by first persist.

    Entries hold plain addresses and are remapped after every collection;
    they do not keep their roots alive.  A hint is dropped when its root
    dies or when the root migrates to H2 (re-persisting a migrated
    partition is a no-op).
    """

    def __init__(self) -> None:
        self._roots: dict[int, None] = {}

    def record(self, root: int) -> None:
        if root not in self._roots:
            self._roots[root] = None

    def drop(self, root: int) -> None:
        self._roots.pop(root, None)

    def roots(self) -> list[int]:
        return list(self._roots)

    def remap_after_minor(self, forwarded: dict[int, int], is_young) -> None:
        remapped: dict[int, None] = {}
        for addr in self._roots:
            if is_young(addr):
                new = forwarded.get(addr)
                if new is None:
                    continue  # root died
                remapped[new] = None
            else:
                remapped[addr] = None
        self._roots = remapped

    def remap_after_major(self, forwarded: dict[int, int], is_h2) -> None:
        remapped: dict[int, None] = {}
        for addr in self._roots:
            new = forwarded.get(addr)
            if new is None or is_h2(new):
                continue  # dead, or migrated and therefore satisfied
            remapped[new] = None
        self._roots = remapped


def persist(rt: "Runtime", root: int, partition_id: int) -> None:
    """Mark `root` as a cache candidate for `partition_id`.

    Idempotent for a repeated (root, id) pair; a second persist with a
    different id overwrites the partition id (last writer wins).  Roots
    already living in H2 are left untouched.
    """
    space = rt.layout.classify(root)
    rt.tag_root_slots(root, partition_id)
    if space is SpaceKind.H2:
        return
    rt.set_cache_mark(root, partition_id)
    rt.hints.record(root)


def unpersist(rt: "Runtime", partition_id: int) -> None:
    """Drop the driver-side roots of a partition.

    No H2 work happens here: the partition's regions become reclaimable at
    the next major collection once nothing references them.  Unknown
    partition ids are a no-op.
    """
    for slot_id in rt.slots_tagged(partition_id):
        value = rt.read_root(slot_id)
        rt.drop_root(slot_id)
        if value and rt.layout.classify_or_none(value) in (
            SpaceKind.H1_YOUNG,
            SpaceKind.H1_OLD,
        ):
            rt.hints.drop(value)
            rt.clear_cache_mark(value)


def etr_mark_closure(rt: "Runtime", hinted: list[PersistHint]) -> int:
    """Mark the non-transient closure of every hinted root.

    Traversal never crosses a transient reference field and never enters
    H2.  An object reachable from several hinted roots keeps the partition
    id of the first hint that reaches it; hints are processed in order.
    Returns the number of distinct objects carrying a mark after the call.
    """
    visited: set[int] = set()
    for hint in hinted:
        root = hint.root
        if rt.layout.classify_or_none(root) is None:
            raise InvalidHandleError(f"hint root {root:#x} invalid")
        if root not in visited:
            visited.add(root)
            if not rt.cache_marked(root):
                rt.set_cache_mark(root, hint.partition_id)
        partition_id = cache_word_partition(rt.cache_word_of(root))
        stack = [root]
        while stack:
            addr = stack.pop()
            desc = rt.descriptor_of(addr)
            for fi in desc.ref_indexes:
                fs = desc.fields[fi]
                if fs.transient:
                    continue
                target = rt.load_word(addr + fs.offset)
                if not target or target in visited:
                    continue
                if rt.layout.is_h2(target):
                    continue
                visited.add(target)
                if not rt.cache_marked(target):
                    rt.set_cache_mark(target, partition_id)
                stack.append(target)
    return len(visited)


# ---------------------------------------------------------------------------
# Write strategies for the compaction-phase transfer.


class DirectCopyWriter:
    """One synchronous store per object, the memory-copy path."""

    def __init__(self, h2) -> None:
        self.h2 = h2
        self.flush_ops = 0
        self.bytes_written = 0

    def write(self, dest: int, data: bytes) -> None:
        self.h2.write_bytes(dest, data)
        self.flush_ops += 1
        self.bytes_written += len(data)

    def finish(self) -> None:
        pass


class BatchedAsyncWriter:
    """Byte-stream buffering with a bounded in-flight queue.

    Object images are appended to a fixed-size buffer and may straddle a
    flush boundary, so every flush except the last carries exactly
    `buffer_size` bytes: the number of flush operations for B bytes moved
    is ceil(B / buffer_size).  A flush models one asynchronous submission;
    at most `queue_depth` are in flight, and finish() drains the queue, so
    the H2 image is complete before compaction ends.  The resulting bytes
    are identical to the direct-copy path.
    """

    def __init__(self, h2, buffer_size: int, queue_depth: int) -> None:
        self.h2 = h2
        self.buffer_size = buffer_size
        self.queue_depth = queue_depth
        self.flush_ops = 0
        self.bytes_written = 0
        self.max_in_flight = 0
        self._fill = 0
        self._entries: list[tuple[int, bytes]] = []
        self._in_flight: list[list[tuple[int, bytes]]] = []

    def write(self, dest: int, data: bytes) -> None:
        self.bytes_written += len(data)
        view = memoryview(data)
        while view.nbytes:
            room = self.buffer_size - self._fill
            chunk = view[:room]
            self._entries.append((dest, bytes(chunk)))
            self._fill += chunk.nbytes
            dest += chunk.nbytes
            view = view[chunk.nbytes:]
            if self._fill == self.buffer_size:
                self._submit()

    def _submit(self) -> None:
        if not self._entries:
            return
        self._in_flight.append(self._entries)
        self._entries = []
        self._fill = 0
        self.flush_ops += 1
        self.max_in_flight = max(self.max_in_flight, len(self._in_flight))
        if len(self._in_flight) > self.queue_depth:
            self._complete(self._in_flight.pop(0))

    def _complete(self, batch: list[tuple[int, bytes]]) -> None:
        for dest, data in batch:
            self.h2.write_bytes(dest, data)

    def finish(self) -> None:
        self._submit()
        while self._in_flight:
            self._complete(self._in_flight.pop(0))


def make_writer(rt: "Runtime"):
    cfg = rt.config.migration
    if cfg.strategy == "direct_copy":
        return DirectCopyWriter(rt.h2)
    return BatchedAsyncWriter(rt.h2, cfg.batch_buffer, cfg.queue_depth)


def transfer_marked(
    rt: "Runtime",
    marked: list[int],
    forwarded: dict[int, int],
    writer,
) -> tuple[int, int]:
    """Copy every marked object to its assigned H2 address.

    Fields were already rewritten through the relocation map, so the
    copied image is final.  Each landed object's card is dirtied without
    inspecting fields; reference fields are then walked once to detect
    cross-region H2 references, which merge the regions' groups.  H1
    targets remaining in (transient) fields become backward references and
    are picked up by the next dirty-card scan.
    """
    h2 = rt.h2
    moved = 0
    total = 0
    for addr in marked:
        dest = forwarded[addr]
        size = rt.h1.object_size(addr)
        writer.write(dest, rt.h1.read_bytes(addr, size))
        moved += 1
        total += size
    writer.finish()
    for addr in marked:
        dest = forwarded[addr]
        h2.dirty_card(dest)
        desc = rt.descriptor_of(dest)
        dest_region = h2.region_of(dest)
        for fi in desc.ref_indexes:
            value = h2.load_word(dest + desc.fields[fi].offset)
            if value and rt.layout.is_h2(value):
                target_region = h2.region_of(value)
                if target_region != dest_region:
                    h2.merge_groups(dest_region, target_region)
    rt.counters.inc("objects_moved_to_h2", moved)
    rt.counters.inc("bytes_moved_to_h2", total)
    rt.counters.inc("h2_flush_ops", writer.flush_ops)
    return moved, total
