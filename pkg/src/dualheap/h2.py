"""The file-backed second heap (H2).

H2 holds cached objects and is never traversed by the collector.  It is
organized as a sequence of fixed-size regions, each bump-allocated and
bound to one partition id at a time.  Liveness is tracked per region, not
per object:

  * a USED bit per region, cleared at the start of every major-collection
    marking phase and set whenever marking encounters an H1 reference into
    the region (or when migration appends objects to it);
  * region groups, formed by union-find whenever a cross-region H2
    reference is created.  A group is reclaimed only as a whole, so a
    region can never be freed while a sibling holding a reference into it
    survives.  Merging is a single link; member enumeration is deferred to
    reclaim time.

Updates to H2 objects are tracked by a card table with one byte per
`card_segment` bytes.  For parallel scanning the table is partitioned into
fixed-size stripes; `scan_threads` consecutive stripes form a slice, and
scan thread `t` owns stripe `t` of every slice.  The first and last card
of each stripe are boundary cards: two neighboring threads may both walk
objects spanning the stripe edge, so boundary cards are never cleaned
during scans (only a region reset cleans them).  Consequently a dirty
boundary card is rescanned on every collection.

Objects overlapping a dirty segment are located via a per-segment
first-object table: entry `c` holds the address of the object covering the
first byte of segment `c`.  Allocation inside a region is gap-free, so a
covered segment always has an entry, and a walk from that entry parses
every object overlapping the segment, including one spilling in from the
preceding segment.
"""

from __future__ import annotations

import mmap
import struct
from pathlib import Path

from .config import H2Config
from .errors import HeapCorruptionError, RegionExhaustedError
from .metrics import Counters
from .objmodel import (
    ClassRegistry,
    FieldKind,
    HeapLayout,
    word_class_id,
)

_U64 = struct.Struct("<Q")

CARD_CLEAN = 0
CARD_DIRTY = 1

UNASSIGNED = -1


def open_backing(backing: str, size: int):
    """mmap the H2 image: a sparse file, or anonymous memory for tests."""
    if backing == "anonymous":
        return mmap.mmap(-1, size), None
    path = Path(backing)
    fh = open(path, "w+b")
    fh.truncate(size)
    return mmap.mmap(fh.fileno(), size), fh


class H2CardTable:
    """Dirtiness bytes for H2 segments, partitioned into stripes and slices."""

    def __init__(self, base: int, size: int, segment: int, stripe: int, scan_threads: int) -> None:
        self.base = base
        self.segment = segment
        self.stripe = stripe
        self.scan_threads = scan_threads
        self.n_cards = size // segment
        self.cards_per_stripe = stripe // segment
        self.n_stripes = size // stripe
        self.n_slices = self.n_stripes // scan_threads
        self.cards = bytearray(self.n_cards)

    def index_of(self, addr: int) -> int:
        return (addr - self.base) // self.segment

    def is_dirty(self, idx: int) -> bool:
        return self.cards[idx] == CARD_DIRTY

    def dirty_index(self, idx: int) -> bool:
        """Mark a card dirty; returns True on a clean->dirty transition."""
        was_clean = self.cards[idx] == CARD_CLEAN
        self.cards[idx] = CARD_DIRTY
        return was_clean

    def clear_index(self, idx: int) -> None:
        self.cards[idx] = CARD_CLEAN

    def is_boundary(self, idx: int) -> bool:
        pos = idx % self.cards_per_stripe
        return pos == 0 or pos == self.cards_per_stripe - 1

    def stripe_of(self, idx: int) -> int:
        return idx // self.cards_per_stripe

    def thread_of_card(self, idx: int) -> int:
        return self.stripe_of(idx) % self.scan_threads

    def cards_for_thread(self, thread_id: int):
        """Ascending card indexes owned by one scan thread.

        Thread `t` owns global stripes t, t+T, t+2T, ...: the stripe with
        index t inside every slice.
        """
        for stripe in range(thread_id, self.n_stripes, self.scan_threads):
            start = stripe * self.cards_per_stripe
            yield from range(start, start + self.cards_per_stripe)

    def segment_bounds(self, idx: int) -> tuple[int, int]:
        start = self.base + idx * self.segment
        return start, start + self.segment

    def count_dirty(self) -> int:
        return sum(1 for b in self.cards if b)

    def count_dirty_boundary(self) -> int:
        return sum(1 for i, b in enumerate(self.cards) if b and self.is_boundary(i))


class H2Heap:
    def __init__(
        self,
        layout: HeapLayout,
        cfg: H2Config,
        registry: ClassRegistry,
        counters: Counters,
    ) -> None:
        self.layout = layout
        self.cfg = cfg
        self.registry = registry
        self.counters = counters

        self.base = layout.h2_base
        self.size = cfg.size
        self.region_size = cfg.region_size
        self.n_regions = cfg.size // cfg.region_size

        self.buf, self._fh = open_backing(cfg.backing, cfg.size)
        self.cards = H2CardTable(
            self.base, cfg.size, cfg.card_segment, cfg.stripe_size, cfg.scan_threads
        )
        self.cards_per_region = cfg.region_size // cfg.card_segment

        # Per-region metadata.
        self.alloc_offsets = [0] * self.n_regions
        self.partition_ids = [UNASSIGNED] * self.n_regions
        self.used_bits = [False] * self.n_regions
        # Union-find over region indexes; singleton set == ungrouped region.
        self._group_parent = list(range(self.n_regions))
        self._group_size = [1] * self.n_regions
        self._free: list[int] = list(range(self.n_regions))  # kept sorted
        self._open_region: dict[int, int] = {}  # partition id -> region index

        # first-object table, one entry per card segment (0 == no object).
        self.first_obj = [0] * self.cards.n_cards

    def close(self) -> None:
        self.buf.close()
        if self._fh is not None:
            self._fh.close()

    # -- raw access ---------------------------------------------------------

    def load_word(self, addr: int) -> int:
        return _U64.unpack_from(self.buf, addr - self.base)[0]

    def store_word(self, addr: int, value: int) -> None:
        _U64.pack_into(self.buf, addr - self.base, value)

    def write_bytes(self, addr: int, data: bytes) -> None:
        off = addr - self.base
        self.buf[off : off + len(data)] = data

    def read_bytes(self, addr: int, size: int) -> bytes:
        off = addr - self.base
        return bytes(self.buf[off : off + size])

    # -- regions ------------------------------------------------------------

    def region_of(self, addr: int) -> int:
        return (addr - self.base) // self.region_size

    def region_start(self, idx: int) -> int:
        return self.base + idx * self.region_size

    def region_alloc_end(self, idx: int) -> int:
        return self.region_start(idx) + self.alloc_offsets[idx]

    def allocated_regions(self) -> list[int]:
        return [i for i in range(self.n_regions) if self.partition_ids[i] != UNASSIGNED]

    def _take_free_region(self, partition_id: int) -> int:
        if not self._free:
            raise RegionExhaustedError("no free H2 region")
        idx = self._free.pop(0)
        self.partition_ids[idx] = partition_id
        self._open_region[partition_id] = idx
        return idx

    def allocate_in_region(self, partition_id: int, size: int) -> int:
        """Bump-allocate `size` bytes in the partition's open region.

        Opens a fresh region when the current one cannot fit the object.
        The receiving region's USED bit is set: it holds live objects whose
        inbound references were just created, so it must survive the
        reclaim at the end of the cycle that populated it.
        """
        if size > self.region_size:
            raise RegionExhaustedError(
                f"object of {size} bytes exceeds region size {self.region_size}"
            )
        idx = self._open_region.get(partition_id)
        if idx is None:
            idx = self._take_free_region(partition_id)
        if self.alloc_offsets[idx] + size > self.region_size:
            idx = self._take_free_region(partition_id)
        addr = self.region_start(idx) + self.alloc_offsets[idx]
        self.alloc_offsets[idx] += size
        self.used_bits[idx] = True
        self._update_first_obj(addr, size)
        return addr

    def _update_first_obj(self, addr: int, size: int) -> None:
        # Claim every segment whose first byte falls inside [addr, addr+size).
        seg = self.cards.segment
        first = self.cards.index_of(addr)
        if addr == self.base + first * seg and self.first_obj[first] == 0:
            self.first_obj[first] = addr
        last = self.cards.index_of(addr + size - 1)
        for c in range(first + 1, last + 1):
            self.first_obj[c] = addr

    # -- cards --------------------------------------------------------------

    def dirty_card(self, addr: int) -> None:
        if self.cards.dirty_index(self.cards.index_of(addr)):
            self.counters.inc("h2_cards_dirtied")

    def object_size(self, addr: int) -> int:
        class_id = word_class_id(self.load_word(addr))
        desc = self.registry.maybe_get(class_id)
        if desc is None:
            raise HeapCorruptionError(f"unparseable object header at {addr:#x}")
        return desc.instance_size

    def iter_region_objects(self, idx: int):
        addr = self.region_start(idx)
        end = self.region_alloc_end(idx)
        while addr < end:
            yield addr
            addr += self.object_size(addr)

    def scan_dirty_cards(self, thread_id: int) -> tuple[list[tuple[int, int]], int]:
        """Walk this thread's dirty cards and collect backward references.

        Returns ``(backward_refs, cards_scanned)`` where each backward
        reference is ``(slot_address, h1_target)``.  A visited card is
        cleaned only when the walk over every object overlapping its
        segment found no H1-targeting slot and the card is not a boundary
        card.
        """
        refs: list[tuple[int, int]] = []
        cards_scanned = 0
        layout = self.layout
        for idx in self.cards.cards_for_thread(thread_id):
            if self.cards.cards[idx] != CARD_DIRTY:
                continue
            cards_scanned += 1
            seg_start, seg_end = self.cards.segment_bounds(idx)
            region = (seg_start - self.base) // self.region_size
            alloc_end = self.region_alloc_end(region)
            walk_end = min(seg_end, alloc_end)
            if walk_end > seg_start:
                self.counters.inc("h2_segment_bytes_walked", walk_end - seg_start)
            found = 0
            addr = self.first_obj[idx]
            while addr and addr < walk_end:
                size = self.object_size(addr)
                desc = self.registry.get(word_class_id(self.load_word(addr)))
                for fi in desc.ref_indexes:
                    slot = addr + desc.fields[fi].offset
                    value = self.load_word(slot)
                    if value and layout.is_h1(value):
                        refs.append((slot, value))
                        found += 1
                addr += size
            if found == 0 and not self.cards.is_boundary(idx):
                self.cards.clear_index(idx)
        self.counters.inc("h2_cards_scanned", cards_scanned)
        self.counters.inc("backward_refs_found", len(refs))
        return refs, cards_scanned

    # -- liveness: USED bits and region groups ------------------------------

    def begin_mark(self) -> None:
        for i in range(self.n_regions):
            self.used_bits[i] = False

    def set_used(self, region_index: int) -> None:
        self.used_bits[region_index] = True

    def group_root(self, idx: int) -> int:
        parent = self._group_parent
        root = idx
        while parent[root] != root:
            root = parent[root]
        while parent[idx] != root:  # path compression
            parent[idx], idx = root, parent[idx]
        return root

    def merge_groups(self, src_region: int, dst_region: int) -> None:
        """Union the two regions' groups; constant-time link by size."""
        a, b = self.group_root(src_region), self.group_root(dst_region)
        if a == b:
            return
        if self._group_size[a] < self._group_size[b]:
            a, b = b, a
        self._group_parent[b] = a
        self._group_size[a] += self._group_size[b]

    def group_members(self, idx: int) -> list[int]:
        root = self.group_root(idx)
        return [
            i
            for i in range(self.n_regions)
            if self.partition_ids[i] != UNASSIGNED and self.group_root(i) == root
        ]

    def reclaim_free_regions(self) -> list[int]:
        """Free every group whose member regions all have USED clear.

        Freeing touches region metadata and cards only; the work is
        proportional to region and card counts, never to object counts.
        Cleaning a freed region's cards is the one place boundary cards
        transition back to clean.
        """
        groups: dict[int, list[int]] = {}
        group_used: dict[int, bool] = {}
        for i in range(self.n_regions):
            if self.partition_ids[i] == UNASSIGNED:
                continue
            self.counters.inc("reclaim_ops")
            root = self.group_root(i)
            groups.setdefault(root, []).append(i)
            group_used[root] = group_used.get(root, False) or self.used_bits[i]
        freed: list[int] = []
        for root, members in groups.items():
            if group_used[root]:
                continue
            for i in members:
                self.alloc_offsets[i] = 0
                pid = self.partition_ids[i]
                self.partition_ids[i] = UNASSIGNED
                self.used_bits[i] = False
                self._group_parent[i] = i
                self._group_size[i] = 1
                if self._open_region.get(pid) == i:
                    del self._open_region[pid]
                card_lo = (self.region_start(i) - self.base) // self.cards.segment
                for c in range(card_lo, card_lo + self.cards_per_region):
                    self.cards.clear_index(c)
                    self.first_obj[c] = 0
                self.counters.inc("reclaim_ops", 3 + 2 * self.cards_per_region)
                freed.append(i)
        freed.sort()
        for i in freed:
            self._free.append(i)
        self._free.sort()
        self.counters.inc("regions_freed", len(freed))
        return freed
