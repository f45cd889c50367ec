"""Stop-the-world collections over H1.

Minor collection is a copying collection of the young generation.  Its
root sources are the mutator root set, old-generation objects overlapping
dirty old-to-young cards, and backward references discovered by scanning
the H2 dirty cards.  Live young objects are copied into the idle survivor
half, or promoted to the old generation once their age reaches the
tenuring threshold (or when the survivor half overflows).  Relocation is
planned before any byte moves, so a promotion overflow aborts cleanly and
escalates to a major collection.

Major collection runs four phases over the whole of H1:

  mark        breadth-first from roots plus the backward-reference stack;
              never traverses into H2 but records region usage (USED bits),
              then marks the non-transient closure of every persist hint
  precompact  relocation targets: marked objects get H2 addresses from the
              region allocator, everything else slides to compacted old
              addresses (surviving young objects are absorbed into old);
              H1-side references are rewritten, forward references into H2
              are left untouched
  compact     marked objects are written to H2 through the configured
              write strategy, then the unmarked survivors slide
  adjust      every slot on the backward-reference stack is rewritten to
              its referent's new address

At the very end, unreachable H2 region groups are reclaimed in bulk.

Relocation maps live in side dictionaries keyed by pre-move address rather
than in overwritten header words; headers must stay parseable for the
walks that the phases above perform.
"""

from __future__ import annotations

import time
from collections import deque
from typing import TYPE_CHECKING

from .errors import HeapError, HeapExhaustedError
from .metrics import MajorStats, MinorStats
from .migration import PersistHint, etr_mark_closure, make_writer, transfer_marked
from .objmodel import SpaceKind, bump_age, cache_word_partition

if TYPE_CHECKING:
    from .runtime import Runtime


class PromotionOverflowError(HeapError):
    """Minor collection could not promote; a major collection is needed."""


class Collector:
    def __init__(self, rt: "Runtime") -> None:
        self.rt = rt
        self.minor_index = 0
        self.major_index = 0

    # ------------------------------------------------------------------
    # shared pieces

    def _scan_h2_cards(self) -> tuple[list[tuple[int, int]], int]:
        """Run every scan thread's stripe pass and merge the results.

        The per-thread passes touch disjoint cards (one stripe per slice
        each) and are executed here one after another; merging in thread-id
        order keeps the stack deterministic.
        """
        rt = self.rt
        stack: list[tuple[int, int]] = []
        cards = 0
        for tid in range(rt.config.h2.scan_threads):
            refs, n = rt.h2.scan_dirty_cards(tid)
            stack.extend(refs)
            cards += n
        rt.backward_stack = stack
        return stack, cards

    def _collect_old_card_slots(self) -> tuple[list[tuple[int, int]], list[int], int]:
        """Slots in dirty old segments whose value is young.

        Returns (slot, owner) pairs, the card indexes visited, and the
        number of dirty cards scanned.  Cards are not cleared here; the
        commit phase clears and selectively re-dirties them.
        """
        rt = self.rt
        h1 = rt.h1
        slots: list[tuple[int, int]] = []
        dirty = h1.cards.dirty_indexes()
        for idx in dirty:
            seg_start, seg_end = h1.cards.segment_bounds(idx)
            seg_end = min(seg_end, h1.old_top)
            for obj in h1.old_objects_overlapping(seg_start, seg_end):
                desc = rt.descriptor_of(obj)
                for fi in desc.ref_indexes:
                    slot = obj + desc.fields[fi].offset
                    value = h1.load_word(slot)
                    if value and rt.layout.is_young(value):
                        slots.append((slot, obj))
        return slots, dirty, len(dirty)

    # ------------------------------------------------------------------
    # minor collection

    def minor(self) -> MinorStats:
        rt = self.rt
        h1 = rt.h1
        layout = rt.layout
        t0 = time.perf_counter()
        self.minor_index += 1
        stats = MinorStats(index=self.minor_index)

        backward, stats.h2_cards_scanned = self._scan_h2_cards()
        old_slots, scanned_cards, stats.h1_cards_scanned = self._collect_old_card_slots()

        # Root values that live in the young generation seed the copy.
        seeds: list[int] = []
        for value in rt.root_values():
            stats.roots_scanned += 1
            if value and layout.is_young(value):
                seeds.append(value)
        for slot, _owner in old_slots:
            seeds.append(h1.load_word(slot))
        for slot, _target in backward:
            value = rt.load_word(slot)
            if value and layout.is_young(value):
                seeds.append(value)

        # Pass 1: trace the live young graph (read-only).
        visited: set[int] = set()
        order: list[int] = []
        queue: deque[int] = deque()
        for addr in seeds:
            if addr not in visited:
                visited.add(addr)
                order.append(addr)
                queue.append(addr)
        while queue:
            addr = queue.popleft()
            desc = rt.descriptor_of(addr)
            for fi in desc.ref_indexes:
                value = h1.load_word(addr + desc.fields[fi].offset)
                if value and layout.is_young(value) and value not in visited:
                    visited.add(value)
                    order.append(value)
                    queue.append(value)

        # Pass 2: plan destinations.  Aborting here leaves the heap intact.
        to_idx = 1 - h1.live_surv
        to_cursor = h1.surv_base[to_idx]
        to_limit = h1.surv_base[to_idx] + h1.surv_size
        old_cursor = h1.old_top
        threshold = rt.config.h1.tenuring_threshold
        forwarded: dict[int, int] = {}
        promoted: set[int] = set()
        for addr in order:
            size = h1.object_size(addr)
            age = (rt.load_word(addr) >> 1) & 0xFF
            wants_old = age + 1 >= threshold
            if not wants_old and to_cursor + size <= to_limit:
                forwarded[addr] = to_cursor
                to_cursor += size
            else:
                if old_cursor + size > h1.old_end:
                    raise PromotionOverflowError(
                        f"promotion of {size} bytes overflows the old generation"
                    )
                forwarded[addr] = old_cursor
                promoted.add(addr)
                old_cursor += size

        # Pass 3: copy bytes and bump ages.  Promotion destinations grow
        # monotonically, so appending keeps the old-start index sorted.
        for addr in order:
            size = h1.object_size(addr)
            dest = forwarded[addr]
            h1.write_bytes(dest, h1.read_bytes(addr, size))
            h1.store_word(dest, bump_age(h1.load_word(dest)))
            if addr in promoted:
                h1.old_starts.append(dest)
            stats.bytes_copied += size
        h1.old_top = old_cursor
        h1.surv_top[to_idx] = to_cursor
        stats.objects_promoted = len(promoted)
        stats.objects_copied = len(order) - len(promoted)

        # Scanned cards are consumed now; the fixup pass below re-dirties
        # any that still guard an old-to-young reference (including cards
        # of objects promoted this cycle, which may land in segments whose
        # stale dirt was just consumed).
        for idx in scanned_cards:
            h1.cards.clear_index(idx)

        # Pass 4: fix every slot that can hold a young address.
        for addr in order:
            dest = forwarded[addr]
            desc = rt.descriptor_of(dest)
            has_young_ref = False
            for fi in desc.ref_indexes:
                slot = dest + desc.fields[fi].offset
                value = h1.load_word(slot)
                if value in forwarded:
                    value = forwarded[value]
                    h1.store_word(slot, value)
                if value and layout.is_young(value):
                    has_young_ref = True
            if addr in promoted and has_young_ref:
                h1.cards.dirty(dest)
        rt.rewrite_roots(forwarded)
        for slot, _owner in old_slots:
            value = h1.load_word(slot)
            if value in forwarded:
                h1.store_word(slot, forwarded[value])
        for slot in dict.fromkeys(slot for slot, _ in backward):
            value = rt.load_word(slot)
            if value in forwarded:
                rt.store_word(slot, forwarded[value])
        rt.hints.remap_after_minor(forwarded, layout.is_young)

        # Re-dirty owners whose scanned slots still hold young references
        # (their targets stayed in the young generation).
        for slot, owner in old_slots:
            value = h1.load_word(slot)
            if value and layout.is_young(value):
                h1.cards.dirty(owner)

        h1.reset_eden()
        h1.reset_survivor(h1.live_surv)
        h1.live_surv = to_idx

        stats.backward_refs = len(backward)
        stats.seconds = time.perf_counter() - t0
        self._account_minor(stats)
        return stats

    def _account_minor(self, stats: MinorStats) -> None:
        c = self.rt.counters
        c.inc("minor_count")
        c.inc("objects_copied_minor", stats.objects_copied)
        c.inc("objects_promoted", stats.objects_promoted)
        c.inc("h1_cards_scanned", stats.h1_cards_scanned)
        self.rt.counters_float["minor_seconds"] = (
            self.rt.counters_float.get("minor_seconds", 0.0) + stats.seconds
        )

    # ------------------------------------------------------------------
    # major collection

    def major(self, skip_minor: bool = False) -> MajorStats:
        rt = self.rt
        h1 = rt.h1
        h2 = rt.h2
        layout = rt.layout
        t0 = time.perf_counter()
        self.major_index += 1
        stats = MajorStats(index=self.major_index)

        if skip_minor:
            # Invoked from a minor collection that overflowed after its scan
            # pass; the backward stack is fresh, but re-scanning is harmless
            # (cards holding references are never cleaned), so cover the
            # cold-call case too.
            self._scan_h2_cards()
        else:
            try:
                self.minor()
            except PromotionOverflowError:
                # The failed minor completed its H2 scan before aborting, so
                # the backward stack is current; full compaction below
                # absorbs the young generation in place.
                pass
        stats.old_bytes_before = h1.old_used()

        # -- mark ----------------------------------------------------------
        t_phase = time.perf_counter()
        h2.begin_mark()
        live: set[int] = set()
        queue: deque[int] = deque()

        def note(value: int) -> None:
            space = layout.classify_or_none(value)
            if space is SpaceKind.H2:
                h2.set_used(h2.region_of(value))
            elif space is not None and value not in live:
                live.add(value)
                queue.append(value)

        for value in rt.root_values():
            if value:
                note(value)
        for slot in dict.fromkeys(s for s, _ in rt.backward_stack):
            value = rt.load_word(slot)
            if value and layout.is_h1(value):
                note(value)
        while queue:
            addr = queue.popleft()
            desc = rt.descriptor_of(addr)
            for fi in desc.ref_indexes:
                value = rt.load_word(addr + desc.fields[fi].offset)
                if value:
                    note(value)

        hint_roots = rt.hints.roots()
        hinted = []
        for root in hint_roots:
            if root in live:
                hinted.append(PersistHint(root, cache_word_partition(rt.cache_word_of(root))))
            else:
                rt.hints.drop(root)
        stats.marked_objects = etr_mark_closure(rt, hinted) if hinted else 0
        stats.phase_seconds["mark"] = time.perf_counter() - t_phase

        # -- precompact ------------------------------------------------------
        t_phase = time.perf_counter()
        live_sorted = sorted(live)
        forwarded: dict[int, int] = {}
        marked_list: list[int] = []
        slide_old: list[int] = []
        absorb_young: list[int] = []
        for addr in live_sorted:
            if rt.cache_marked(addr):
                marked_list.append(addr)
            elif layout.is_old(addr):
                slide_old.append(addr)
            else:
                absorb_young.append(addr)
        for addr in marked_list:
            pid = cache_word_partition(rt.cache_word_of(addr))
            forwarded[addr] = h2.allocate_in_region(pid, h1.object_size(addr))
        cursor = h1.old_base
        new_starts: list[int] = []
        for addr in slide_old + absorb_young:
            size = h1.object_size(addr)
            if cursor + size > h1.old_end:
                raise HeapExhaustedError(
                    f"live data ({cursor + size - h1.old_base} bytes) exceeds "
                    f"the old generation ({h1.old_end - h1.old_base} bytes)"
                )
            forwarded[addr] = cursor
            new_starts.append(cursor)
            cursor += size
        for addr in live_sorted:
            desc = rt.descriptor_of(addr)
            for fi in desc.ref_indexes:
                slot = addr + desc.fields[fi].offset
                value = h1.load_word(slot)
                if value in forwarded:
                    h1.store_word(slot, forwarded[value])
        rt.rewrite_roots(forwarded)
        stats.phase_seconds["precompact"] = time.perf_counter() - t_phase

        # -- compact ---------------------------------------------------------
        t_phase = time.perf_counter()
        writer = make_writer(rt)
        moved, bytes_moved = transfer_marked(rt, marked_list, forwarded, writer)
        stats.objects_moved_to_h2 = moved
        stats.bytes_moved_to_h2 = bytes_moved
        stats.h2_flush_ops = writer.flush_ops
        old_top_before = h1.old_top
        for addr in slide_old:
            dest = forwarded[addr]
            if dest != addr:
                h1.write_bytes(dest, h1.read_bytes(addr, h1.object_size(addr)))
        for addr in absorb_young:
            h1.write_bytes(forwarded[addr], h1.read_bytes(addr, h1.object_size(addr)))
        if old_top_before > cursor:
            h1.zero_range(cursor, old_top_before)
        h1.old_top = cursor
        h1.old_starts = new_starts
        h1.reset_young()
        h1.cards.clear_all()
        stats.phase_seconds["compact"] = time.perf_counter() - t_phase

        # -- adjust ----------------------------------------------------------
        t_phase = time.perf_counter()
        for slot in dict.fromkeys(s for s, _ in rt.backward_stack):
            value = rt.load_word(slot)
            if value in forwarded:
                new = forwarded[value]
                rt.store_word(slot, new)
                if layout.is_h2(new):
                    slot_region = h2.region_of(slot)
                    new_region = h2.region_of(new)
                    if slot_region != new_region:
                        h2.merge_groups(slot_region, new_region)
        rt.backward_stack = []
        stats.phase_seconds["adjust"] = time.perf_counter() - t_phase

        stats.regions_freed = h2.reclaim_free_regions()
        rt.hints.remap_after_major(forwarded, layout.is_h2)

        stats.live_objects = len(live)
        stats.old_bytes_after = h1.old_used()
        stats.seconds = time.perf_counter() - t0
        self._account_major(stats)
        return stats

    def _account_major(self, stats: MajorStats) -> None:
        c = self.rt.counters
        c.inc("major_count")
        cf = self.rt.counters_float
        cf["major_seconds"] = cf.get("major_seconds", 0.0) + stats.seconds
        for phase, secs in stats.phase_seconds.items():
            key = f"{phase}_seconds"
            cf[key] = cf.get(key, 0.0) + secs
