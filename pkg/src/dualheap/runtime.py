"""The application-facing heap runtime.

One `Runtime` owns both heaps, the class registry, the mutator root set
and the collector.  All object access goes through handles, which are
plain integer addresses in a combined address space:

    [young generation][old generation] ... gap ... [H2 regions]

Loads and stores resolve the backing buffer with a single range check, so
H1 and H2 objects share one code path and no lookup or translation step.

The post-write barrier after every reference store performs one range
classification and at most one card-byte store: writes into old-generation
objects dirty the old-to-young card when the stored value is young, and
writes into H2 objects dirty the H2 card unconditionally.  Scalar stores
to H2 dirty the card as well by default (the barrier does not inspect the
slot kind); the subsequent scan finds no backward reference there and
cleans the card.

Collections are stop-the-world: no mutator call may overlap a collection.
The runtime is single-mutator; the barrier itself is idempotent byte
stores and would tolerate more, but multi-mutator runs are out of scope.
"""

from __future__ import annotations

import mmap
import struct

from .collector import Collector, PromotionOverflowError
from .config import RuntimeConfig
from .errors import (
    HeapExhaustedError,
    InvalidFieldError,
    InvalidHandleError,
    InvalidSlotError,
)
from .h1 import H1Heap
from .h2 import H2Heap
from .metrics import Counters, MajorStats, MinorStats
from .migration import HintRegistry
from .migration import persist as _persist
from .migration import unpersist as _unpersist
from .objmodel import (
    HEADER_SIZE,
    ClassDescriptor,
    ClassRegistry,
    FieldKind,
    FieldSpec,
    HeapLayout,
    SpaceKind,
    cache_word,
    cache_word_marked,
    class_age_word,
    word_class_id,
)

_U64 = struct.Struct("<Q")

H1_BASE = 1 << 16
_MIB = 1 << 20


def build_layout(cfg: RuntimeConfig) -> HeapLayout:
    young_base = H1_BASE
    young_end = young_base + cfg.h1.young_size
    old_base = young_end
    old_end = old_base + cfg.h1.old_size
    # Leave at least one MiB of unmapped addresses before H2 so one-past-end
    # H1 addresses can never be mistaken for the H2 base.
    h2_base = ((old_end // _MIB) + 2) * _MIB
    return HeapLayout(
        young_base=young_base,
        young_end=young_end,
        old_base=old_base,
        old_end=old_end,
        h2_base=h2_base,
        h2_end=h2_base + cfg.h2.size,
    )


class Runtime:
    def __init__(self, config: RuntimeConfig) -> None:
        config.validate()
        self.config = config
        self.layout = build_layout(config)
        self.registry = ClassRegistry()
        self.counters = Counters()
        self.counters_float: dict[str, float] = {}

        self._h1_buf = mmap.mmap(-1, config.h1.young_size + config.h1.old_size)
        self.h1 = H1Heap(self.layout, self._h1_buf, config.h1, self.registry)
        self.h2 = H2Heap(self.layout, config.h2, self.registry, self.counters)

        self._roots: dict[int, int] = {}
        self._root_tags: dict[int, int] = {}
        self._next_slot = 1

        self.hints = HintRegistry()
        self.backward_stack: list[tuple[int, int]] = []
        self.collector = Collector(self)
        # Optional callback fired after every top-level collection:
        # listener(kind, stats) with kind in {"minor", "major"}.
        self.collection_listener = None

    def close(self) -> None:
        self.h2.close()
        self._h1_buf.close()

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------------
    # word access: one range check resolves either heap

    def load_word(self, addr: int) -> int:
        if self.layout.young_base <= addr < self.layout.old_end:
            return _U64.unpack_from(self._h1_buf, addr - self.layout.young_base)[0]
        if self.layout.h2_base <= addr < self.layout.h2_end:
            return _U64.unpack_from(self.h2.buf, addr - self.layout.h2_base)[0]
        raise InvalidHandleError(f"address {addr:#x} outside all heap spaces")

    def store_word(self, addr: int, value: int) -> None:
        if self.layout.young_base <= addr < self.layout.old_end:
            _U64.pack_into(self._h1_buf, addr - self.layout.young_base, value)
            return
        if self.layout.h2_base <= addr < self.layout.h2_end:
            _U64.pack_into(self.h2.buf, addr - self.layout.h2_base, value)
            return
        raise InvalidHandleError(f"address {addr:#x} outside all heap spaces")

    # ------------------------------------------------------------------
    # headers

    def descriptor_of(self, addr: int) -> ClassDescriptor:
        return self.registry.get(word_class_id(self.load_word(addr)))

    def cache_word_of(self, addr: int) -> int:
        return self.load_word(addr + 8)

    def cache_marked(self, addr: int) -> bool:
        return cache_word_marked(self.load_word(addr + 8))

    def set_cache_mark(self, addr: int, partition_id: int) -> None:
        self.store_word(addr + 8, cache_word(True, partition_id))

    def clear_cache_mark(self, addr: int) -> None:
        self.store_word(addr + 8, 0)

    # ------------------------------------------------------------------
    # classes and allocation

    def register_class(self, layout: list[FieldSpec]) -> ClassDescriptor:
        return self.registry.register(layout)

    def classify_handle(self, handle: int) -> SpaceKind:
        return self.layout.classify(handle)

    def allocate(self, desc: ClassDescriptor | int) -> int:
        if isinstance(desc, int):
            desc = self.registry.get(desc)
        size = desc.instance_size
        if size > self.h1.eden_size:
            raise HeapExhaustedError(
                f"object of {size} bytes can never fit eden ({self.h1.eden_size} bytes)"
            )
        addr = self.h1.alloc_eden(size)
        if addr is None:
            self.minor_collect()
            addr = self.h1.alloc_eden(size)
        if addr is None:
            self.major_collect()
            addr = self.h1.alloc_eden(size)
        if addr is None:
            raise HeapExhaustedError(f"cannot allocate {size} bytes")
        # Eden memory is zeroed at reset, so only the class word needs a store.
        self.h1.store_word(addr, class_age_word(desc.class_id, 0))
        self.counters.inc("alloc_objects")
        self.counters.inc("alloc_bytes", size)
        self.counters.inc("mutator_steps")
        return addr

    # ------------------------------------------------------------------
    # field access with the post-write barrier

    def _field(self, obj: int, index: int, kind: FieldKind) -> FieldSpec:
        if not obj:
            raise InvalidHandleError("null handle")
        desc = self.descriptor_of(obj)
        if index < 0 or index >= len(desc.fields):
            raise InvalidFieldError(f"field index {index} out of range")
        fs = desc.fields[index]
        if fs.kind is not kind:
            raise InvalidFieldError(f"field {index} is {fs.kind.value}, expected {kind.value}")
        return fs

    def write_ref(self, obj: int, index: int, target: int | None) -> None:
        fs = self._field(obj, index, FieldKind.REF)
        value = target or 0
        if value:
            self.layout.classify(value)  # reject bogus targets early
        self.store_word(obj + fs.offset, value)
        self.counters.inc("mutator_steps")
        space = self.layout.classify(obj)
        if space is SpaceKind.H2:
            self.h2.dirty_card(obj)
            self.counters.inc("barrier_h2_hits")
            # A cross-region store inside H2 ties the two regions' fates
            # together; without the group merge the target's group could be
            # reclaimed while this region still points into it.
            if value and self.layout.is_h2(value):
                src = self.h2.region_of(obj)
                dst = self.h2.region_of(value)
                if src != dst:
                    self.h2.merge_groups(src, dst)
        elif space is SpaceKind.H1_OLD and value and self.layout.is_young(value):
            self.h1.cards.dirty(obj)
            self.counters.inc("barrier_h1_hits")

    def write_scalar(self, obj: int, index: int, value: int) -> None:
        fs = self._field(obj, index, FieldKind.SCALAR)
        self.store_word(obj + fs.offset, value & 0xFFFFFFFFFFFFFFFF)
        self.counters.inc("mutator_steps")
        if self.layout.is_h2(obj) and self.config.h2.scalar_writes_dirty:
            self.h2.dirty_card(obj)
            self.counters.inc("barrier_h2_hits")

    def read_ref(self, obj: int, index: int) -> int | None:
        fs = self._field(obj, index, FieldKind.REF)
        self.counters.inc("mutator_steps")
        value = self.load_word(obj + fs.offset)
        return value or None

    def read_scalar(self, obj: int, index: int) -> int:
        fs = self._field(obj, index, FieldKind.SCALAR)
        self.counters.inc("mutator_steps")
        return self.load_word(obj + fs.offset)

    # ------------------------------------------------------------------
    # roots

    def add_root(self, handle: int | None) -> int:
        if handle:
            self.layout.classify(handle)
        slot_id = self._next_slot
        self._next_slot += 1
        self._roots[slot_id] = handle or 0
        return slot_id

    def read_root(self, slot_id: int) -> int:
        try:
            return self._roots[slot_id]
        except KeyError:
            raise InvalidSlotError(f"unknown root slot {slot_id}") from None

    def drop_root(self, slot_id: int) -> None:
        if slot_id not in self._roots:
            raise InvalidSlotError(f"unknown root slot {slot_id}")
        del self._roots[slot_id]
        self._root_tags.pop(slot_id, None)

    def root_values(self):
        return list(self._roots.values())

    def rewrite_roots(self, forwarded: dict[int, int]) -> None:
        for slot_id, value in self._roots.items():
            if value in forwarded:
                self._roots[slot_id] = forwarded[value]

    def tag_root_slots(self, handle: int, partition_id: int) -> None:
        for slot_id, value in self._roots.items():
            if value == handle:
                self._root_tags[slot_id] = partition_id

    def slots_tagged(self, partition_id: int) -> list[int]:
        return [s for s, p in self._root_tags.items() if p == partition_id]

    # ------------------------------------------------------------------
    # cache migration hooks

    def persist(self, root: int, partition_id: int) -> None:
        _persist(self, root, partition_id)

    def unpersist(self, partition_id: int) -> None:
        _unpersist(self, partition_id)

    # ------------------------------------------------------------------
    # collections

    def minor_collect(self) -> MinorStats:
        try:
            stats = self.collector.minor()
        except PromotionOverflowError:
            major = self.collector.major(skip_minor=True)
            stats = MinorStats(index=self.collector.minor_index, escalated_to_major=True)
            if self.collection_listener:
                self.collection_listener("major", major)
            return stats
        if self.collection_listener:
            self.collection_listener("minor", stats)
        return stats

    def major_collect(self) -> MajorStats:
        stats = self.collector.major()
        if self.collection_listener:
            self.collection_listener("major", stats)
        return stats

    # ------------------------------------------------------------------
    # inspection (used by the harness and the test oracles)

    def iter_h1_objects(self):
        yield from self.h1.iter_young_objects()
        yield from self.h1.iter_old_objects()

    def iter_h2_objects(self):
        for region in self.h2.allocated_regions():
            yield from self.h2.iter_region_objects(region)

    def scalar_values(self, addr: int) -> tuple[int, ...]:
        desc = self.descriptor_of(addr)
        return tuple(
            self.load_word(addr + desc.fields[i].offset) for i in desc.scalar_indexes
        )
