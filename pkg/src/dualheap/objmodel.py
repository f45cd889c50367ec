"""Object layout, class descriptors and the header words.

Every object starts with a 16-byte header of two little-endian 64-bit words:

  word 0   bit 0        reserved for a forwarding flag (must read 0 in a
                        parseable header; collection phases that relocate
                        objects keep forwarding information in side maps)
           bits 1..8    age, the number of minor collections survived
           bits 32..63  class id
  word 1   bit 0        cache-candidate mark
           bits 1..62   partition id (valid only while the mark is set)

Fields follow the header as 8-byte slots.  A field is either a reference
(holds an object address or 0 for null) or a scalar (an uninterpreted
64-bit word).  Reference fields may carry a transient flag: such fields are
excluded from cache-closure marking and from the baseline serializer, and
survive cache migration as plain cross-heap references.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import InvalidHandleError, LayoutError

WORD_SIZE = 8
HEADER_SIZE = 16

_AGE_MAX = 0xFF
_CLASS_ID_MAX = 0xFFFFFFFF


class FieldKind(enum.Enum):
    REF = "reference"
    SCALAR = "scalar"


@dataclass(frozen=True)
class FieldSpec:
    """One 8-byte field slot: byte offset from the object start, kind, flags."""

    offset: int
    kind: FieldKind
    transient: bool = False


@dataclass(frozen=True)
class ClassDescriptor:
    class_id: int
    fields: tuple[FieldSpec, ...]
    instance_size: int
    # Precomputed index lists so the hot paths never filter.
    ref_indexes: tuple[int, ...] = field(default=(), compare=False)
    scalar_indexes: tuple[int, ...] = field(default=(), compare=False)


class ClassRegistry:
    """Registers immutable class descriptors and resolves them by id."""

    def __init__(self) -> None:
        self._by_id: dict[int, ClassDescriptor] = {}
        self._next_id = 1

    def register(self, layout: list[FieldSpec] | tuple[FieldSpec, ...]) -> ClassDescriptor:
        fields = tuple(layout)
        instance_size = HEADER_SIZE + WORD_SIZE * len(fields)
        seen: set[int] = set()
        for fs in fields:
            if fs.offset % WORD_SIZE != 0:
                raise LayoutError(f"field offset {fs.offset} is not 8-byte aligned")
            if fs.offset < HEADER_SIZE or fs.offset + WORD_SIZE > instance_size:
                raise LayoutError(
                    f"field offset {fs.offset} outside object body "
                    f"[{HEADER_SIZE}, {instance_size})"
                )
            if fs.offset in seen:
                raise LayoutError(f"overlapping fields at offset {fs.offset}")
            seen.add(fs.offset)
            if fs.transient and fs.kind is not FieldKind.REF:
                raise LayoutError("transient flag is only meaningful on reference fields")
        class_id = self._next_id
        if class_id > _CLASS_ID_MAX:
            raise LayoutError("class id space exhausted")
        self._next_id += 1
        desc = ClassDescriptor(
            class_id=class_id,
            fields=fields,
            instance_size=instance_size,
            ref_indexes=tuple(i for i, f in enumerate(fields) if f.kind is FieldKind.REF),
            scalar_indexes=tuple(i for i, f in enumerate(fields) if f.kind is FieldKind.SCALAR),
        )
        self._by_id[class_id] = desc
        return desc

    def get(self, class_id: int) -> ClassDescriptor:
        return self._by_id[class_id]

    def maybe_get(self, class_id: int) -> ClassDescriptor | None:
        return self._by_id.get(class_id)

    def __len__(self) -> int:
        return len(self._by_id)


class SpaceKind(enum.Enum):
    H1_YOUNG = "h1-young"
    H1_OLD = "h1-old"
    H2 = "h2"


@dataclass(frozen=True)
class HeapLayout:
    """Address-range map of the combined heap: H1 young, H1 old, then H2.

    A gap separates the end of the old generation from the H2 base so that
    one-past-the-end H1 addresses never alias the first H2 address.
    """

    young_base: int
    young_end: int
    old_base: int
    old_end: int
    h2_base: int
    h2_end: int

    def classify(self, addr: int) -> SpaceKind:
        if self.young_base <= addr < self.young_end:
            return SpaceKind.H1_YOUNG
        if self.old_base <= addr < self.old_end:
            return SpaceKind.H1_OLD
        if self.h2_base <= addr < self.h2_end:
            return SpaceKind.H2
        raise InvalidHandleError(f"address {addr:#x} outside all heap spaces")

    def classify_or_none(self, addr: int) -> SpaceKind | None:
        if self.young_base <= addr < self.young_end:
            return SpaceKind.H1_YOUNG
        if self.old_base <= addr < self.old_end:
            return SpaceKind.H1_OLD
        if self.h2_base <= addr < self.h2_end:
            return SpaceKind.H2
        return None

    def is_h1(self, addr: int) -> bool:
        return self.young_base <= addr < self.old_end and not self.young_end <= addr < self.old_base

    def is_young(self, addr: int) -> bool:
        return self.young_base <= addr < self.young_end

    def is_old(self, addr: int) -> bool:
        return self.old_base <= addr < self.old_end

    def is_h2(self, addr: int) -> bool:
        return self.h2_base <= addr < self.h2_end


# ---------------------------------------------------------------------------
# Header word codecs.  All functions are pure int -> int so both heaps and the
# tests can share them without touching buffers.

def class_age_word(class_id: int, age: int) -> int:
    return (class_id << 32) | ((age & _AGE_MAX) << 1)


def word_class_id(word: int) -> int:
    return (word >> 32) & _CLASS_ID_MAX


def word_age(word: int) -> int:
    return (word >> 1) & _AGE_MAX


def bump_age(word: int) -> int:
    age = word_age(word)
    if age < _AGE_MAX:
        age += 1
    return class_age_word(word_class_id(word), age)


def cache_word(marked: bool, partition_id: int = 0) -> int:
    if not marked:
        return 0
    return (partition_id << 1) | 1


def cache_word_marked(word: int) -> bool:
    return bool(word & 1)


def cache_word_partition(word: int) -> int:
    return word >> 1
