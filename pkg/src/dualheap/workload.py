"""Synthetic cache workload: typed object graphs built and replayed from a
line-oriented trace, with three run modes.

  TC  dual heap: persist hints the runtime, objects migrate to H2 at the
      next major collection, accesses read H2 directly.
  SD  single H1 heap with a serialize-on-evict baseline: persisted
      partitions live on-heap until the cached bytes exceed a fraction of
      H1, then the least-recently-used partition is serialized out and
      deserialized back on access.
  MO  single H1 heap sized to hold every partition on-heap.

The observable behavior (the sequence of access checksums) is identical
across modes by construction: graph wiring, access order and mutations are
driven purely by event seeds and traversal order, never by addresses.

Trace grammar: one event per line, ``op key=value ...``; blank lines and
``#`` comments are skipped.

    define_class id=1 scalars=2
    build_partition part=0 family=1 count=200 fanout=2 tfrac=0.25 seed=7
    persist part=0
    access part=0 kind=scan
    access part=0 kind=point seed=3
    mutate part=0 count=5 seed=11
    unpersist part=0
    gc_hint kind=major
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass, replace
from random import Random

from .config import RuntimeConfig
from .errors import TraceError
from .metrics import MetricsReport, REPORT_COLUMNS
from .objmodel import FieldKind, FieldSpec, HEADER_SIZE, WORD_SIZE
from .runtime import Runtime

_MASK64 = 0xFFFFFFFFFFFFFFFF
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")

N_CLASS_VARIANTS = 8


def derive_seed(*parts) -> int:
    """Stable 64-bit seed derivation (independent of PYTHONHASHSEED)."""
    blob = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


# ---------------------------------------------------------------------------
# trace events


@dataclass(frozen=True)
class TraceEvent:
    op: str
    args: dict
    index: int = 0


_EVENT_ARGS = {
    "define_class": {"id": int, "scalars": int},
    "build_partition": {
        "part": int,
        "family": int,
        "count": int,
        "fanout": int,
        "tfrac": float,
        "seed": int,
    },
    "persist": {"part": int},
    "access": {"part": int, "kind": str, "seed": int},
    "mutate": {"part": int, "count": int, "seed": int},
    "unpersist": {"part": int},
    "gc_hint": {"kind": str},
}

_OPTIONAL_ARGS = {"access": {"seed"}}


def parse_trace(text: str) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        op = parts[0]
        if op not in _EVENT_ARGS:
            raise TraceError(f"event {lineno}: unknown op {op!r}")
        spec = _EVENT_ARGS[op]
        optional = _OPTIONAL_ARGS.get(op, set())
        args = {}
        for token in parts[1:]:
            if "=" not in token:
                raise TraceError(f"event {lineno}: malformed token {token!r}")
            key, value = token.split("=", 1)
            if key not in spec:
                raise TraceError(f"event {lineno}: unknown key {key!r} for {op}")
            try:
                args[key] = spec[key](value)
            except ValueError:
                raise TraceError(f"event {lineno}: bad value {value!r} for {key}") from None
        missing = set(spec) - set(args) - optional
        if missing:
            raise TraceError(f"event {lineno}: {op} missing {sorted(missing)}")
        events.append(TraceEvent(op=op, args=args, index=lineno))
    return events


# ---------------------------------------------------------------------------
# trace generation

PROFILES = ("pagerank_like", "cc_like", "uniform")


def generate_trace(profile: str, scale: int, seed: int) -> str:
    """Emit a deterministic trace; identical arguments give identical bytes.

    pagerank_like / cc_like stage partitions in waves, re-access them in
    long "lines" that cross a hinted major collection, and unpersist them
    in lifetime cohorts.  uniform touches every partition equally often
    and keeps transient fractions at zero, which makes it backward-
    reference-sparse.
    """
    if profile not in PROFILES:
        raise TraceError(f"unknown profile {profile!r}")
    if scale < 1:
        raise TraceError("scale must be >= 1")
    rng = Random(derive_seed("trace", profile, scale, seed))
    lines = [f"# profile={profile} scale={scale} seed={seed}"]
    lines.append("define_class id=1 scalars=2")

    def build(part: int, count: int, fanout: int, tfrac: float) -> None:
        lines.append(
            f"build_partition part={part} family=1 count={count} "
            f"fanout={fanout} tfrac={tfrac} seed={rng.randrange(1 << 30)}"
        )
        lines.append(f"persist part={part}")

    def access(part: int, kind: str = "scan") -> None:
        if kind == "point":
            lines.append(f"access part={part} kind=point seed={rng.randrange(1 << 30)}")
        else:
            lines.append(f"access part={part} kind=scan")

    def mutate(part: int, count: int) -> None:
        lines.append(f"mutate part={part} count={count} seed={rng.randrange(1 << 30)}")

    if profile == "uniform":
        n_parts = 2 * scale
        counts = [80 + 40 * (p % 3) for p in range(n_parts)]
        for p in range(n_parts):
            build(p, counts[p], fanout=2, tfrac=0.0)
        lines.append("gc_hint kind=major")
        for _round in range(3):
            for p in range(n_parts):
                access(p)
                mutate(p, 4)
            lines.append("gc_hint kind=minor")
        for p in range(n_parts):
            lines.append(f"unpersist part={p}")
        lines.append("gc_hint kind=major")
        return "\n".join(lines) + "\n"

    groups = max(2, scale)
    per_group = 3 if profile == "pagerank_like" else 2
    repeats = 2 if profile == "pagerank_like" else 1
    # Fully immutable partitions for the pagerank-like profile: transient
    # fields pin their targets in H1 for as long as the cache lives, which
    # would swamp a deliberately tight H1 at high footprint ratios.
    tfrac = 0.0 if profile == "pagerank_like" else 0.25
    parts_of = lambda g: [g * per_group + i for i in range(per_group)]
    for g in range(groups):
        for p in parts_of(g):
            build(p, 120 + 60 * (p % 3), fanout=2, tfrac=tfrac)
            access(p)  # creation-time access
    lines.append("gc_hint kind=major")
    for _it in range(repeats):
        for g in range(groups):
            for p in parts_of(g):
                access(p)
                if profile == "cc_like":
                    access(p)  # paired accesses in quick succession
                if rng.random() < 0.4:
                    mutate(p, 3)
            access(parts_of(g)[0], kind="point")
    # Staged unpersist: groups leave the cache in two cohorts.
    half = groups // 2
    for g in range(half):
        for p in parts_of(g):
            lines.append(f"unpersist part={p}")
    lines.append("gc_hint kind=major")
    for g in range(half, groups):
        for p in parts_of(g):
            access(p)
    for g in range(half, groups):
        for p in parts_of(g):
            lines.append(f"unpersist part={p}")
    lines.append("gc_hint kind=major")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# baseline serializer (SD mode)


class BaselineSerializer:
    """Length-prefixed depth-first encoding of the non-transient closure.

    Record stream: u64 payload length, u64 object count, then one record
    per object in depth-first preorder: u32 class id followed by one entry
    per field in layout order (scalars as raw u64, non-transient reference
    fields as the u64 preorder id of the target, 1-based, 0 for null).
    Transient fields are omitted entirely and read back as null.
    """

    def __init__(self, rt: Runtime) -> None:
        self.rt = rt

    def serialize(self, root: int) -> bytes:
        rt = self.rt
        ids: dict[int, int] = {}
        order: list[int] = []
        stack = [root]
        while stack:
            addr = stack.pop()
            if addr in ids:
                continue
            ids[addr] = len(order) + 1
            order.append(addr)
            desc = rt.descriptor_of(addr)
            children = []
            for fi in desc.ref_indexes:
                fs = desc.fields[fi]
                if fs.transient:
                    continue
                target = rt.load_word(addr + fs.offset)
                if target:
                    children.append(target)
            stack.extend(reversed(children))
        out = bytearray()
        out += _U64.pack(len(order))
        for addr in order:
            desc = rt.descriptor_of(addr)
            out += _U32.pack(desc.class_id)
            for fs in desc.fields:
                value = rt.load_word(addr + fs.offset)
                if fs.kind is FieldKind.SCALAR:
                    out += _U64.pack(value)
                elif not fs.transient:
                    out += _U64.pack(ids.get(value, 0) if value else 0)
        return _U64.pack(len(out)) + bytes(out)

    def deserialize(self, blob: bytes) -> tuple[int, int]:
        """Rebuild the graph; returns (root handle, total instance bytes)."""
        rt = self.rt
        (length,) = _U64.unpack_from(blob, 0)
        if length != len(blob) - 8:
            raise TraceError("corrupt serialized partition")
        pos = 8
        (count,) = _U64.unpack_from(blob, pos)
        pos += 8
        records: list[tuple[int, list[tuple[FieldSpec, int]]]] = []
        for _ in range(count):
            (class_id,) = _U32.unpack_from(blob, pos)
            pos += 4
            desc = rt.registry.get(class_id)
            values: list[tuple[FieldSpec, int]] = []
            for fs in desc.fields:
                if fs.kind is FieldKind.REF and fs.transient:
                    values.append((fs, 0))
                    continue
                (value,) = _U64.unpack_from(blob, pos)
                pos += 8
                values.append((fs, value))
            records.append((class_id, values))
        roster = RootedHandles(rt)
        total = 0
        for class_id, _values in records:
            desc = rt.registry.get(class_id)
            roster.append(rt.allocate(desc))
            total += desc.instance_size
        for i, (class_id, values) in enumerate(records):
            obj = roster.get(i)
            desc = rt.registry.get(class_id)
            for fi, (fs, value) in enumerate(values):
                if fs.kind is FieldKind.SCALAR:
                    rt.write_scalar(obj, fi, value)
                elif not fs.transient and value:
                    rt.write_ref(obj, fi, roster.get(value - 1))
        root = roster.get(0)
        roster.release()
        return root, total


class RootedHandles:
    """A growable list of handles that survives collections.

    Every element is parked in a root slot, so allocation between appends
    may move objects freely; get() always returns the current address.
    """

    def __init__(self, rt: Runtime) -> None:
        self.rt = rt
        self._slots: list[int] = []

    def append(self, handle: int) -> None:
        self._slots.append(self.rt.add_root(handle))

    def get(self, index: int) -> int:
        return self.rt.read_root(self._slots[index])

    def __len__(self) -> int:
        return len(self._slots)

    def release(self) -> None:
        for slot in self._slots:
            self.rt.drop_root(slot)
        self._slots.clear()


# ---------------------------------------------------------------------------
# driver


@dataclass
class _Partition:
    pid: int
    family: int
    footprint: int
    slot_id: int | None
    status: str = "built"  # built | persisted | unpersisted


class TraceDriver:
    def __init__(
        self,
        config: RuntimeConfig,
        mode: str | None = None,
        observer=None,
    ) -> None:
        self.mode = mode or config.mode
        cfg = config.with_mode(self.mode)
        if self.mode == "MO":
            old = cfg.mo_old_size or cfg.h2.size
            cfg = replace(cfg, h1=replace(cfg.h1, old_size=old))
        cfg.validate()
        self.config = cfg
        self.rt = Runtime(cfg)
        self.observer = observer
        if observer is not None:
            self.rt.collection_listener = lambda kind, stats: observer(self, kind, stats)
        self.serializer = BaselineSerializer(self.rt)
        self.families: dict[int, int] = {}
        self._variant_cache: dict[tuple, list] = {}
        self.partitions: dict[int, _Partition] = {}
        # SD state: resident cached partitions in LRU order, evicted blobs.
        self._sd_lru: list[int] = []
        self._sd_blobs: dict[int, bytes] = {}
        self.checksums: list[tuple[int, int]] = []

    def close(self) -> None:
        self.rt.close()

    def __enter__(self) -> "TraceDriver":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- class variants ------------------------------------------------

    def _variants(self, family: int, fanout: int, tfrac: float):
        scalars = self.families[family]
        key = (family, fanout, repr(tfrac))
        cached = self._variant_cache.get(key)
        if cached is not None:
            return cached
        variants = []
        for v in range(N_CLASS_VARIANTS):
            rng = Random(derive_seed("variant", family, fanout, repr(tfrac), v))
            layout: list[FieldSpec] = []
            offset = HEADER_SIZE
            for _ in range(fanout):
                layout.append(
                    FieldSpec(offset, FieldKind.REF, transient=rng.random() < tfrac)
                )
                offset += WORD_SIZE
            for _ in range(scalars):
                layout.append(FieldSpec(offset, FieldKind.SCALAR))
                offset += WORD_SIZE
            variants.append(self.rt.register_class(layout))
        self._variant_cache[key] = variants
        return variants

    # -- event handlers --------------------------------------------------

    def run(self, events: list[TraceEvent]) -> MetricsReport:
        t0 = time.perf_counter()
        handlers = {
            "define_class": self._ev_define_class,
            "build_partition": self._ev_build,
            "persist": self._ev_persist,
            "access": self._ev_access,
            "mutate": self._ev_mutate,
            "unpersist": self._ev_unpersist,
            "gc_hint": self._ev_gc_hint,
        }
        for evt in events:
            try:
                handlers[evt.op](evt)
            except TraceError:
                raise
            except KeyError as exc:
                raise TraceError(f"event {evt.index}: missing entity {exc}") from exc
        return self._report(time.perf_counter() - t0)

    def _fail(self, evt: TraceEvent, message: str) -> TraceError:
        return TraceError(f"event {evt.index}: {message}")

    def _ev_define_class(self, evt: TraceEvent) -> None:
        fam = evt.args["id"]
        if fam in self.families:
            raise self._fail(evt, f"family {fam} already defined")
        if evt.args["scalars"] < 1:
            raise self._fail(evt, "family needs at least one scalar field")
        self.families[fam] = evt.args["scalars"]

    def _ev_build(self, evt: TraceEvent) -> None:
        a = evt.args
        pid = a["part"]
        if pid in self.partitions:
            raise self._fail(evt, f"partition {pid} already built")
        if a["family"] not in self.families:
            raise self._fail(evt, f"family {a['family']} not defined")
        if a["count"] < 1:
            raise self._fail(evt, "count must be >= 1")
        variants = self._variants(a["family"], a["fanout"], a["tfrac"])
        rng = Random(derive_seed("build", pid, a["seed"]))
        roster = RootedHandles(self.rt)
        footprint = 0
        for i in range(a["count"]):
            desc = variants[rng.randrange(len(variants))]
            handle = self.rt.allocate(desc)
            roster.append(handle)
            footprint += desc.instance_size
            for k, si in enumerate(desc.scalar_indexes):
                self.rt.write_scalar(handle, si, derive_seed("tag", pid, i, k))
        count = a["count"]
        for i in range(count):
            obj = roster.get(i)
            desc = self.rt.descriptor_of(obj)
            for j, fi in enumerate(desc.ref_indexes):
                if j == 0 and i + 1 < count:
                    target_index = i + 1  # spine keeps the graph connected
                else:
                    target_index = rng.randrange(count)
                self.rt.write_ref(obj, fi, roster.get(target_index))
        slot = self.rt.add_root(roster.get(0))
        roster.release()
        self.partitions[pid] = _Partition(pid, a["family"], footprint, slot)

    def _partition(self, evt: TraceEvent, pid: int) -> _Partition:
        part = self.partitions.get(pid)
        if part is None:
            raise self._fail(evt, f"partition {pid} not built")
        if part.status == "unpersisted":
            raise self._fail(evt, f"partition {pid} was unpersisted")
        return part

    def _root_of(self, part: _Partition) -> int:
        return self.rt.read_root(part.slot_id)

    def _ev_persist(self, evt: TraceEvent) -> None:
        part = self._partition(evt, evt.args["part"])
        if self.mode == "TC":
            self.rt.persist(self._root_of(part), part.pid)
        elif self.mode == "SD":
            if part.pid not in self._sd_lru and part.pid not in self._sd_blobs:
                self._sd_lru.append(part.pid)
                self._sd_enforce_capacity(protect=part.pid)
            else:
                self._sd_touch(part.pid)
        part.status = "persisted"

    # -- SD cache management ----------------------------------------------

    def _sd_touch(self, pid: int) -> None:
        if pid in self._sd_lru:
            self._sd_lru.remove(pid)
            self._sd_lru.append(pid)

    def _sd_capacity(self) -> int:
        h1 = self.config.h1
        return int((h1.young_size + h1.old_size) * self.config.sd.cache_fraction)

    def _sd_cached_bytes(self) -> int:
        return sum(self.partitions[p].footprint for p in self._sd_lru)

    def _sd_enforce_capacity(self, protect: int | None = None) -> None:
        cap = self._sd_capacity()
        while self._sd_cached_bytes() > cap:
            victim = next((p for p in self._sd_lru if p != protect), None)
            if victim is None:
                break
            self._sd_evict(victim)

    def _sd_evict(self, pid: int) -> None:
        part = self.partitions[pid]
        blob = self.serializer.serialize(self._root_of(part))
        self._sd_blobs[pid] = blob
        self.rt.counters.inc("bytes_serialized", len(blob))
        self.rt.counters.inc("evictions")
        self.rt.drop_root(part.slot_id)
        part.slot_id = None
        self._sd_lru.remove(pid)

    def _sd_ensure_resident(self, part: _Partition) -> None:
        if part.pid not in self._sd_blobs:
            self._sd_touch(part.pid)
            return
        blob = self._sd_blobs.pop(part.pid)
        root, total = self.serializer.deserialize(blob)
        self.rt.counters.inc("bytes_deserialized", len(blob))
        part.slot_id = self.rt.add_root(root)
        part.footprint = total
        self._sd_lru.append(part.pid)
        self._sd_enforce_capacity(protect=part.pid)

    # -- access / mutate ----------------------------------------------------

    def _traverse(self, part: _Partition) -> tuple[list[int], int]:
        """Objects reachable over non-transient references, in a
        deterministic breadth-first order, with their scalar checksum."""
        rt = self.rt
        root = self._root_of(part)
        seen = {root}
        order = [root]
        checksum = 0
        i = 0
        while i < len(order):
            addr = order[i]
            i += 1
            desc = rt.descriptor_of(addr)
            for si in desc.scalar_indexes:
                checksum = (checksum + rt.load_word(addr + desc.fields[si].offset)) & _MASK64
            for fi in desc.ref_indexes:
                fs = desc.fields[fi]
                if fs.transient:
                    continue
                target = rt.load_word(addr + fs.offset)
                if target and target not in seen:
                    seen.add(target)
                    order.append(target)
        checksum = (checksum * 0x100000001B3 + len(order)) & _MASK64
        return order, checksum

    def _object_checksum(self, addr: int) -> int:
        return sum(self.rt.scalar_values(addr)) & _MASK64

    def _ev_access(self, evt: TraceEvent) -> None:
        part = self._partition(evt, evt.args["part"])
        kind = evt.args["kind"]
        if kind not in ("scan", "point"):
            raise self._fail(evt, f"unknown access kind {kind!r}")
        if self.mode == "SD":
            self._sd_ensure_resident(part)
        order, checksum = self._traverse(part)
        if kind == "point":
            rng = Random(derive_seed("point", part.pid, evt.args.get("seed", 0)))
            checksum = self._object_checksum(order[rng.randrange(len(order))])
        self.checksums.append((evt.index, checksum))

    def _ev_mutate(self, evt: TraceEvent) -> None:
        part = self._partition(evt, evt.args["part"])
        if self.mode == "SD":
            self._sd_ensure_resident(part)
        order, _ = self._traverse(part)
        rng = Random(derive_seed("mutate", part.pid, evt.args["seed"]))
        for k in range(evt.args["count"]):
            addr = order[rng.randrange(len(order))]
            desc = self.rt.descriptor_of(addr)
            index = desc.scalar_indexes[-1]
            value = self.rt.read_scalar(addr, index)
            delta = derive_seed("delta", evt.args["seed"], k)
            self.rt.write_scalar(addr, index, (value + delta) & _MASK64)

    def _ev_unpersist(self, evt: TraceEvent) -> None:
        pid = evt.args["part"]
        part = self.partitions.get(pid)
        if part is None or part.status != "persisted":
            return  # unpersisting uncached data is a framework no-op
        if self.mode == "TC":
            self.rt.unpersist(pid)
        elif self.mode == "SD":
            if pid in self._sd_blobs:
                del self._sd_blobs[pid]
            if pid in self._sd_lru:
                self._sd_lru.remove(pid)
            if part.slot_id is not None:
                self.rt.drop_root(part.slot_id)
        else:
            self.rt.drop_root(part.slot_id)
        part.slot_id = None
        part.status = "unpersisted"

    def _ev_gc_hint(self, evt: TraceEvent) -> None:
        kind = evt.args["kind"]
        if kind == "minor":
            self.rt.minor_collect()
        elif kind == "major":
            self.rt.major_collect()
        else:
            raise self._fail(evt, f"unknown gc kind {kind!r}")

    # -- reporting -----------------------------------------------------------

    def _report(self, wall: float) -> MetricsReport:
        digest = hashlib.sha256(repr(self.checksums).encode()).hexdigest()[:16]
        counters = dict(self.rt.counters.to_dict())
        for key, value in self.rt.counters_float.items():
            counters[key] = value
        counters["h2_boundary_dirty"] = self.rt.h2.cards.count_dirty_boundary()
        report = MetricsReport(
            run_id=f"{self.mode.lower()}-{self.config.seed}",
            config_hash=self.config.config_hash(),
            mode=self.mode,
            seed=self.config.seed,
            wall_seconds=wall,
            counters={k: counters.get(k, 0) for k in REPORT_COLUMNS if k not in
                      ("run_id", "config_hash", "mode", "seed", "wall_seconds", "checksum_digest")},
            checksums=list(self.checksums),
            checksum_digest=digest,
        )
        return report


def run_trace(
    trace: str | list[TraceEvent],
    mode: str,
    config: RuntimeConfig,
    observer=None,
) -> MetricsReport:
    events = parse_trace(trace) if isinstance(trace, str) else trace
    with TraceDriver(config, mode=mode, observer=observer) as driver:
        return driver.run(events)
