"""Class universe and the panoptic-part label model.

A :class:`ClassTaxonomy` says which semantic classes are stuff or things,
which of them are partitionable, and which grouped part classes each
partitionable class uses. Grouped parts (one shared "window" for cars and
buses, say) are what a part predictor emits; class-specific part ids are the
1-based position of a group inside ``class_parts[c]``.

Labels are triples ``(semantic, instance, part)`` packed into uint32 as
``s << 24 | id << 8 | p``. The packed value 0 is VOID.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple

import numpy as np

from jppf.errors import FieldOverflow, InputError, InvalidTaxonomy, UnknownGroupForClass

SEMANTIC_BITS = 8
INSTANCE_BITS = 16
PART_BITS = 8
MAX_SEMANTIC = (1 << SEMANTIC_BITS) - 1
MAX_INSTANCE = (1 << INSTANCE_BITS) - 1
MAX_PART = (1 << PART_BITS) - 1

VOID_VALUE = 0


@dataclass(frozen=True)
class ClassTaxonomy:
    """Immutable description of the classes and their parts.

    ``part_groups[0]`` is the generic background group: the part channel that
    covers every pixel not belonging to a partitionable class.
    """

    stuff_classes: tuple[int, ...]
    thing_classes: tuple[int, ...]
    part_groups: tuple[int, ...]
    class_parts: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    names: Mapping[int, str] = field(default_factory=dict)
    part_names: Mapping[int, str] = field(default_factory=dict)

    @property
    def partitionable(self) -> tuple[int, ...]:
        return tuple(self.class_parts)

    @property
    def semantic_classes(self) -> tuple[int, ...]:
        """Channel order of the semantic logits: stuff first, then things."""
        return self.stuff_classes + self.thing_classes

    @property
    def background_group(self) -> int:
        return self.part_groups[0]

    @property
    def num_part_groups(self) -> int:
        """C_p, the number of grouped part classes (background excluded)."""
        return len(self.part_groups) - 1

    def is_stuff(self, c: int) -> bool:
        return c in self.stuff_classes

    def is_thing(self, c: int) -> bool:
        return c in self.thing_classes

    def is_partitionable(self, c: int) -> bool:
        return c in self.class_parts

    def num_parts(self, c: int) -> int:
        return len(self.class_parts.get(c, ()))

    def semantic_channel(self, c: int) -> int:
        return self.semantic_classes.index(c)

    def part_channel(self, group: int) -> int:
        return self.part_groups.index(group)

    def name(self, c: int) -> str:
        return self.names.get(c, str(c))

    def ungroup_part(self, semantic: int, group: int) -> int:
        return ungroup_part(self, semantic, group)

    def regroup_part(self, semantic: int, part: int) -> int:
        return regroup_part(self, semantic, part)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ClassTaxonomy:
        """Build a taxonomy from the JSON layout; no validation is done here."""
        names: dict[int, str] = {}
        class_parts: dict[int, tuple[int, ...]] = {}
        stuff, things = [], []
        for kind, out in (("stuff", stuff), ("things", things)):
            for entry in data.get(kind, []):
                cid = int(entry["id"])
                out.append(cid)
                if "name" in entry:
                    names[cid] = str(entry["name"])
                parts = entry.get("parts") or []
                if parts:
                    class_parts[cid] = tuple(int(g) for g in parts)
        groups = data.get("part_groups", [])
        return cls(
            stuff_classes=tuple(stuff),
            thing_classes=tuple(things),
            part_groups=tuple(int(g["id"]) for g in groups),
            class_parts=class_parts,
            names=names,
            part_names={int(g["id"]): str(g.get("name", g["id"])) for g in groups},
        )

    def to_dict(self) -> dict[str, Any]:
        def entry(c: int, with_parts: bool) -> dict[str, Any]:
            out: dict[str, Any] = {"id": c, "name": self.name(c)}
            if with_parts or c in self.class_parts:
                out["parts"] = list(self.class_parts.get(c, ()))
            return out

        return {
            "stuff": [entry(c, False) for c in self.stuff_classes],
            "things": [entry(c, True) for c in self.thing_classes],
            "part_groups": [
                {"id": g, "name": self.part_names.get(g, str(g))} for g in self.part_groups
            ],
        }


def load_taxonomy(source: str | Path | Mapping[str, Any], validate: bool = True) -> ClassTaxonomy:
    """Load a taxonomy from a JSON path, a built-in name ("cpp", "ppp") or a dict."""
    if isinstance(source, Mapping):
        data = source
    elif str(source) in BUILTIN_TAXONOMIES:
        text = resources.files("jppf.configs").joinpath(f"{source}.json").read_text("utf-8")
        data = json.loads(text)
    else:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    t = ClassTaxonomy.from_dict(data)
    if validate:
        problems = validate_taxonomy(t)
        if problems:
            raise InvalidTaxonomy("; ".join(problems))
    return t


BUILTIN_TAXONOMIES = ("cpp", "ppp")


def validate_taxonomy(t: ClassTaxonomy) -> list[str]:
    """Return one message per broken taxonomy rule; an empty list means valid."""
    out = []
    stuff, things = list(t.stuff_classes), list(t.thing_classes)
    for kind, ids in (("stuff_classes", stuff), ("thing_classes", things)):
        dupes = sorted({c for c in ids if ids.count(c) > 1})
        if dupes:
            out.append(f"{kind}: duplicate class ids {dupes}")
    both = sorted(set(stuff) & set(things))
    if both:
        out.append(f"stuff_classes/thing_classes: ids {both} are both stuff and thing")
    if not stuff:
        out.append("stuff_classes: at least one stuff class is required")
    for c in stuff + things:
        if c == 0:
            out.append("names: class id 0 is reserved (packs to the VOID value)")
        elif not 0 < c <= MAX_SEMANTIC:
            out.append(f"names: class id {c} outside 1..{MAX_SEMANTIC}")

    groups = list(t.part_groups)
    if not groups:
        out.append("part_groups: the background group is required at index 0")
    dupes = sorted({g for g in groups if groups.count(g) > 1})
    if dupes:
        out.append(f"part_groups: duplicate group ids {dupes}")
    if any(g < 0 for g in groups):
        out.append("part_groups: ids must be non-negative")
    background = groups[0] if groups else None

    declared = set(stuff) | set(things)
    for c, parts in t.class_parts.items():
        if c not in declared:
            out.append(f"class_parts[{c}]: class is not declared")
        if not parts:
            out.append(f"class_parts[{c}]: a partitionable class needs at least one part")
        if len(parts) > MAX_PART:
            out.append(f"class_parts[{c}]: more than {MAX_PART} parts")
        if len(set(parts)) != len(parts):
            out.append(f"class_parts[{c}]: repeated part group")
        if background is not None and background in parts:
            out.append(f"class_parts[{c}]: references the background group {background}")
        unknown = sorted(set(parts) - set(groups))
        if unknown:
            out.append(f"class_parts[{c}]: unknown part groups {unknown}")
    return out


def ungroup_part(t: ClassTaxonomy, semantic: int, group: int) -> int:
    """Map a grouped part to the class-specific part id (1-based)."""
    parts = t.class_parts.get(semantic, ())
    try:
        return parts.index(group) + 1
    except ValueError:
        raise UnknownGroupForClass(
            f"part group {group} is not a part of class {semantic}"
        ) from None


def regroup_part(t: ClassTaxonomy, semantic: int, part: int) -> int:
    parts = t.class_parts.get(semantic, ())
    if not 1 <= part <= len(parts):
        raise UnknownGroupForClass(f"class {semantic} has no part {part}")
    return parts[part - 1]


class PanopticPartLabel(NamedTuple):
    semantic: int
    instance: int = 0
    part: int = 0


class _Void:
    __slots__ = ()

    def __repr__(self) -> str:
        return "VOID"

    def __reduce__(self) -> str:
        return "VOID"


VOID = _Void()


def encode_label(label: PanopticPartLabel | _Void) -> int:
    if label is VOID:
        return VOID_VALUE
    s, i, p = (int(v) for v in label)  # type: ignore[union-attr]
    for what, v, hi in (("semantic", s, MAX_SEMANTIC), ("instance", i, MAX_INSTANCE), ("part", p, MAX_PART)):
        if not 0 <= v <= hi:
            raise FieldOverflow(f"{what}={v} does not fit in 0..{hi}")
    if s == i == p == 0:
        raise InputError("(0, 0, 0) is indistinguishable from VOID")
    return (s << 24) | (i << 8) | p


def decode_label(value: int) -> PanopticPartLabel | _Void:
    value = int(value)
    if not 0 <= value <= 0xFFFFFFFF:
        raise FieldOverflow(f"{value} is not an unsigned 32-bit value")
    if value == VOID_VALUE:
        return VOID
    return PanopticPartLabel(value >> 24, (value >> 8) & MAX_INSTANCE, value & MAX_PART)


def encode_array(semantic, instance, part) -> np.ndarray:
    """Vectorised :func:`encode_label`; does not special-case VOID."""
    s = np.asarray(semantic, dtype=np.int64)
    i = np.asarray(instance, dtype=np.int64)
    p = np.asarray(part, dtype=np.int64)
    for what, v, hi in (("semantic", s, MAX_SEMANTIC), ("instance", i, MAX_INSTANCE), ("part", p, MAX_PART)):
        if v.size and (v.min() < 0 or v.max() > hi):
            raise FieldOverflow(f"{what} values must lie in 0..{hi}")
    return ((s << 24) | (i << 8) | p).astype(np.uint32)


def label_violations(label: PanopticPartLabel | _Void, t: ClassTaxonomy) -> list[str]:
    """Consistency problems of a single label; VOID is always consistent."""
    if label is VOID:
        return []
    s, i, p = label  # type: ignore[misc]
    out = []
    if s not in t.stuff_classes and s not in t.thing_classes:
        out.append(f"semantic {s} is not a declared class")
    if i != 0 and s not in t.thing_classes:
        out.append(f"instance id {i} on non-thing class {s}")
    if p != 0:
        if s not in t.class_parts:
            out.append(f"part {p} on non-partitionable class {s}")
        elif not 1 <= p <= len(t.class_parts[s]):
            out.append(f"part {p} out of range for class {s}")
    return out


@dataclass(frozen=True, eq=False)
class PanopticPartMap:
    """Per-pixel packed labels (uint32, H x W); 0 marks VOID."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise InputError(f"label map must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "labels", arr.astype(np.uint32, copy=False))

    @classmethod
    def from_components(cls, semantic, instance, part, void=None) -> PanopticPartMap:
        labels = encode_array(semantic, instance, part)
        if void is not None:
            labels = np.where(void, np.uint32(VOID_VALUE), labels)
        return cls(labels)

    @classmethod
    def void(cls, height: int, width: int) -> PanopticPartMap:
        return cls(np.zeros((height, width), np.uint32))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape  # type: ignore[return-value]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def semantic(self) -> np.ndarray:
        return (self.labels >> 24).astype(np.int64)

    @property
    def instance(self) -> np.ndarray:
        return ((self.labels >> 8) & MAX_INSTANCE).astype(np.int64)

    @property
    def part(self) -> np.ndarray:
        return (self.labels & MAX_PART).astype(np.int64)

    @property
    def void_mask(self) -> np.ndarray:
        return self.labels == VOID_VALUE

    def __getitem__(self, yx: tuple[int, int]) -> PanopticPartLabel | _Void:
        return decode_label(int(self.labels[yx]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanopticPartMap):
            return NotImplemented
        return self.labels.shape == other.labels.shape and bool(np.array_equal(self.labels, other.labels))

    def without_parts(self) -> PanopticMap:
        return PanopticMap(self.labels & np.uint32(~MAX_PART & 0xFFFFFFFF))


class PanopticMap(PanopticPartMap):
    """A panoptic map: same packing, part field always zero."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if np.any(self.labels & MAX_PART):
            raise InputError("panoptic maps carry no part labels")


def map_violations(m: PanopticPartMap, t: ClassTaxonomy) -> np.ndarray:
    """Boolean mask of non-void pixels whose label breaks a consistency rule."""
    s, i, p = m.semantic, m.instance, m.part
    declared = np.isin(s, np.array(t.semantic_classes, dtype=np.int64))
    thing = np.isin(s, np.array(t.thing_classes, dtype=np.int64))
    nparts = np.zeros(MAX_SEMANTIC + 1, np.int64)
    for c, parts in t.class_parts.items():
        nparts[c] = len(parts)
    bad = ~declared | ((i != 0) & ~thing) | ((p != 0) & (p > nparts[s]))
    return bad & ~m.void_mask


def iter_labels(m: PanopticPartMap) -> Iterable[PanopticPartLabel | _Void]:
    for v in np.unique(m.labels):
        yield decode_label(int(v))
