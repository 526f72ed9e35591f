"""Level-stratified label trees.

Labels are dense integer ids assigned in (level, insertion order) order, so a
level's ids form a contiguous range and can index classifier rows directly.
The root above level 1 is implicit and never stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import (
    CrossLevelParent,
    CycleDetected,
    DuplicateLabel,
    EmptyLevel,
    LevelOutOfRange,
    NoSuchLabel,
    ParseError,
)


@dataclass(frozen=True)
class Taxonomy:
    num_levels: int
    labels_per_level: tuple[tuple[int, ...], ...]
    parent_of: Mapping[int, int]
    names: tuple[str, ...]
    _level_of: tuple[int, ...] = field(repr=False, compare=False)
    _children: Mapping[int, tuple[int, ...]] = field(repr=False, compare=False)
    _by_name: Mapping[str, int] = field(repr=False, compare=False)

    @property
    def num_labels(self) -> int:
        return len(self.names)

    def level_labels(self, h: int) -> frozenset[int]:
        if not 1 <= h <= self.num_levels:
            raise LevelOutOfRange(f"level {h} outside 1..{self.num_levels}")
        return frozenset(self.labels_per_level[h - 1])

    def level_of(self, label: int) -> int:
        self._check(label)
        return self._level_of[label]

    def parent(self, label: int) -> int | None:
        self._check(label)
        return self.parent_of.get(label)

    def children(self, label: int) -> tuple[int, ...]:
        self._check(label)
        return self._children.get(label, ())

    def is_leaf(self, label: int) -> bool:
        return not self.children(label)

    @property
    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.num_labels) if i not in self._children)

    def ancestor_at(self, label: int, h: int) -> int:
        """Return the unique ancestor of ``label`` at level ``h`` (itself at its own level)."""
        lvl = self.level_of(label)
        if not 1 <= h <= lvl:
            raise LevelOutOfRange(f"label {self.names[label]!r} is at level {lvl}, no ancestor at level {h}")
        while lvl > h:
            label = self.parent_of[label]
            lvl -= 1
        return label

    def label_id(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise NoSuchLabel(f"no label named {name!r}") from None

    def name(self, label: int) -> str:
        self._check(label)
        return self.names[label]

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.labels_per_level)

    def _check(self, label: int) -> None:
        if not hasattr(label, "__index__") or not 0 <= label < self.num_labels:
            raise NoSuchLabel(f"no label with id {label!r}")


def build_taxonomy(
    level_count: int,
    edges: Iterable[tuple[Hashable, Hashable]],
    level_assignment: Mapping[Hashable, int],
    names: Mapping[Hashable, str] | None = None,
) -> Taxonomy:
    """Validate a label tree and assign dense ids.

    ``edges`` are (child, parent) pairs over arbitrary hashable label keys;
    ``level_assignment`` maps every label key to its 1-based level and fixes the
    insertion order used when numbering labels within a level.
    """
    if level_count < 1:
        raise LevelOutOfRange(f"level_count must be >= 1, got {level_count}")
    keys = list(level_assignment)
    if len(set(keys)) != len(keys):
        raise DuplicateLabel("duplicate label keys in level assignment")
    for k in keys:
        lvl = level_assignment[k]
        if not 1 <= lvl <= level_count:
            raise LevelOutOfRange(f"label {k!r} assigned to level {lvl} outside 1..{level_count}")

    parent: dict[Hashable, Hashable] = {}
    for child, par in edges:
        for k in (child, par):
            if k not in level_assignment:
                raise NoSuchLabel(f"edge mentions unassigned label {k!r}")
        if child in parent:
            raise DuplicateLabel(f"label {child!r} listed with more than one parent edge")
        parent[child] = par

    # cycles first: a cycle is reported as such even though it also breaks levels
    for start in parent:
        seen = {start}
        cur = start
        while cur in parent:
            cur = parent[cur]
            if cur in seen:
                raise CycleDetected(f"cycle through label {cur!r}")
            seen.add(cur)

    for k in keys:
        lvl = level_assignment[k]
        if lvl == 1:
            if k in parent:
                raise CrossLevelParent(f"level-1 label {k!r} must not have a parent")
        else:
            if k not in parent:
                raise CrossLevelParent(f"label {k!r} at level {lvl} has no parent")
            plvl = level_assignment[parent[k]]
            if plvl != lvl - 1:
                raise CrossLevelParent(
                    f"label {k!r} at level {lvl} has parent {parent[k]!r} at level {plvl}"
                )

    per_level: list[list[Hashable]] = [[] for _ in range(level_count)]
    for k in keys:
        per_level[level_assignment[k] - 1].append(k)
    for h, members in enumerate(per_level, start=1):
        if not members:
            raise EmptyLevel(f"level {h} has no labels")

    ids: dict[Hashable, int] = {}
    for members in per_level:
        for k in members:
            ids[k] = len(ids)
    display = [None] * len(ids)
    for k, i in ids.items():
        display[i] = str(names[k]) if names and k in names else str(k)
    if len(set(display)) != len(display):
        raise DuplicateLabel("display names are not unique")

    parent_ids = {ids[c]: ids[p] for c, p in parent.items()}
    children: dict[int, list[int]] = {}
    for c in sorted(parent_ids):
        children.setdefault(parent_ids[c], []).append(c)
    level_of = [0] * len(ids)
    for k, i in ids.items():
        level_of[i] = level_assignment[k]

    return Taxonomy(
        num_levels=level_count,
        labels_per_level=tuple(tuple(ids[k] for k in members) for members in per_level),
        parent_of=parent_ids,
        names=tuple(display),
        _level_of=tuple(level_of),
        _children={p: tuple(cs) for p, cs in children.items()},
        _by_name={n: i for i, n in enumerate(display)},
    )


def balanced_taxonomy(level_sizes: Sequence[int], prefix: str = "L") -> Taxonomy:
    """Build a taxonomy with the given number of labels per level.

    Children of level h+1 are spread over the level-h labels in contiguous,
    near-equal blocks, e.g. ``(5, 20)`` gives 5 parents with 4 children each.
    """
    if not level_sizes:
        raise LevelOutOfRange("need at least one level")
    assignment: dict[str, int] = {}
    edges = []
    prev: list[str] = []
    for h, n in enumerate(level_sizes, start=1):
        if n < 1:
            raise EmptyLevel(f"level {h} has no labels")
        cur = [f"{prefix}{h}_{i}" for i in range(n)]
        for i, name in enumerate(cur):
            assignment[name] = h
            if prev:
                edges.append((name, prev[i * len(prev) // n]))
        prev = cur
    return build_taxonomy(len(level_sizes), edges, assignment)


def read_taxonomy(path: str | Path) -> Taxonomy:
    """Parse ``name<TAB>level<TAB>parent-or-dash`` records; ``#`` lines are comments."""
    assignment: dict[str, int] = {}
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            name, level, par = parts
            try:
                lvl = int(level)
            except ValueError:
                raise ParseError(f"bad level {level!r}", lineno) from None
            if name in assignment:
                raise DuplicateLabel(f"line {lineno}: label {name!r} defined twice")
            assignment[name] = lvl
            if par != "-":
                edges.append((name, par))
    if not assignment:
        raise ParseError("taxonomy file has no records")
    return build_taxonomy(max(assignment.values()), edges, assignment)


def write_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# name\tlevel\tparent\n")
        for label in range(taxonomy.num_labels):
            par = taxonomy.parent(label)
            pname = "-" if par is None else taxonomy.names[par]
            fh.write(f"{taxonomy.names[label]}\t{taxonomy.level_of(label)}\t{pname}\n")
