"""Online task streams for hierarchical label expansion.

Scenarios:

* ``single_depth_single_label`` / ``single_depth_dual_label``: task 1 labels
  every parent, later tasks expand a random subset of parents to their
  children. Single-label streams never reuse an instance across tasks.
* ``multi_depth``: task h uses level-h labels, instances split across tasks.
* ``disjoint``: leaf classes split into groups, one group per task.

Positions ``t`` are 1-based sample indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .datasets import Dataset, Label, Sample, format_labels
from .errors import InsufficientSamples, NotTwoLevels, StreamError, TooManyTasks
from .taxonomy import Taxonomy

SCENARIOS = ("single_depth_single_label", "single_depth_dual_label", "multi_depth", "disjoint")


@dataclass(frozen=True)
class TaskSpec:
    index: int
    introduced: tuple[Label, ...]
    start: int


@dataclass(frozen=True, eq=False)
class TaskStream:
    items: tuple[Sample, ...]
    tasks: tuple[TaskSpec, ...]
    scenario: str
    seed: int
    taxonomy: Taxonomy

    def __len__(self):
        return len(self.items)

    def task_bounds(self, k: int) -> tuple[int, int]:
        """Half-open span ``[t(k), t(k+1))`` of task ``k`` (1-based)."""
        start = self.tasks[k - 1].start
        end = self.tasks[k].start if k < len(self.tasks) else len(self.items) + 1
        return start, end

    def task_of(self, t: int) -> int:
        k = 1
        for spec in self.tasks:
            if spec.start <= t:
                k = spec.index
        return k

    def cursor(self) -> "StreamCursor":
        return StreamCursor(self)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted({lvl for s in self.items for lvl, _ in s.labels}))


class StreamEvent(NamedTuple):
    sample: Sample
    t: int
    task: int


class StreamCursor:
    """Independent read position over a stream; ``next()`` returns None at the end."""

    def __init__(self, stream: TaskStream):
        self._stream = stream
        self._pos = 0
        self._task = 0

    def next(self) -> StreamEvent | None:
        s = self._stream
        if self._pos >= len(s.items):
            return None
        t = self._pos + 1
        while self._task < len(s.tasks) and s.tasks[self._task].start <= t:
            self._task += 1
        self._pos += 1
        return StreamEvent(s.items[t - 1], t, self._task)

    def __iter__(self) -> Iterator[StreamEvent]:
        while (ev := self.next()) is not None:
            yield ev


def _assemble(task_items: list[list[Sample]], new_level_of_task, scenario, seed, taxonomy, rng) -> TaskStream:
    items: list[Sample] = []
    tasks = []
    for k, group in enumerate(task_items, start=1):
        order = rng.permutation(len(group))
        group = [group[i] for i in order]
        lvl = new_level_of_task(k)
        introduced = sorted({lab for s in group for lab in s.labels if lab[0] == lvl})
        tasks.append(TaskSpec(k, tuple(introduced), len(items) + 1))
        items.extend(group)
    return TaskStream(tuple(items), tuple(tasks), scenario, seed, taxonomy)


def make_single_depth_stream(
    dataset: Dataset,
    taxonomy: Taxonomy,
    dual_label: bool = False,
    tasks_after_first: int = 2,
    seed: int = 0,
    first_task_fraction: float = 0.5,
) -> TaskStream:
    """Parents first, then ``tasks_after_first`` expansion tasks.

    Each leaf's instances are shuffled and ``round(n * first_task_fraction)``
    of them are relabeled to the parent for task 1. Single-label streams use the
    remainder for the expansion task; dual-label streams draw the same number
    from the full pool, so instances may repeat across tasks.
    """
    if taxonomy.num_levels != 2:
        raise NotTwoLevels(f"single-depth streams need a 2-level taxonomy, got {taxonomy.num_levels}")
    parents = sorted(taxonomy.level_labels(1))
    if not 1 <= tasks_after_first <= len(parents):
        raise TooManyTasks(f"{tasks_after_first} expansion tasks for {len(parents)} parents")
    if not 0 < first_task_fraction < 1:
        raise StreamError("first_task_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    groups = np.array_split(rng.permutation(parents), tasks_after_first)
    task_of_parent = {int(p): k + 2 for k, g in enumerate(groups) for p in g}

    by_leaf: dict[int, list[Sample]] = {}
    for s in dataset.samples:
        by_leaf.setdefault(s.finest[1], []).append(s)

    task_items: list[list[Sample]] = [[] for _ in range(tasks_after_first + 1)]
    for leaf in sorted(by_leaf):
        pool = by_leaf[leaf]
        perm = rng.permutation(len(pool))
        n_first = int(np.floor(len(pool) * first_task_fraction + 0.5))
        lvl = taxonomy.level_of(leaf)
        parent = taxonomy.ancestor_at(leaf, 1)
        for i in perm[:n_first]:
            task_items[0].append(pool[i].with_labels([(1, parent)]))
        if lvl == 1:
            # a childless parent only ever appears in task 1
            continue
        n_rest = len(pool) - n_first
        if dual_label:
            later = rng.choice(len(pool), size=n_rest, replace=False)
            labels = [(1, parent), (2, leaf)]
        else:
            later = perm[n_first:]
            labels = [(2, leaf)]
        k = task_of_parent[parent]
        for i in later:
            task_items[k - 1].append(pool[i].with_labels(labels))

    scenario = "single_depth_dual_label" if dual_label else "single_depth_single_label"
    return _assemble(task_items, lambda k: 1 if k == 1 else 2, scenario, seed, taxonomy, rng)


def make_multi_depth_stream(dataset: Dataset, taxonomy: Taxonomy, seed: int = 0) -> TaskStream:
    """One task per level; every instance is assigned to exactly one task.

    Each leaf's shuffled instances are dealt round-robin over the tasks its
    depth allows (1..level(leaf)), starting from a random offset.
    """
    H = taxonomy.num_levels
    rng = np.random.default_rng(seed)
    by_leaf: dict[int, list[Sample]] = {}
    for s in dataset.samples:
        by_leaf.setdefault(s.finest[1], []).append(s)
    task_items: list[list[Sample]] = [[] for _ in range(H)]
    for leaf in sorted(by_leaf):
        pool = by_leaf[leaf]
        depth = taxonomy.level_of(leaf)
        perm = rng.permutation(len(pool))
        offset = int(rng.integers(depth))
        for j, i in enumerate(perm):
            h = (offset + j) % depth + 1
            anc = taxonomy.ancestor_at(leaf, h)
            task_items[h - 1].append(pool[i].with_labels([(h, anc)]))
    for h in range(1, H + 1):
        present = {lab for s in task_items[h - 1] for _, lab in s.labels}
        missing = taxonomy.level_labels(h) - present
        if missing:
            names = sorted(taxonomy.names[m] for m in missing)[:5]
            raise InsufficientSamples(f"level-{h} labels receive no instances in task {h}: {names}")
    return _assemble(task_items, lambda k: k, "multi_depth", seed, taxonomy, rng)


def make_disjoint_stream(dataset: Dataset, taxonomy: Taxonomy, num_tasks: int, seed: int = 0) -> TaskStream:
    """Conventional class-incremental stream over leaf labels.

    Leaves are shuffled and dealt round-robin, so 7 leaves over 3 tasks give
    group sizes (3, 2, 2).
    """
    leaves = sorted({s.finest[1] for s in dataset.samples})
    if not 1 <= num_tasks <= len(leaves):
        raise TooManyTasks(f"{num_tasks} tasks for {len(leaves)} leaf classes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(leaves)
    task_of_leaf = {int(c): i % num_tasks for i, c in enumerate(order)}
    task_items: list[list[Sample]] = [[] for _ in range(num_tasks)]
    for s in dataset.samples:
        task_items[task_of_leaf[s.finest[1]]].append(s.with_labels([s.finest]))
    levels = {s.finest[0] for s in dataset.samples}
    if len(levels) > 1:
        raise StreamError("disjoint streams need all leaves at one level")
    (lvl,) = levels
    return _assemble(task_items, lambda k: lvl, "disjoint", seed, taxonomy, rng)


def make_stream(scenario: str, dataset: Dataset, taxonomy: Taxonomy, seed: int = 0, **kw) -> TaskStream:
    if scenario == "single_depth_single_label":
        return make_single_depth_stream(dataset, taxonomy, False, kw.get("tasks_after_first", 2), seed,
                                        kw.get("first_task_fraction", 0.5))
    if scenario == "single_depth_dual_label":
        return make_single_depth_stream(dataset, taxonomy, True, kw.get("tasks_after_first", 2), seed,
                                        kw.get("first_task_fraction", 0.5))
    if scenario == "multi_depth":
        return make_multi_depth_stream(dataset, taxonomy, seed)
    if scenario == "disjoint":
        return make_disjoint_stream(dataset, taxonomy, kw.get("num_tasks", 5), seed)
    raise StreamError(f"unknown scenario {scenario!r}")


def audit_stream(stream: TaskStream) -> None:
    """Check the structural invariants of a stream; raises StreamError on violation."""
    tax = stream.taxonomy
    starts = [spec.start for spec in stream.tasks]
    if starts != sorted(set(starts)) or (starts and starts[0] != 1):
        raise StreamError(f"task starts not strictly increasing from 1: {starts}")
    seen_pairs: set[Label] = set()
    ids_by_task: list[set[int]] = []
    dual = stream.scenario == "single_depth_dual_label"
    for spec in stream.tasks:
        if seen_pairs & set(spec.introduced):
            raise StreamError(f"task {spec.index} re-introduces {sorted(seen_pairs & set(spec.introduced))}")
        start, end = stream.task_bounds(spec.index)
        new_levels = {lvl for lvl, _ in spec.introduced}
        found: set[Label] = set()
        ids = set()
        for s in stream.items[start - 1:end - 1]:
            ids.add(s.sample_id)
            if dual and spec.index > 1:
                if len(s.labels) != 2:
                    raise StreamError(f"dual-label item {s.sample_id} has {len(s.labels)} labels")
                (l1, coarse), (l2, fine) = s.labels
                if l2 != l1 + 1 or tax.ancestor_at(fine, l1) != coarse:
                    raise StreamError(f"item {s.sample_id} labels not ancestor-consistent")
                if (l1, coarse) not in seen_pairs:
                    raise StreamError(f"item {s.sample_id} coarse label never introduced")
                found.add((l2, fine))
            else:
                if len(s.labels) != 1:
                    raise StreamError(f"item {s.sample_id} should carry one label")
                if s.labels[0][0] not in new_levels:
                    raise StreamError(f"item {s.sample_id} label level outside task {spec.index} levels")
                found.add(s.labels[0])
        if found != set(spec.introduced):
            raise StreamError(f"task {spec.index} introduced set mismatch")
        seen_pairs |= found
        ids_by_task.append(ids)
    if not dual:
        for i in range(len(ids_by_task)):
            for j in range(i + 1, len(ids_by_task)):
                if ids_by_task[i] & ids_by_task[j]:
                    raise StreamError(f"tasks {i + 1} and {j + 1} share instances")


def write_manifest(stream: TaskStream, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in stream.cursor():
            fh.write(f"{ev.t}\t{ev.task}\t{ev.sample.sample_id}\t{format_labels(stream.taxonomy, ev.sample.labels)}\n")
