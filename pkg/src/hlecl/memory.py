"""Bounded rehearsal memory and its insertion/eviction policies.

Policies:

* ``pl_insert``: pseudo-label guided eviction. The modal class's samples vote,
  through the model, for a related class at every other level; the least
  important sample among the modal class and the voted classes is evicted.
* ``reservoir_insert``: classic reservoir sampling, label-blind.
* ``balanced_random_insert``: random eviction from the largest class.
* ``balanced_importance_insert``: least-important eviction from the largest class.

Importance values track how much training on a stored sample lowers the
memory loss; low values mark samples the model no longer learns from.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Label, Sample, format_labels
from .errors import EmptyMemory, HleError
from .learner import MultiHeadModel, StepResult


class MemoryAuditError(HleError, AssertionError):
    pass


class RehearsalMemory:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        self.capacity = int(capacity)
        self.slots: list[Sample] = []
        self.class_index: dict[Label, set[int]] = {}

    def __len__(self):
        return len(self.slots)

    @property
    def full(self) -> bool:
        return len(self.slots) >= self.capacity

    def _index(self, slot: int, sample: Sample) -> None:
        for key in sample.labels:
            self.class_index.setdefault(key, set()).add(slot)

    def _unindex(self, slot: int, sample: Sample) -> None:
        for key in sample.labels:
            members = self.class_index[key]
            members.discard(slot)
            if not members:
                del self.class_index[key]

    def append(self, sample: Sample) -> int:
        if self.full:
            raise OverflowError("memory is full")
        self.slots.append(sample)
        slot = len(self.slots) - 1
        self._index(slot, sample)
        return slot

    def replace(self, slot: int, sample: Sample) -> Sample:
        old = self.slots[slot]
        self._unindex(slot, old)
        self.slots[slot] = sample
        self._index(slot, sample)
        return old

    def class_counts(self) -> dict[Label, int]:
        return {key: len(v) for key, v in self.class_index.items()}

    def members(self, key: Label) -> set[int]:
        return self.class_index.get(key, set())

    def largest_class(self, incoming: Sample | None = None) -> Label:
        """Class with the most stored samples; ties go to the smallest label id.

        With ``incoming`` the counts include that sample, so a class that is
        about to grow is preferred over an equally large one.
        """
        if not self.class_index:
            raise EmptyMemory("memory is empty")
        extra = set(incoming.labels) if incoming is not None else set()
        return min(self.class_index, key=lambda k: (-len(self.class_index[k]) - (k in extra), k[1], k[0]))

    def audit(self) -> None:
        if len(self.slots) > self.capacity:
            raise MemoryAuditError(f"{len(self.slots)} slots exceed capacity {self.capacity}")
        rebuilt: dict[Label, set[int]] = {}
        for slot, s in enumerate(self.slots):
            for key in s.labels:
                rebuilt.setdefault(key, set()).add(slot)
        if rebuilt != self.class_index:
            raise MemoryAuditError("class index does not mirror slots")

    def dump(self, path: str | Path, taxonomy, tracker: "ImportanceTracker | None" = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for slot, s in enumerate(self.slots):
                imp = tracker.values.get(slot, float("nan")) if tracker else float("nan")
                fh.write(f"{slot}\t{s.sample_id}\t{format_labels(taxonomy, s.labels)}\t{imp!r}\n")


@dataclass
class ImportanceTracker:
    ema_alpha: float = 0.1
    mode: str = "ema"
    learning_rate: float = 0.05
    values: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.ema_alpha <= 1:
            raise ValueError("ema_alpha must be in (0, 1]")
        if self.mode not in ("ema", "exact"):
            raise ValueError(f"unknown importance mode {self.mode!r}")

    def prior(self, exclude: int | None = None) -> float:
        vals = [v for k, v in self.values.items() if k != exclude]
        return float(np.mean(vals)) if vals else 0.0

    def get(self, slot: int) -> float:
        return self.values.get(slot, 0.0)

    def stored(self, slot: int, evicted: int | None = None) -> None:
        """Give a freshly stored slot the mean importance of the other occupants."""
        self.values[slot] = self.prior(exclude=evicted if evicted is not None else slot)


def update_importance(
    tracker: ImportanceTracker,
    result: StepResult,
    memory: RehearsalMemory,
    model: MultiHeadModel | None = None,
) -> ImportanceTracker:
    """Fold a training step's loss decreases into the memory slots it used.

    Stream-sourced batch items are ignored. In ``exact`` mode the trained slots
    are re-scored with ``exact_importance`` instead (needs ``model``).
    """
    a = tracker.ema_alpha
    for i, item in enumerate(result.batch.items):
        if item.source != "memory" or item.slot is None:
            continue
        if tracker.mode == "exact" and model is not None:
            tracker.values[item.slot] = exact_importance(memory, model, item.slot, tracker.learning_rate)
            continue
        decrease = float(result.loss_before[i] - result.loss_after[i])
        tracker.values[item.slot] = (1.0 - a) * tracker.get(item.slot) + a * decrease
    return tracker


def exact_importance(memory: RehearsalMemory, model: MultiHeadModel, slot: int, learning_rate: float) -> float:
    """Mean memory loss now minus mean memory loss after one step on ``slot`` alone."""
    if not memory.slots:
        raise EmptyMemory("memory is empty")
    samples = memory.slots
    base = float(model.sample_losses(samples).mean())
    if learning_rate == 0:
        return 0.0
    probe = model.copy()
    probe.sgd_step([samples[slot]], learning_rate)
    return base - float(probe.sample_losses(samples).mean())


def pl_candidates(memory: RehearsalMemory, model: MultiHeadModel) -> tuple[Label, dict[int, int], set[int]]:
    """Modal class, the per-level voted classes, and the candidate slot set."""
    if not memory.slots:
        raise EmptyMemory("memory is empty")
    modal = memory.largest_class()
    h = modal[0]
    members = sorted(memory.members(modal))
    candidates = set(members)
    voted: dict[int, int] = {}
    feats = np.stack([memory.slots[i].features for i in members])
    for k in model.levels:
        if k == h:
            continue
        preds = model.predict(feats, k)
        votes = Counter(int(p) for p in preds)
        best = min(votes, key=lambda lab: (-votes[lab], lab))
        voted[k] = best
        candidates |= memory.members((k, best))
    return modal, voted, candidates


def pl_select_removal(memory: RehearsalMemory, tracker: ImportanceTracker, model: MultiHeadModel) -> int:
    """Slot to evict: least important among the modal class and its voted relatives."""
    _, _, candidates = pl_candidates(memory, model)
    return min(candidates, key=lambda j: (tracker.get(j), j))


def pl_insert(memory: RehearsalMemory, tracker: ImportanceTracker, model: MultiHeadModel, sample: Sample) -> int | None:
    if not memory.full:
        slot = memory.append(sample)
        tracker.stored(slot)
        return None
    slot = pl_select_removal(memory, tracker, model)
    memory.replace(slot, sample)
    tracker.stored(slot, evicted=slot)
    return slot


def reservoir_insert(memory: RehearsalMemory, sample: Sample, n_seen: int, rng: np.random.Generator) -> int | None:
    """Store with probability m / n_seen once full, overwriting a random slot.

    Returns the overwritten slot, or None when the sample was appended or dropped.
    """
    if not memory.full:
        memory.append(sample)
        return None
    j = int(rng.integers(n_seen))
    if j < memory.capacity:
        memory.replace(j, sample)
        return j
    return None


def balanced_random_insert(memory: RehearsalMemory, sample: Sample, rng: np.random.Generator) -> int | None:
    if not memory.full:
        memory.append(sample)
        return None
    members = sorted(memory.members(memory.largest_class(sample)))
    slot = members[int(rng.integers(len(members)))]
    memory.replace(slot, sample)
    return slot


def balanced_importance_insert(memory: RehearsalMemory, tracker: ImportanceTracker, sample: Sample) -> int | None:
    if not memory.full:
        slot = memory.append(sample)
        tracker.stored(slot)
        return None
    members = memory.members(memory.largest_class(sample))
    slot = min(members, key=lambda j: (tracker.get(j), j))
    memory.replace(slot, sample)
    tracker.stored(slot, evicted=slot)
    return slot
