"""Training-batch construction: flexible memory sampling, ER and memory-only.

Memory draws are always made first, so FMS with every class saturated builds
exactly the ER batch from the same generator state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import Label, Sample
from .errors import EmptyBatch, EmptyMemory, UnseenClass
from .learner import Batch, BatchItem
from .memory import RehearsalMemory


@dataclass
class FmsState:
    ramp: int = 5000
    first_seen: dict[Label, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.ramp < 1:
            raise ValueError("ramp T must be >= 1")

    def note_first_seen(self, cls: Label, t: int) -> bool:
        """Record ``t`` as the first iteration of ``cls``; later calls are no-ops."""
        if t < 1:
            raise ValueError("iterations start at 1")
        if cls in self.first_seen:
            return False
        self.first_seen[cls] = t
        return True

    def acceptance(self, cls: Label, t: int) -> float:
        if cls not in self.first_seen:
            raise UnseenClass(f"class {cls} has no first-seen iteration")
        return min(max(t - self.first_seen[cls], 0) / self.ramp, 1.0)


def note_first_seen(state: FmsState, cls: Label, t: int) -> FmsState:
    state.note_first_seen(cls, t)
    return state


def _draw_memory(memory: RehearsalMemory, n: int, rng: np.random.Generator) -> list[int]:
    if n <= 0:
        return []
    return [int(i) for i in rng.choice(len(memory), size=n, replace=False)]


def fms_build_batch(
    stream_buffer: Sequence[Sample],
    memory: RehearsalMemory,
    state: FmsState,
    t: int,
    rng: np.random.Generator,
) -> Batch:
    """Memory portion of size min(|S_t|, |M|), then one Bernoulli gate per stream sample.

    A rejected stream sample is swapped for an unused memory sample, or kept
    if memory has none left. The gate uses the sample's finest label.
    """
    if not stream_buffer and not memory.slots:
        raise EmptyBatch("no stream or memory samples")
    chosen = _draw_memory(memory, min(len(stream_buffer), len(memory)), rng)
    items = [BatchItem(memory.slots[j], "memory", j) for j in chosen]
    used = set(chosen)
    for s in stream_buffer:
        p = state.acceptance(s.finest, t)
        if rng.random() < p:
            items.append(BatchItem(s, "stream"))
            continue
        free = [j for j in range(len(memory)) if j not in used]
        if not free:
            items.append(BatchItem(s, "stream"))
            continue
        j = free[int(rng.integers(len(free)))]
        used.add(j)
        items.append(BatchItem(memory.slots[j], "memory", j))
    return Batch(items)


def er_build_batch(stream_buffer: Sequence[Sample], memory: RehearsalMemory, rng: np.random.Generator) -> Batch:
    if not stream_buffer:
        raise EmptyBatch("empty stream buffer")
    chosen = _draw_memory(memory, min(len(stream_buffer), len(memory)), rng)
    items = [BatchItem(memory.slots[j], "memory", j) for j in chosen]
    items += [BatchItem(s, "stream") for s in stream_buffer]
    return Batch(items)


def memory_only_batch(memory: RehearsalMemory, batch_size: int, rng: np.random.Generator) -> Batch:
    if not memory.slots:
        raise EmptyMemory("memory is empty")
    chosen = _draw_memory(memory, min(batch_size, len(memory)), rng)
    return Batch([BatchItem(memory.slots[j], "memory", j) for j in chosen])
