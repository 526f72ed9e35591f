"""The online training loop and any-time evaluation.

One iteration consumes a stream buffer S_t of ``stream_batch_size`` samples,
runs the configured number of gradient steps on sampler-built batches, then
offers every buffer sample to the memory policy. Iterations are counted per
buffer, starting at 1; a class's first-seen iteration is the buffer in which
it first arrives, so FMS never trains on a brand-new class in that buffer.

Evaluation points are consumed-sample counts: 0, Δn, 2Δn, ... below N, plus
the last sample of every task. The loop itself never reads task indices;
they only label the evaluation rows.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Dataset, Sample
from .errors import ConfigError, HleError, NoClassesAtLevel, RunError
from .learner import Batch, MultiHeadModel, init_model
from .memory import (
    ImportanceTracker,
    RehearsalMemory,
    balanced_importance_insert,
    balanced_random_insert,
    pl_insert,
    reservoir_insert,
    update_importance,
)
from .sampler import FmsState, er_build_batch, fms_build_batch, memory_only_batch
from .stream import SCENARIOS, TaskStream, make_stream
from .taxonomy import Taxonomy

log = logging.getLogger(__name__)

METHODS = ("pl_fms", "er", "balanced_random+er", "clib_like")
CSV_HEADER = ["iter", "task", "level", "accuracy", "method", "seed"]


@dataclass
class RunConfig:
    scenario: str = "single_depth_single_label"
    method: str = "pl_fms"
    stream_batch_size: int = 16
    updates_per_stream_batch: float = 3.0
    memory_size: int = 200
    ramp_T: int = 5000
    learning_rate: float = 0.05
    eval_every: int = 100
    seed: int = 0
    hidden_layers: tuple[int, ...] = (64,)
    tasks_after_first: int = 2
    first_task_fraction: float = 0.5
    num_tasks: int = 5
    importance_mode: str = "ema"
    importance_alpha: float = 0.1

    def validate(self) -> "RunConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        for name in ("stream_batch_size", "memory_size", "ramp_T", "eval_every", "tasks_after_first", "num_tasks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.updates_per_stream_batch > 0:
            raise ConfigError("updates_per_stream_batch must be > 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.first_task_fraction < 1:
            raise ConfigError("first_task_fraction must be in (0, 1)")
        if not 0 < self.importance_alpha <= 1:
            raise ConfigError("importance_alpha must be in (0, 1]")
        if self.importance_mode not in ("ema", "exact"):
            raise ConfigError(f"unknown importance_mode {self.importance_mode!r}")
        if any(w < 1 for w in self.hidden_layers):
            raise ConfigError("hidden layer widths must be >= 1")
        return self


@dataclass
class BatchStat:
    iteration: int
    step: int
    n_stream: int
    n_memory: int
    n_stream_new: int  # stream items whose class was first seen this iteration
    memory_len: int = 0  # occupied memory slots when the batch was built


@dataclass
class MetricsLog:
    method: str
    seed: int
    levels: tuple[int, ...]
    rows: list[tuple[int, int, int, float | None]] = field(default_factory=list)
    final: dict[int, float | None] = field(default_factory=dict)
    batch_stats: list[BatchStat] = field(default_factory=list)
    wall_time: float = 0.0
    num_samples: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, k, h, acc in self.rows:
            w.writerow([t, k, h, "" if acc is None else format(acc, ".10g"), self.method, self.seed])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def series(self, level: int) -> list[tuple[int, float]]:
        return [(t, acc) for t, _, h, acc in self.rows if h == level and acc is not None]


def read_metrics_csv(path: str | Path) -> MetricsLog:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows, method, seed = [], "", 0
        for rec in reader:
            t, k, h, acc, method, seed = rec
            rows.append((int(t), int(k), int(h), float(acc) if acc else None))
    levels = tuple(sorted({r[2] for r in rows}))
    out = MetricsLog(method, int(seed), levels, rows)
    for h in levels:
        s = out.series(h)
        out.final[h] = s[-1][1] if s else None
    return out


def eval_points(stream: TaskStream, every: int) -> list[int]:
    n = len(stream)
    pts = set(range(0, n, every))
    for spec in stream.tasks:
        _, end = stream.task_bounds(spec.index)
        pts.add(end - 1)
    return sorted(pts)


class Evaluator:
    """Per-level accuracy on a fixed test set, restricted to introduced classes."""

    def __init__(self, test: Dataset, taxonomy: Taxonomy, levels: Sequence[int]):
        self.levels = tuple(levels)
        self.X = test.features
        leaves = [s.finest[1] for s in test.samples]
        self.targets: dict[int, np.ndarray] = {}
        for h in self.levels:
            self.targets[h] = np.array(
                [taxonomy.ancestor_at(c, h) if taxonomy.level_of(c) >= h else -1 for c in leaves], dtype=np.int64
            )

    def __call__(self, model: MultiHeadModel, introduced: dict[int, set[int]]) -> dict[int, float | None]:
        out: dict[int, float | None] = {}
        for h in self.levels:
            classes = introduced.get(h, set())
            if not classes or not model.classes_at(h):
                out[h] = None
                continue
            target = self.targets[h]
            mask = np.isin(target, list(classes))
            if not mask.any():
                out[h] = None
                continue
            pred = model.predict(self.X[mask], h)
            out[h] = float(np.mean(pred == target[mask]))
        return out


def evaluate(model: MultiHeadModel, test: Dataset, introduced: dict[int, set[int]]) -> dict[int, float | None]:
    """Accuracy per level in ``introduced``; levels without classes map to None."""
    return Evaluator(test, test.taxonomy, sorted(introduced))(model, introduced)


def _seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    stream_ss, model_ss, sampler_ss, memory_ss = ss.spawn(4)
    return (
        int(stream_ss.generate_state(1)[0]),
        int(model_ss.generate_state(1)[0]),
        np.random.default_rng(sampler_ss),
        np.random.default_rng(memory_ss),
    )


class OnlineRun:
    """State of one online run; ``run_online`` is the usual entry point."""

    def __init__(self, config: RunConfig, train: Dataset, test: Dataset, taxonomy: Taxonomy,
                 stream: TaskStream | None = None):
        self.config = config.validate()
        stream_seed, model_seed, self.sampler_rng, self.memory_rng = _seeds(config.seed)
        self.stream = stream or make_stream(
            config.scenario, train, taxonomy, stream_seed,
            tasks_after_first=config.tasks_after_first,
            first_task_fraction=config.first_task_fraction,
            num_tasks=config.num_tasks,
        )
        self.taxonomy = taxonomy
        self.model = init_model(train.feature_dim, config.hidden_layers, model_seed)
        self.memory = RehearsalMemory(config.memory_size)
        self.tracker = ImportanceTracker(config.importance_alpha, config.importance_mode, config.learning_rate)
        self.fms = FmsState(config.ramp_T)
        self.levels = self.stream.levels
        self.evaluator = Evaluator(test, taxonomy, self.levels)
        self.log = MetricsLog(config.method, config.seed, self.levels, num_samples=len(self.stream))
        self.iteration = 0
        self.n_seen = 0
        self._acc = 0.0

    def introduced(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {}
        for (h, lab) in self.fms.first_seen:
            out.setdefault(h, set()).add(lab)
        return out

    def build_batch(self, buffer: list[Sample]) -> Batch | None:
        m = self.config.method
        if m == "pl_fms":
            return fms_build_batch(buffer, self.memory, self.fms, self.iteration, self.sampler_rng)
        if m in ("er", "balanced_random+er"):
            return er_build_batch(buffer, self.memory, self.sampler_rng)
        if not self.memory.slots:
            return None
        return memory_only_batch(self.memory, 2 * self.config.stream_batch_size, self.sampler_rng)

    def insert(self, sample: Sample) -> None:
        m = self.config.method
        if m == "pl_fms":
            pl_insert(self.memory, self.tracker, self.model, sample)
        elif m == "er":
            reservoir_insert(self.memory, sample, self.n_seen, self.memory_rng)
        elif m == "balanced_random+er":
            balanced_random_insert(self.memory, sample, self.memory_rng)
        else:
            balanced_importance_insert(self.memory, self.tracker, sample)

    def n_steps(self) -> int:
        self._acc += self.config.updates_per_stream_batch
        n = math.floor(self._acc + 1e-9)
        self._acc -= n
        return n

    def process_buffer(self, buffer: list[Sample], positions: list[int]) -> None:
        self.iteration += 1
        t = self.iteration
        new = {c for c, t_c in self.fms.first_seen.items() if t_c == t}
        uses_importance = self.config.method in ("pl_fms", "clib_like")
        for step in range(self.n_steps()):
            occupied = len(self.memory)
            batch = self.build_batch(buffer)
            if batch is None or not len(batch):
                continue
            result = self.model.sgd_step(batch, self.config.learning_rate)
            if uses_importance:
                update_importance(self.tracker, result, self.memory, self.model)
            n_stream = batch.count("stream")
            n_new = sum(1 for it in batch if it.source == "stream" and it.sample.finest in new)
            self.log.batch_stats.append(BatchStat(t, step, n_stream, len(batch) - n_stream, n_new, occupied))
        for sample, pos in zip(buffer, positions):
            self.n_seen = pos
            self.insert(sample)

    def evaluate_now(self, consumed: int) -> None:
        task = self.stream.task_of(max(consumed, 1))
        accs = self.evaluator(self.model, self.introduced())
        for h in self.levels:
            self.log.rows.append((consumed, task, h, accs[h]))

    def run(self) -> MetricsLog:
        start = time.perf_counter()
        points = set(eval_points(self.stream, self.config.eval_every))
        if 0 in points:
            self.evaluate_now(0)
        buffer: list[Sample] = []
        positions: list[int] = []
        size = self.config.stream_batch_size
        n = len(self.stream)
        for ev in self.stream.cursor():
            try:
                for key in ev.sample.labels:
                    if not self.model.is_registered(*key):
                        self.model.expand_head(*key)
                    self.fms.note_first_seen(key, self.iteration + 1)
                buffer.append(ev.sample)
                positions.append(ev.t)
                if len(buffer) == size or ev.t == n:
                    self.process_buffer(buffer, positions)
                    buffer, positions = [], []
                if ev.t in points:
                    self.evaluate_now(ev.t)
            except HleError as exc:
                raise RunError(f"{type(exc).__name__}: {exc}", ev.t, ev.task) from exc
        for h in self.levels:
            s = self.log.series(h)
            self.log.final[h] = s[-1][1] if s else None
        self.log.wall_time = time.perf_counter() - start
        return self.log


def run_online(config: RunConfig, train: Dataset, test: Dataset, taxonomy: Taxonomy) -> MetricsLog:
    return OnlineRun(config, train, test, taxonomy).run()


def _auc(series: list[tuple[int, float]]) -> float | None:
    if not series:
        return None
    if len(series) == 1:
        return series[0][1]
    t = np.array([p[0] for p in series], dtype=float)
    a = np.array([p[1] for p in series], dtype=float)
    return float(np.sum((a[1:] + a[:-1]) * np.diff(t)) / 2.0 / (t[-1] - t[0]))


def summarize(logs: Sequence[MetricsLog]) -> dict:
    """Across-seed mean/std of final per-level accuracy and mean normalised AUC."""
    if not logs:
        raise ValueError("need at least one log")
    levels = sorted({h for lg in logs for h in lg.levels})
    per_level = {}
    for h in levels:
        finals = [lg.final.get(h) for lg in logs if lg.final.get(h) is not None]
        aucs = [a for a in (_auc(lg.series(h)) for lg in logs) if a is not None]
        per_level[str(h)] = {
            "final_mean": float(np.mean(finals)) if finals else None,
            "final_std": float(np.std(finals)) if finals else None,
            "auc": float(np.mean(aucs)) if aucs else None,
        }
    return {
        "method": logs[0].method,
        "seeds": [lg.seed for lg in logs],
        "levels": per_level,
    }
