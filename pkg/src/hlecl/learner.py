"""Multi-head MLP classifier with manual backprop, in float64.

A shared ReLU encoder feeds one linear softmax head per hierarchy level.
Heads start empty and gain a zero-initialised row whenever a new class of that
level is registered, so existing logits never move when a class is added.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datasets import Label, Sample
from .errors import (
    AlreadyRegistered,
    BadShape,
    CheckpointError,
    DimMismatch,
    NaNGradient,
    NoClassesAtLevel,
    UnregisteredClass,
)

CHECKPOINT_MAGIC = "HLECL-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class BatchItem:
    sample: Sample
    source: str  # "stream" or "memory"
    slot: int | None = None
    weight: float = 1.0


@dataclass
class Batch:
    items: list[BatchItem] = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def samples(self) -> list[Sample]:
        return [it.sample for it in self.items]

    def count(self, source: str) -> int:
        return sum(1 for it in self.items if it.source == source)

    @classmethod
    def of(cls, samples: Iterable[Sample], source: str = "stream") -> "Batch":
        return cls([BatchItem(s, source) for s in samples])


@dataclass
class StepResult:
    loss_before: np.ndarray
    loss_after: np.ndarray
    batch: Batch


@dataclass
class Head:
    W: np.ndarray
    b: np.ndarray
    labels: list[int]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


class MultiHeadModel:
    def __init__(self, feature_dim: int, encoder_layers: Sequence[int] = (64,), seed: int = 0):
        if feature_dim < 1 or any(w < 1 for w in encoder_layers):
            raise BadShape(f"bad shape: feature_dim={feature_dim}, layers={list(encoder_layers)}")
        self.feature_dim = int(feature_dim)
        self.encoder_layers = [int(w) for w in encoder_layers]
        rng = np.random.default_rng(seed)
        self.enc_W: list[np.ndarray] = []
        self.enc_b: list[np.ndarray] = []
        fan_in = self.feature_dim
        for width in self.encoder_layers:
            limit = np.sqrt(6.0 / fan_in)
            self.enc_W.append(rng.uniform(-limit, limit, size=(width, fan_in)))
            self.enc_b.append(np.zeros(width))
            fan_in = width
        self.embed_dim = fan_in
        self.heads: dict[int, Head] = {}
        self.class_row: dict[Label, int] = {}

    # ---- structure -------------------------------------------------------

    def expand_head(self, level: int, label: int) -> int:
        """Register ``(level, label)`` and return its row index in head ``level``."""
        key = (level, label)
        if key in self.class_row:
            raise AlreadyRegistered(f"class {key} already registered")
        head = self.heads.get(level)
        if head is None:
            head = self.heads[level] = Head(np.zeros((0, self.embed_dim)), np.zeros(0), [])
        head.W = np.vstack([head.W, np.zeros((1, self.embed_dim))])
        head.b = np.append(head.b, 0.0)
        head.labels.append(label)
        row = len(head.labels) - 1
        self.class_row[key] = row
        return row

    def ensure_registered(self, labels: Iterable[Label]) -> list[Label]:
        added = []
        for key in labels:
            if key not in self.class_row:
                self.expand_head(*key)
                added.append(key)
        return added

    def is_registered(self, level: int, label: int) -> bool:
        return (level, label) in self.class_row

    def classes_at(self, level: int) -> list[int]:
        head = self.heads.get(level)
        return list(head.labels) if head else []

    @property
    def levels(self) -> list[int]:
        return sorted(h for h, head in self.heads.items() if head.labels)

    def copy(self) -> "MultiHeadModel":
        return copy.deepcopy(self)

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (encoder, then heads by level)."""
        params = []
        for W, b in zip(self.enc_W, self.enc_b):
            params += [W, b]
        for h in sorted(self.heads):
            params += [self.heads[h].W, self.heads[h].b]
        return params

    # ---- forward ---------------------------------------------------------

    def _as_matrix(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise DimMismatch(f"expected features of dim {self.feature_dim}, got shape {np.shape(features)}")
        return X

    def _encode(self, X: np.ndarray):
        acts = [X]
        pre = []
        a = X
        for W, b in zip(self.enc_W, self.enc_b):
            z = a @ W.T + b
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        return a, acts, pre

    def encode(self, features) -> np.ndarray:
        return self._encode(self._as_matrix(features))[0]

    def forward(self, features) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Per-level (logits, probabilities) for every level with at least one class."""
        if not self.levels:
            raise NoClassesAtLevel("model has no registered classes")
        f = self.encode(features)
        out = {}
        for h in self.levels:
            head = self.heads[h]
            z = f @ head.W.T + head.b
            out[h] = (z, softmax(z))
        return out

    def logits(self, features, level: int) -> np.ndarray:
        head = self.heads.get(level)
        if head is None or not head.labels:
            raise NoClassesAtLevel(f"no classes registered at level {level}")
        f = self.encode(features)
        return f @ head.W.T + head.b

    def predict(self, features, level: int) -> np.ndarray:
        """Label ids of the argmax class at ``level``; ties go to the lowest row."""
        z = self.logits(features, level)
        rows = np.argmax(z, axis=1)
        return np.asarray(self.heads[level].labels)[rows]

    # ---- loss and gradients ----------------------------------------------

    def _targets(self, samples: Sequence[Sample]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        per_level: dict[int, tuple[list[int], list[int]]] = {}
        for i, s in enumerate(samples):
            for key in s.labels:
                row = self.class_row.get(key)
                if row is None:
                    raise UnregisteredClass(f"class {key} of sample {s.sample_id} not registered")
                idx, rows = per_level.setdefault(key[0], ([], []))
                idx.append(i)
                rows.append(row)
        return {h: (np.array(i), np.array(r)) for h, (i, r) in per_level.items()}

    def sample_losses(self, samples: Sequence[Sample]) -> np.ndarray:
        """Sum of cross-entropies over each sample's labeled levels."""
        if not samples:
            return np.zeros(0)
        X = self._as_matrix(np.stack([s.features for s in samples]))
        targets = self._targets(samples)
        f = self._encode(X)[0]
        losses = np.zeros(len(samples))
        for h, (idx, rows) in targets.items():
            head = self.heads[h]
            logp = _log_softmax(f[idx] @ head.W.T + head.b)
            np.add.at(losses, idx, -logp[np.arange(len(idx)), rows])
        return losses

    def loss(self, batch: Batch | Sequence[Sample]) -> tuple[float, np.ndarray]:
        samples, weights = _unpack(batch)
        per = self.sample_losses(samples)
        return float(np.dot(weights, per) / weights.sum()), per

    def gradients(self, batch: Batch | Sequence[Sample]) -> tuple[np.ndarray, list[np.ndarray | None]]:
        """Per-sample losses and d(weighted mean loss)/d(parameters).

        Gradient entries line up with ``parameters()``; heads without any
        labeled sample in the batch get ``None``.
        """
        samples, weights = _unpack(batch)
        if not samples:
            raise ValueError("empty batch")
        X = self._as_matrix(np.stack([s.features for s in samples]))
        targets = self._targets(samples)
        f, acts, pre = self._encode(X)
        scale = weights / weights.sum()
        losses = np.zeros(len(samples))
        df = np.zeros_like(f)
        head_grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for h, (idx, rows) in targets.items():
            head = self.heads[h]
            fi = f[idx]
            logp = _log_softmax(fi @ head.W.T + head.b)
            np.add.at(losses, idx, -logp[np.arange(len(idx)), rows])
            dz = np.exp(logp)
            dz[np.arange(len(idx)), rows] -= 1.0
            dz *= scale[idx, None]
            head_grads[h] = (dz.T @ fi, dz.sum(axis=0))
            np.add.at(df, idx, dz @ head.W)

        enc_grads: list[tuple[np.ndarray, np.ndarray]] = []
        da = df
        for layer in range(len(self.enc_W) - 1, -1, -1):
            dz = da * (pre[layer] > 0)
            enc_grads.append((dz.T @ acts[layer], dz.sum(axis=0)))
            da = dz @ self.enc_W[layer]
        enc_grads.reverse()

        grads: list[np.ndarray | None] = []
        for gW, gb in enc_grads:
            grads += [gW, gb]
        for h in sorted(self.heads):
            grads += list(head_grads.get(h, (None, None)))
        return losses, grads

    def sgd_step(self, batch: Batch | Sequence[Sample], learning_rate: float) -> StepResult:
        """One plain gradient-descent step on the batch mean loss.

        Returns each sample's loss before and after the update. A non-finite
        gradient raises NaNGradient and leaves the model untouched.
        """
        if learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not isinstance(batch, Batch):
            batch = Batch.of(batch)
        before, grads = self.gradients(batch)
        for g in grads:
            if g is not None and not np.all(np.isfinite(g)):
                raise NaNGradient("non-finite gradient, step aborted")
        if learning_rate > 0:
            for p, g in zip(self.parameters(), grads):
                if g is not None:
                    p -= learning_rate * g
            after = self.sample_losses(batch.samples)
        else:
            after = before.copy()
        return StepResult(before, after, batch)

    # ---- checkpoints -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        def arr(a):
            return {"shape": list(a.shape), "values": [float(v) for v in a.ravel(order="C")]}

        doc = {
            "feature_dim": self.feature_dim,
            "encoder_layers": self.encoder_layers,
            "encoder": [{"W": arr(W), "b": arr(b)} for W, b in zip(self.enc_W, self.enc_b)],
            "heads": [
                {"level": h, "labels": self.heads[h].labels, "W": arr(self.heads[h].W), "b": arr(self.heads[h].b)}
                for h in sorted(self.heads)
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "MultiHeadModel":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
                raise CheckpointError("not an hlecl checkpoint")
            if int(header[1]) != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {header[1]}")
            doc = json.load(fh)

        def arr(d):
            return np.array(d["values"], dtype=np.float64).reshape(d["shape"])

        model = cls(doc["feature_dim"], doc["encoder_layers"])
        model.enc_W = [arr(layer["W"]) for layer in doc["encoder"]]
        model.enc_b = [arr(layer["b"]) for layer in doc["encoder"]]
        for head in doc["heads"]:
            h = head["level"]
            model.heads[h] = Head(arr(head["W"]).reshape(-1, model.embed_dim), arr(head["b"]), list(head["labels"]))
            for row, lab in enumerate(head["labels"]):
                model.class_row[(h, lab)] = row
        return model


def _unpack(batch) -> tuple[list[Sample], np.ndarray]:
    if isinstance(batch, Batch):
        return batch.samples, np.array([it.weight for it in batch.items], dtype=np.float64)
    samples = list(batch)
    return samples, np.ones(len(samples))


def init_model(feature_dim: int, encoder_layers: Sequence[int] = (64,), seed: int = 0) -> MultiHeadModel:
    return MultiHeadModel(feature_dim, encoder_layers, seed)
