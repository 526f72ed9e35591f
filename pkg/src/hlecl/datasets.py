"""Labeled feature datasets: a synthetic hierarchical-Gaussian generator, a
plain-text feature file format, and stratified train/test splitting.

The Gaussian hierarchy is a stand-in for image data. Level-1 means sit on a
sphere; each child mean is its parent's mean plus an isotropic Gaussian offset
whose expected norm is ``child_spread``; samples add per-coordinate noise.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateLabel,
    FractionOutOfRange,
    InvalidSpread,
    NoSuchLabel,
    ParseError,
    UnknownLabel,
    ZeroSamples,
)
from .taxonomy import Taxonomy

Label = tuple[int, int]  # (level, label id)


@dataclass(frozen=True, eq=False)
class Sample:
    features: np.ndarray
    labels: tuple[Label, ...]
    sample_id: int

    @property
    def finest(self) -> Label:
        return max(self.labels)

    def with_labels(self, labels) -> "Sample":
        return Sample(self.features, tuple(sorted(labels)), self.sample_id)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.labels == other.labels
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self):
        return hash((self.sample_id, self.labels))


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    feature_dim: int
    taxonomy: Taxonomy

    def __post_init__(self):
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DuplicateLabel("sample ids are not unique")
        for s in self.samples:
            if s.features.shape != (self.feature_dim,):
                raise DimMismatch(f"sample {s.sample_id} has shape {s.features.shape}, expected ({self.feature_dim},)")
            check_labels(self.taxonomy, s.labels)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and self.taxonomy == other.taxonomy
            and self.samples == other.samples
        )

    @property
    def features(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, self.feature_dim))
        return np.stack([s.features for s in self.samples])

    def leaf_counts(self) -> Counter:
        return Counter(s.finest[1] for s in self.samples)


def check_labels(taxonomy: Taxonomy, labels) -> None:
    if len(labels) not in (1, 2):
        raise UnknownLabel(f"a sample carries 1 or 2 labels, got {len(labels)}")
    for level, label in labels:
        try:
            actual = taxonomy.level_of(label)
        except NoSuchLabel:
            raise UnknownLabel(f"label id {label} not in taxonomy") from None
        if actual != level:
            raise UnknownLabel(f"label {taxonomy.names[label]!r} is at level {actual}, not {level}")
    if len(labels) == 2:
        (lo, coarse), (hi, fine) = sorted(labels)
        if lo == hi or taxonomy.ancestor_at(fine, lo) != coarse:
            raise UnknownLabel(f"dual labels {labels} are not ancestor-consistent")


def _sphere(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(dim)
    return radius * v / np.linalg.norm(v)


def gen_hier_gaussians(
    taxonomy: Taxonomy,
    feature_dim: int,
    samples_per_leaf: int | Mapping[int, int],
    parent_spread: float = 4.0,
    child_spread: float = 1.0,
    noise_sigma: float = 0.1,
    seed: int = 0,
) -> Dataset:
    """Sample a leaf-labeled dataset from a Gaussian hierarchy.

    ``samples_per_leaf`` may be a map leaf id -> count to build imbalanced data.
    Sample ids are assigned consecutively, leaves in id order.
    """
    if parent_spread <= 0 or child_spread <= 0:
        raise InvalidSpread("spreads must be > 0")
    if noise_sigma < 0:
        raise InvalidSpread("noise_sigma must be >= 0")
    if feature_dim < 1:
        raise DimMismatch("feature_dim must be >= 1")
    leaves = taxonomy.leaves
    if isinstance(samples_per_leaf, Mapping):
        counts = {leaf: int(samples_per_leaf.get(leaf, 0)) for leaf in leaves}
    else:
        counts = {leaf: int(samples_per_leaf) for leaf in leaves}
    if any(c < 1 for c in counts.values()):
        raise ZeroSamples("every leaf needs at least one sample")

    rng = np.random.default_rng(seed)
    means: dict[int, np.ndarray] = {}
    for h in range(1, taxonomy.num_levels + 1):
        for label in taxonomy.labels_per_level[h - 1]:
            if h == 1:
                means[label] = _sphere(rng, feature_dim, parent_spread)
            else:
                offset = rng.standard_normal(feature_dim) * (child_spread / np.sqrt(feature_dim))
                means[label] = means[taxonomy.parent_of[label]] + offset

    samples = []
    for leaf in leaves:
        lvl = taxonomy.level_of(leaf)
        noise = rng.standard_normal((counts[leaf], feature_dim)) * noise_sigma
        for row in means[leaf] + noise:
            samples.append(Sample(row, ((lvl, leaf),), len(samples)))
    return Dataset(tuple(samples), feature_dim, taxonomy)


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split by finest label; each class sends round(n * fraction) to test."""
    if not 0 < test_fraction < 1:
        raise FractionOutOfRange(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, s in enumerate(dataset.samples):
        by_class[s.finest[1]].append(i)
    test_idx = set()
    for c in sorted(by_class):
        idx = by_class[c]
        n_test = int(np.floor(len(idx) * test_fraction + 0.5))
        test_idx.update(idx[j] for j in rng.permutation(len(idx))[:n_test])
    train = tuple(s for i, s in enumerate(dataset.samples) if i not in test_idx)
    test = tuple(s for i, s in enumerate(dataset.samples) if i in test_idx)
    return (
        Dataset(train, dataset.feature_dim, dataset.taxonomy),
        Dataset(test, dataset.feature_dim, dataset.taxonomy),
    )


def format_labels(taxonomy: Taxonomy, labels) -> str:
    return ",".join(f"{lvl}:{taxonomy.names[lab]}" for lvl, lab in labels)


def parse_labels(taxonomy: Taxonomy, text: str, lineno: int | None = None) -> tuple[Label, ...]:
    labels = []
    for part in text.split(","):
        lvl, sep, name = part.partition(":")
        if not sep:
            raise ParseError(f"bad label field {part!r}", lineno)
        try:
            level = int(lvl)
        except ValueError:
            raise ParseError(f"bad level in {part!r}", lineno) from None
        try:
            labels.append((level, taxonomy.label_id(name)))
        except NoSuchLabel:
            raise UnknownLabel(f"line {lineno}: label {name!r} not in taxonomy") from None
    return tuple(sorted(labels))


def write_feature_file(dataset: Dataset, path: str | Path) -> None:
    tax = dataset.taxonomy
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dataset.feature_dim}\n")
        for s in dataset.samples:
            vec = ",".join(repr(float(v)) for v in s.features)
            fh.write(f"{s.sample_id}\t{format_labels(tax, s.labels)}\t{vec}\n")


def load_feature_file(path: str | Path, taxonomy: Taxonomy) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise ParseError("first line must be dim=<d>", 1)
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise ParseError(f"bad dimension {lines[0]!r}", 1) from None
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
        try:
            sid = int(parts[0])
            vec = np.array([float(v) for v in parts[2].split(",")], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if vec.shape != (dim,):
            raise DimMismatch(f"line {lineno}: {vec.size} values, expected {dim}")
        labels = parse_labels(taxonomy, parts[1], lineno)
        try:
            check_labels(taxonomy, labels)
        except UnknownLabel as exc:
            raise UnknownLabel(f"line {lineno}: {exc}") from None
        samples.append(Sample(vec, labels, sid))
    return Dataset(tuple(samples), dim, taxonomy)
