import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hlecl.datasets import Sample, gen_hier_gaussians, split
from hlecl.learner import init_model
from hlecl.memory import ImportanceTracker, RehearsalMemory
from hlecl.taxonomy import balanced_taxonomy, build_taxonomy


@pytest.fixture
def tax24():
    """Two parents p1, p2 with children c1..c4."""
    return build_taxonomy(
        2,
        [("c1", "p1"), ("c2", "p1"), ("c3", "p2"), ("c4", "p2")],
        {"p1": 1, "p2": 1, "c1": 2, "c2": 2, "c3": 2, "c4": 2},
    )


@pytest.fixture(scope="session")
def tax_5x4():
    return balanced_taxonomy((5, 20))


@pytest.fixture(scope="session")
def data_5x4(tax_5x4):
    ds = gen_hier_gaussians(tax_5x4, 32, 40, 4.0, 1.0, 0.3, seed=3)
    return split(ds, 0.25, 3)


def make_sample(sid, labels, dim=4, rng=None):
    rng = rng or np.random.default_rng(sid)
    return Sample(rng.standard_normal(dim), tuple(sorted(labels)), sid)


def two_level_model(rng, n1=2, n2=4, dim=4):
    m = init_model(dim, [6], seed=int(rng.integers(1 << 30)))
    for lab in range(n1):
        m.expand_head(1, lab)
    for lab in range(n1, n1 + n2):
        m.expand_head(2, lab)
    for p in m.parameters():
        p += rng.normal(scale=1.0, size=p.shape)
    return m


def random_pl_instance(rng):
    n1 = int(rng.integers(1, 3))
    n2 = int(rng.integers(1, 7 - n1))
    model = two_level_model(rng, n1, n2)
    m = int(rng.integers(1, 21))
    mem = RehearsalMemory(m)
    tracker = ImportanceTracker()
    for i in range(m):
        coarse, fine = (1, int(rng.integers(0, n1))), (2, int(rng.integers(n1, n1 + n2)))
        labels = [[coarse], [fine], [coarse, fine]][int(rng.choice(3, p=[0.4, 0.4, 0.2]))]
        mem.append(make_sample(i, labels, rng=rng))
        # coarse values make importance ties common
        tracker.values[i] = float(rng.integers(0, 4)) if rng.random() < 0.5 else float(rng.normal())
    return mem, tracker, model
