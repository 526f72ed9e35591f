"""Online continual learning on hierarchical label expansion.

Desk-scale implementation of pseudo-label guided memory eviction with flexible
memory sampling (PL-FMS), reservoir/class-balanced baselines, hierarchical
task streams and an any-time evaluation loop.
"""
from .datasets import Dataset, Sample, gen_hier_gaussians, load_feature_file, split, write_feature_file
from .learner import Batch, BatchItem, MultiHeadModel, init_model
from .memory import (
    ImportanceTracker,
    RehearsalMemory,
    balanced_random_insert,
    exact_importance,
    pl_insert,
    pl_select_removal,
    reservoir_insert,
    update_importance,
)
from .sampler import FmsState, er_build_batch, fms_build_batch, memory_only_batch, note_first_seen
from .stream import (
    TaskSpec,
    TaskStream,
    make_disjoint_stream,
    make_multi_depth_stream,
    make_single_depth_stream,
)
from .taxonomy import Taxonomy, balanced_taxonomy, build_taxonomy, read_taxonomy, write_taxonomy
from .trainer import MetricsLog, RunConfig, evaluate, run_online, summarize

__version__ = "0.1.0"
