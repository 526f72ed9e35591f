"""Acceptance suite. Each test prints one ``[PASS]``/``[FAIL] criterion N`` line.

Run alone with ``pytest tests/test_acceptance.py -v -s``.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import binom

from conftest import make_sample, random_pl_instance, two_level_model
from hlecl.datasets import Sample, gen_hier_gaussians, split
from hlecl.learner import init_model
from hlecl.memory import (
    ImportanceTracker,
    MemoryAuditError,
    RehearsalMemory,
    balanced_importance_insert,
    balanced_random_insert,
    pl_insert,
    pl_select_removal,
    reservoir_insert,
)
from hlecl.sampler import FmsState, fms_build_batch
from hlecl.stream import audit_stream, make_stream
from hlecl.taxonomy import balanced_taxonomy
from hlecl.trainer import OnlineRun, RunConfig, summarize
from oracles import brute_force_pl_removal, finite_difference_grads, max_relative_error


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return _report


def test_criterion_1_pl_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    start = time.process_time()
    matches = 0
    for _ in range(1000):
        mem, tracker, model = random_pl_instance(rng)
        imp = [tracker.values[i] for i in range(len(mem))]
        matches += pl_select_removal(mem, tracker, model) == brute_force_pl_removal(mem.slots, imp, model)
    cpu = time.process_time() - start
    report(1, matches == 1000 and cpu < 30, f"{matches}/1000 eviction choices match brute force, {cpu:.1f}s CPU")


def test_criterion_2_fms_ramp(report):
    T = 1000
    state = FmsState(T)
    state.note_first_seen((2, 9), 1)
    mem = RehearsalMemory(5)
    for i in range(5):
        mem.append(make_sample(100 + i, [(2, 5)]))
    buf = [make_sample(0, [(2, 9)])]
    rng = np.random.default_rng(7)
    expected = {0: 0.0, T // 4: 0.25, T // 2: 0.5, T: 1.0, 2 * T: 1.0}
    freqs, ok = {}, True
    for offset, p in expected.items():
        kept = sum(fms_build_batch(buf, mem, state, 1 + offset, rng).count("stream") for _ in range(10_000))
        freqs[offset] = kept / 10_000
        if p in (0.0, 1.0):
            ok &= freqs[offset] == p
        else:
            ok &= abs(freqs[offset] - p) <= 0.02
    detail = ", ".join(f"t-Tc={o}: {f:.4f}" for o, f in freqs.items())
    report(2, ok, f"acceptance frequencies {detail} (T={T})")


def test_criterion_3_gradient_check(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 6))
        hidden = tuple(int(w) for w in rng.integers(2, 7, size=int(rng.integers(0, 3))))
        model = init_model(dim, hidden, seed=int(rng.integers(1 << 30)))
        label = 0
        for level in (1, 2):
            for _ in range(int(rng.integers(1, 4))):
                model.expand_head(level, label)
                label += 1
        for p in model.parameters():
            p += rng.normal(scale=0.5, size=p.shape)
        samples = []
        for i in range(int(rng.integers(1, 6))):
            levels = [h for h in (1, 2) if rng.random() < 0.6] or [2]
            labels = tuple((h, int(rng.choice(model.classes_at(h)))) for h in levels)
            samples.append(Sample(rng.standard_normal(dim), labels, i))
        _, analytic = model.gradients(samples)
        analytic = [np.zeros_like(p) if g is None else g for p, g in zip(model.parameters(), analytic)]
        worst = max(worst, max_relative_error(analytic, finite_difference_grads(model, samples, eps=1e-6)))
    report(3, worst <= 1e-5, f"max relative gradient error over 100 models = {worst:.2e} (limit 1e-5)")


def test_criterion_4_memory_fuzz(report):
    rng = np.random.default_rng(5)
    model = two_level_model(rng, 2, 4)
    ops, violations = 0, 0
    per_policy = {}
    policies = ("pl", "reservoir", "balanced", "balanced_importance")
    while ops < 100_000:
        policy = policies[(ops // 500) % len(policies)]
        cap = int(rng.integers(1, 21))
        mem, tracker = RehearsalMemory(cap), ImportanceTracker()
        for n in range(1, 501):
            coarse, fine = (1, int(rng.integers(0, 2))), (2, int(rng.integers(2, 6)))
            labels = [[coarse], [fine], [coarse, fine]][int(rng.integers(3))]
            s = make_sample(ops, labels, rng=rng)
            if policy == "pl":
                pl_insert(mem, tracker, model, s)
            elif policy == "reservoir":
                reservoir_insert(mem, s, n, rng)
            elif policy == "balanced":
                balanced_random_insert(mem, s, rng)
            else:
                balanced_importance_insert(mem, tracker, s)
            if policy in ("pl", "balanced_importance"):
                tracker.values = {j: v + float(rng.normal()) for j, v in tracker.values.items()}
            ops += 1
            per_policy[policy] = per_policy.get(policy, 0) + 1
            try:
                mem.audit()
                assert len(mem) == min(n, cap)
            except (AssertionError, MemoryAuditError):
                violations += 1
    counts = ", ".join(f"{k} {v}" for k, v in per_policy.items())
    report(4, violations == 0, f"{ops} inserts/evictions ({counts}), {violations} audit or capacity violations")


def test_criterion_5_reservoir_statistics(report):
    N, m, trials = 10_000, 100, 200
    items = [Sample(np.zeros(1), ((1, 0),), i) for i in range(N)]
    kept = np.zeros(N)
    for trial in range(trials):
        rng = np.random.default_rng(1000 + trial)
        mem = RehearsalMemory(m)
        for n, s in enumerate(items, start=1):
            reservoir_insert(mem, s, n, rng)
        for s in mem.slots:
            kept[s.sample_id] += 1
    p = m / N
    freq = kept / trials
    sigma = math.sqrt(p * (1 - p) / trials)
    outside = int(np.sum(np.abs(freq - p) > 3 * sigma))
    # each item's count is Binomial(trials, p); this is how many should land outside 3 sigma by chance
    tail = binom.sf(math.floor(trials * (p + 3 * sigma)), trials, p) + binom.cdf(math.ceil(trials * (p - 3 * sigma)) - 1, trials, p)
    allowed = N * tail + 3 * math.sqrt(N * tail * (1 - tail))
    deciles = freq.reshape(10, -1).mean(axis=1)
    dec_sigma = math.sqrt(p * (1 - p) / (trials * (N // 10)))
    dec_ok = bool(np.all(np.abs(deciles - p) <= 3 * dec_sigma))
    ok = outside <= allowed and dec_ok
    report(5, ok, f"{outside}/{N} items outside m/N +- 3 sigma (binomial expectation {N * tail:.1f}, "
                  f"allowed {allowed:.1f}); stream-position deciles {np.round(deciles, 5).tolist()} within 3 sigma: {dec_ok}")


@pytest.fixture(scope="module")
def ordering_runs():
    tax = balanced_taxonomy((5, 20))
    data = gen_hier_gaussians(tax, 32, 200, noise_sigma=0.3, seed=0)
    train, test = split(data, 0.25, seed=0)
    runs = {}
    for method in ("pl_fms", "er"):
        runs[method] = []
        for seed in range(5):
            cfg = RunConfig(scenario="single_depth_single_label", method=method, memory_size=200,
                            tasks_after_first=2, seed=seed)
            run = OnlineRun(cfg, train, test, tax)
            run.run()
            runs[method].append(run)
    return train, runs


def test_criterion_6_relative_ordering(report, ordering_runs):
    train, runs = ordering_runs
    logs = {k: [r.log for r in v] for k, v in runs.items()}
    assert all(c == 150 for c in train.leaf_counts().values())
    pl = summarize(logs["pl_fms"])["levels"]["2"]
    er = summarize(logs["er"])["levels"]["2"]
    margin = pl["final_mean"] - er["final_mean"]
    slowest = max(lg.wall_time for lgs in logs.values() for lg in lgs)
    ok = margin > 0 and slowest <= 300
    report(6, ok, f"level-2 final accuracy pl_fms {pl['final_mean']:.4f} +- {pl['final_std']:.4f} vs "
                  f"er {er['final_mean']:.4f} +- {er['final_std']:.4f}, margin {100 * margin:+.2f} points "
                  f"over 5 seeds; slowest run {slowest:.1f}s")


def test_criterion_7_cold_start(report, ordering_runs):
    _, runs = ordering_runs
    checked, bad = 0, 0
    for run in runs["pl_fms"]:
        size = run.config.stream_batch_size
        for spec in run.stream.tasks[1:]:
            it = (spec.start - 1) // size + 1
            first = [s for s in run.log.batch_stats if s.iteration == it]
            assert first, f"no training step at iteration {it}"
            checked += 1
            # the boundary buffer must actually bring new classes, with memory able to replace them
            assert any(t == it for t in run.fms.first_seen.values())
            bad += first[0].n_stream_new != 0 or first[0].memory_len < 2 * size
    report(7, checked == 10 and bad == 0,
           f"{checked} task boundaries (2 per seed x 5 seeds): {bad} first batches with new-class stream samples")


def test_criterion_8_determinism_across_processes(report, tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("scenario = single_depth_single_label\nmethod = pl_fms\ndata = synthetic\n"
                   "synth_level_sizes = 3,9\nsynth_samples_per_leaf = 40\nseeds = 3\n")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "hlecl.cli", "run", "--config", str(cfg), "--out", str(out)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(((out / "metrics_seed3.csv").read_bytes(), (out / "summary.json").read_bytes()))
    same = outs[0] == outs[1]
    report(8, same, f"two processes wrote {'byte-identical' if same else 'different'} metrics CSVs "
                    f"({len(outs[0][0])} bytes) and summaries")


def test_criterion_9_cadence(report, data_5x4, tax_5x4):
    train, test = data_5x4
    results = []
    for scenario, every in (("single_depth_single_label", 100), ("single_depth_single_label", 37),
                            ("multi_depth", 50), ("disjoint", 64)):
        tax = tax_5x4
        cfg = RunConfig(scenario=scenario, method="er", eval_every=every, num_tasks=4, hidden_layers=(16,))
        run = OnlineRun(cfg, train, test, tax)
        lg = run.run()
        stream = run.stream
        N = len(stream)
        ends = {stream.task_bounds(s.index)[1] - 1 for s in stream.tasks}
        expected = math.ceil(N / every) + len(ends - set(range(0, N, every)))
        for h in lg.levels:
            rows = [r for r in lg.rows if r[2] == h]
            results.append((scenario, every, h, len(rows), expected))
    ok = all(got == exp for *_, got, exp in results)
    detail = "; ".join(f"{s} dn={e} level {h}: {g}/{x} rows" for s, e, h, g, x in results)
    report(9, ok, detail)


def test_criterion_10_multi_depth_stream(report):
    sizes = (2, 4, 8, 20, 100)
    tax = balanced_taxonomy(sizes)
    data = gen_hier_gaussians(tax, 16, 10, seed=0)
    stream = make_stream("multi_depth", data, tax, seed=0)
    introduced = [len(s.introduced) for s in stream.tasks]
    try:
        audit_stream(stream)
        audit = "passes"
    except Exception as exc:  # reported, then failed below
        audit = f"fails: {exc}"
    ok = len(stream.tasks) == 5 and tuple(introduced) == sizes and audit == "passes"
    report(10, ok, f"{len(stream.tasks)} tasks introducing {introduced} classes; stream audit {audit}")
