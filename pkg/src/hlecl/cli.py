"""Command-line entry point: ``hlecl run|sweep|gen-data|validate``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import SWEEPABLE, ExperimentFile, parse_config
from .datasets import Dataset, gen_hier_gaussians, load_feature_file, split, write_feature_file
from .errors import ConfigError, DatasetError, HleError, ParseError, StreamError, TaxonomyError, UnsweepableKey
from .stream import audit_stream, make_stream
from .taxonomy import Taxonomy, balanced_taxonomy, read_taxonomy, write_taxonomy
from .trainer import MetricsLog, run_online, summarize

log = logging.getLogger("hlecl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
INPUT_ERRORS = (ConfigError, TaxonomyError, DatasetError, ParseError, StreamError, OSError)


def load_data(exp: ExperimentFile) -> tuple[Dataset, Dataset, Taxonomy]:
    tax_path = exp.path("taxonomy")
    if tax_path is not None:
        taxonomy = read_taxonomy(tax_path)
    else:
        taxonomy = balanced_taxonomy(exp["synth_level_sizes"])
    if exp["data"] == "synthetic":
        data = gen_hier_gaussians(
            taxonomy,
            exp["synth_feature_dim"],
            exp["synth_samples_per_leaf"],
            exp["synth_parent_spread"],
            exp["synth_child_spread"],
            exp["synth_noise"],
            exp["data_seed"],
        )
    else:
        data = load_feature_file(exp.path("data"), taxonomy)
    test_path = exp.path("test_data")
    if test_path is not None:
        return data, load_feature_file(test_path, taxonomy), taxonomy
    train, test = split(data, exp["test_fraction"], exp["data_seed"])
    return train, test, taxonomy


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_seed(args) -> MetricsLog:
    exp, seed, train, test, taxonomy = args
    return run_online(exp.run_config(seed), train, test, taxonomy)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HLECL_THREADS", "1")))
    except ValueError:
        return 1


def run_seeds(exp: ExperimentFile, seeds, data=None) -> list[MetricsLog]:
    train, test, taxonomy = data or load_data(exp)
    for seed in seeds:
        exp.run_config(seed)
    jobs = [(exp, s, train, test, taxonomy) for s in seeds]
    n = min(_workers(), len(jobs))
    if n <= 1:
        return [_run_seed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_seed, jobs))


def cmd_run(exp: ExperimentFile, seeds, out_dir: Path) -> list[Path]:
    """Write ``metrics_seed<s>.csv`` per seed and ``summary.json``; nothing on failure."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        logs = run_seeds(exp, seeds)
        for lg in logs:
            path = out_dir / f"metrics_seed{lg.seed}.csv"
            _atomic_write(path, lg.to_csv())
            written.append(path)
            log.info("seed %d: final %s (%.1fs)", lg.seed, lg.final, lg.wall_time)
        path = out_dir / "summary.json"
        _atomic_write(path, json.dumps(summarize(logs), indent=2, sort_keys=True) + "\n")
        written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


def cmd_sweep(exp: ExperimentFile, key: str, values, seeds, out_dir: Path) -> Path:
    """Run every value of ``key`` over all seeds and tabulate per-level final means."""
    if key not in SWEEPABLE:
        raise UnsweepableKey(f"{key!r} is not sweepable; choose from {', '.join(SWEEPABLE)}")
    variants = [exp.with_value(key, str(v)) for v in values]
    data = None if key.startswith(("synth_", "data_", "test_")) else load_data(exp)
    rows = []
    for raw, variant in zip(values, variants):
        summary = summarize(run_seeds(variant, seeds, data))
        rows.append((str(raw).strip(), summary["levels"]))
    levels = sorted({h for _, lv in rows for h in lv}, key=int)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"sweep_{key}.csv"
    header = [key] + [f"level{h}_{stat}" for h in levels for stat in ("final_mean", "final_std")]
    lines = [header]
    for raw, lv in rows:
        rec = [raw]
        for h in levels:
            st = lv.get(h, {})
            rec += ["" if st.get(s) is None else repr(st[s]) for s in ("final_mean", "final_std")]
        lines.append(rec)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    _atomic_write(path, buf.getvalue())
    return path


def _int_csv(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hlecl", description="Online continual learning on hierarchical label expansion")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment over one or more seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--seeds", type=_int_csv, help="override the config's seeds, e.g. 0,1,2")
    r.add_argument("--out", help="output directory (default: config out_dir)")

    s = sub.add_parser("sweep", help="sweep one numeric config key")
    s.add_argument("--config", required=True)
    s.add_argument("--sweep", required=True, metavar="KEY=V1,V2,...")
    s.add_argument("--seeds", type=_int_csv)
    s.add_argument("--out")

    g = sub.add_parser("gen-data", help="write a synthetic taxonomy and feature file")
    g.add_argument("--out", required=True)
    g.add_argument("--level-sizes", type=_int_csv, default=[5, 20])
    g.add_argument("--taxonomy", help="use this taxonomy file instead of --level-sizes")
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--samples-per-leaf", type=int, default=200)
    g.add_argument("--parent-spread", type=float, default=4.0)
    g.add_argument("--child-spread", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("validate", help="check a taxonomy, data file or config")
    v.add_argument("--taxonomy")
    v.add_argument("--data")
    v.add_argument("--config")
    return p


def _out_dir(exp: ExperimentFile, arg: str | None) -> Path:
    if arg:
        return Path(arg)
    p = Path(exp["out_dir"])
    return p if p.is_absolute() else exp.base_dir / p


def _validate(args) -> None:
    if args.config:
        exp = parse_config(args.config)
        train, test, tax = load_data(exp)
        cfg = exp.run_config(exp["seeds"][0])
        stream = make_stream(cfg.scenario, train, tax, 0, tasks_after_first=cfg.tasks_after_first,
                             first_task_fraction=cfg.first_task_fraction, num_tasks=cfg.num_tasks)
        audit_stream(stream)
        print(f"config ok: {len(train)} train / {len(test)} test samples, {len(stream.tasks)} tasks")
        return
    if not args.taxonomy:
        raise ConfigError("validate needs --taxonomy or --config")
    tax = read_taxonomy(args.taxonomy)
    print(f"taxonomy ok: {tax.num_levels} levels, sizes {tax.level_sizes}")
    if args.data:
        data = load_feature_file(args.data, tax)
        print(f"data ok: {len(data)} samples, dim {data.feature_dim}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            exp = parse_config(args.config)
            seeds = args.seeds or list(exp["seeds"])
            for p in cmd_run(exp, seeds, _out_dir(exp, args.out)):
                print(p)
        elif args.command == "sweep":
            exp = parse_config(args.config)
            key, sep, vals = args.sweep.partition("=")
            if not sep or not vals:
                raise ConfigError(f"--sweep expects KEY=V1,V2,..., got {args.sweep!r}")
            seeds = args.seeds or list(exp["seeds"])
            print(cmd_sweep(exp, key.strip(), [v.strip() for v in vals.split(",")], seeds, _out_dir(exp, args.out)))
        elif args.command == "gen-data":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            tax = read_taxonomy(args.taxonomy) if args.taxonomy else balanced_taxonomy(args.level_sizes)
            data = gen_hier_gaussians(tax, args.dim, args.samples_per_leaf, args.parent_spread,
                                      args.child_spread, args.noise, args.seed)
            write_taxonomy(tax, out / "taxonomy.tsv")
            write_feature_file(data, out / "features.tsv")
            print(out / "taxonomy.tsv")
            print(out / "features.tsv")
        else:
            _validate(args)
    except INPUT_ERRORS as exc:
        print(f"hlecl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HleError as exc:
        print(f"hlecl: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
