import csv
import json

import pytest

from hlecl.cli import main
from hlecl.trainer import read_metrics_csv

SMALL = """scenario = single_depth_single_label
method = pl_fms
data = synthetic
synth_level_sizes = 2,4
synth_feature_dim = 8
synth_samples_per_leaf = 30
hidden_layers = 16
memory_size = 20
eval_every = 25
ramp_T = 20
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(SMALL)
    return p


def test_run_three_seeds(cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--seeds", "0,1,2", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["metrics_seed0.csv", "metrics_seed1.csv", "metrics_seed2.csv", "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 1, 2] and set(summary["levels"]) == {"1", "2"}
    assert set(summary["levels"]["2"]) == {"final_mean", "final_std", "auc"}
    lg = read_metrics_csv(out / "metrics_seed1.csv")
    assert lg.seed == 1 and lg.method == "pl_fms"


def test_run_is_deterministic_and_leaves_inputs_alone(cfg, tmp_path):
    before = cfg.read_bytes()
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == 0
    for name in ("metrics_seed0.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert cfg.read_bytes() == before


def test_default_out_dir_is_relative_to_config(cfg, tmp_path):
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "runs" / "summary.json").exists()


def test_corrupt_taxonomy_exits_nonzero_without_outputs(tmp_path, capsys):
    (tmp_path / "tax.tsv").write_text("a\t1\t-\nb\t2\tc\nc\t2\tb\n")
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(SMALL + "taxonomy = tax.tsv\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert not list(out.glob("*.csv")) and not (out / "summary.json").exists()
    assert "error" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(SMALL + "ramp_T = -5\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "line 11" in capsys.readouterr().err


def test_sweep_two_values(cfg, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--sweep", "ramp_T=500,5000", "--seeds", "0,1", "--out", str(out)]) == 0
    rows = list(csv.reader((out / "sweep_ramp_T.csv").open()))
    assert rows[0] == ["ramp_T", "level1_final_mean", "level1_final_std", "level2_final_mean", "level2_final_std"]
    assert [r[0] for r in rows[1:]] == ["500", "5000"]


def test_sweep_matches_run(cfg, tmp_path):
    sw, run = tmp_path / "sw", tmp_path / "run"
    assert main(["sweep", "--config", str(cfg), "--sweep", "memory_size=20", "--seeds", "0,1", "--out", str(sw)]) == 0
    assert main(["run", "--config", str(cfg), "--seeds", "0,1", "--out", str(run)]) == 0
    row = list(csv.DictReader((sw / "sweep_memory_size.csv").open()))[0]
    summary = json.loads((run / "summary.json").read_text())["levels"]
    for h in ("1", "2"):
        assert float(row[f"level{h}_final_mean"]) == summary[h]["final_mean"]
        assert float(row[f"level{h}_final_std"]) == summary[h]["final_std"]


def test_sweep_data_key_regenerates_data(cfg, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--sweep", "synth_noise=0.1,2.0", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep_synth_noise.csv").open()))
    assert rows[0]["level2_final_mean"] != rows[1]["level2_final_mean"]


def test_unsweepable_key(cfg, tmp_path):
    assert main(["sweep", "--config", str(cfg), "--sweep", "scenario=a,b", "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--config", str(cfg), "--sweep", "ramp_T", "--out", str(tmp_path)]) == 2


def test_gen_data_then_validate_and_run(tmp_path, capsys):
    d = tmp_path / "d"
    assert main(["gen-data", "--out", str(d), "--level-sizes", "2,4", "--dim", "6", "--samples-per-leaf", "20"]) == 0
    assert main(["validate", "--taxonomy", str(d / "taxonomy.tsv"), "--data", str(d / "features.tsv")]) == 0
    assert "80 samples, dim 6" in capsys.readouterr().out
    cfg = tmp_path / "file.cfg"
    cfg.write_text("scenario = single_depth_dual_label\nmethod = er\ndata = d/features.tsv\n"
                   "taxonomy = d/taxonomy.tsv\nhidden_layers = 8\n")
    assert main(["validate", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "metrics_seed0.csv").exists()


def test_validate_reports_bad_data(tmp_path, capsys):
    (tmp_path / "t.tsv").write_text("p\t1\t-\nc\t2\tp\n")
    (tmp_path / "f.tsv").write_text("dim=2\n0\t2:c\t0.1,0.2\n1\t2:zz\t0.1,0.2\n")
    assert main(["validate", "--taxonomy", str(tmp_path / "t.tsv"), "--data", str(tmp_path / "f.tsv")]) == 2
    assert "line 3" in capsys.readouterr().err
