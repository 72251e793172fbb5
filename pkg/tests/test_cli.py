import csv
import json
import subprocess
import sys

import pytest

from forescene.cli import anticipation_tasks, main
from forescene.config import Settings
from forescene.graph import GraphSequence
from forescene.io import read_jsonl, write_jsonl

from conftest import synthetic_graphs

MICRO = """
n_videos = 10
scripted = false
min_length = 30
max_length = 30
d_vis = 8
d_box_proj = 4
d_sem = 4
d_node = 12
d_edge = 20
d_union = 4
gcn_layers = 2
C = 8
N = 5
L = 1
heads = 2
d_head = 4
gae_epochs = 2
gae_batch = 64
T = 5
S = 6
dit_depth = 1
dit_heads = 2
dit_width = 16
ldm_iters = 6
ldm_batch = 4
log_every = 2
best_of = (1, 2, 3)
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Runs the whole pipeline once on a micro config; yields (invoke, data dir, config path)."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "micro.cfg"
    cfg.write_text(MICRO)
    data = root / "data"

    def invoke(*args, data_dir=data):
        return main([args[0], "--config", str(cfg), "--data-dir", str(data_dir), *args[1:]])

    for cmd in (["gen-synthetic"], ["build-splits"], ["train-gae"], ["train-ldm"],
                ["anticipate", "--fraction", "0.9", "--rollouts", "3"], ["evaluate", "--fraction", "0.9"]):
        assert invoke(*cmd) == 0, cmd
    return invoke, data, cfg


def test_every_command_writes_a_manifest(run):
    _, data, _ = run
    for sub in ("corpus", "splits", "gae", "ldm", "rollouts/F=0.9", "results/F=0.9"):
        m = json.loads((data / sub / "run_manifest.json").read_text())
        assert m["config"]["T"] == 5 and m["seeds"] == {"seed": 0}
        assert m["outputs"]
    ldm = json.loads((data / "ldm" / "run_manifest.json").read_text())
    assert set(ldm["checkpoints"]) == {"gae", "ldm"}


def test_curve_rows_match_epochs(run):
    _, data, _ = run
    rows = list(csv.DictReader((data / "gae" / "curve.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2]


def test_fraction_floor_convention(run):
    _, data, _ = run
    rows = read_jsonl(data / "rollouts" / "F=0.9" / "rollouts.jsonl")
    # 30 frames: F_s = floor(0.9 * 29) = 26 and frames 27..29 are predicted
    assert {r["F_s"] for r in rows} == {26}
    assert sorted({r["frame_index"] for r in rows}) == [27, 28, 29]
    n_tasks = len({r["video_id"] for r in rows})
    assert len(rows) == n_tasks * 3 * 3
    assert {r["seed"] for r in rows} == {0, 1, 2}


def test_anticipation_tasks_arithmetic():
    seq = GraphSequence("v", synthetic_graphs(30))
    assert [(n, F) for n, _, F in anticipation_tasks([seq], Settings(), fraction=0.9)] == [("F=0.9", 26)]
    assert [F for _, _, F in anticipation_tasks([seq], Settings(), fraction=0.3)] == [8]


def test_rollout_count_scales_with_r(run):
    invoke, data, _ = run
    assert invoke("anticipate", "--fraction", "0.5", "--rollouts", "1") == 0
    one = len(read_jsonl(data / "rollouts" / "F=0.5" / "rollouts.jsonl"))
    assert invoke("anticipate", "--fraction", "0.5", "--rollouts", "10", "--force") == 0
    ten = len(read_jsonl(data / "rollouts" / "F=0.5" / "rollouts.jsonl"))
    assert ten == 10 * one


def test_results_monotone_and_rerun_identical(run):
    invoke, data, _ = run
    path = data / "results" / "F=0.9" / "results.csv"
    first = path.read_bytes()
    rows = [r for r in csv.DictReader(first.decode().splitlines()) if r["scope"] == "aggregate"
            and r["method"] == "model"]
    by = {}
    for r in rows:
        by.setdefault((r["metric"], r["K"], r["regime"]), {})[int(r["r"])] = float(r["value"])
    assert all(v[1] <= v[2] <= v[3] for v in by.values())
    assert invoke("evaluate", "--fraction", "0.9", "--force") == 0
    assert path.read_bytes() == first


def test_same_seed_same_hashes(run, tmp_path):
    invoke, data, _ = run
    assert invoke("gen-synthetic", data_dir=tmp_path / "again") == 0
    a = json.loads((data / "corpus" / "run_manifest.json").read_text())["outputs"]
    b = json.loads((tmp_path / "again" / "corpus" / "run_manifest.json").read_text())["outputs"]
    assert a == b
    assert invoke("gen-synthetic", "--seed", "5", data_dir=tmp_path / "other") == 0
    c = json.loads((tmp_path / "other" / "corpus" / "run_manifest.json").read_text())["outputs"]
    assert c != a


def test_resume_continues_epoch_numbering(run, tmp_path):
    invoke, data, cfg = run
    import shutil

    shutil.copytree(data / "corpus", tmp_path / "corpus")
    shutil.copytree(data / "gae", tmp_path / "gae")
    assert invoke("train-gae", "--resume", "--set", "gae_epochs=4", data_dir=tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "gae" / "curve.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3, 4]
    assert invoke("train-gae", "--resume", "--set", "C=6", data_dir=tmp_path) == 2


def test_exit_codes(run, tmp_path):
    invoke, data, cfg = run
    # existing output without --force
    assert invoke("gen-synthetic") == 2
    # bad config key and bad value
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["gen-synthetic", "--config", str(bad), "--data-dir", str(tmp_path / "x")]) == 2
    assert invoke("gen-synthetic", "--set", "n_videos=many", data_dir=tmp_path / "y") == 2
    # fraction outside (0, 1)
    assert invoke("anticipate", "--fraction", "1.0") == 2
    assert invoke("anticipate", "--fraction", "0") == 2
    # missing prerequisites
    empty = tmp_path / "empty"
    assert invoke("train-ldm", data_dir=empty) == 3
    assert invoke("build-splits", data_dir=empty) == 3
    assert invoke("anticipate", "--splits", str(tmp_path / "none.jsonl")) == 3
    assert invoke("evaluate", "--rollouts-name", "nothing") == 3
    # unknown subcommand
    assert main(["frobnicate"]) == 2


def test_evaluate_all_ids_unknown_fails(run, tmp_path):
    invoke, data, _ = run
    import shutil

    shutil.copytree(data / "corpus", tmp_path / "corpus")
    rows = read_jsonl(data / "rollouts" / "F=0.9" / "rollouts.jsonl")
    for r in rows:
        r["video_id"] = "ghost_" + r["video_id"]
    write_jsonl(tmp_path / "rollouts" / "bad" / "rollouts.jsonl", rows)
    assert invoke("evaluate", "--rollouts-name", "bad", data_dir=tmp_path) == 4


def test_splits_mode_and_plots(run):
    invoke, data, _ = run
    splits = read_jsonl(data / "splits" / "splits.jsonl")
    assert invoke("anticipate", "--set", "mode=splits") == 0
    rows = read_jsonl(data / "rollouts" / "splits" / "rollouts.jsonl")
    assert {(r["video_id"], r["F_s"]) for r in rows} == {(s["video_id"], s["F_s"]) for s in splits}
    assert invoke("evaluate", "--set", "mode=splits") == 0
    assert invoke("plot") == 0
    pngs = sorted(p.name for p in (data / "plots").glob("*.png"))
    assert "difficulty_cdf.png" in pngs and "gae_curve.png" in pngs and "ldm_curve.png" in pngs
    assert any(n.endswith("_jsim_vs_r.png") for n in pngs)


def test_env_var_data_root(run, tmp_path, monkeypatch):
    _, _, cfg = run
    monkeypatch.setenv("FORESCENE_DATA_DIR", str(tmp_path / "env"))
    assert main(["gen-synthetic", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "corpus" / "records.jsonl").exists()
    # explicit flag beats the environment
    assert main(["gen-synthetic", "--config", str(cfg), "--data-dir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "corpus" / "records.jsonl").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "forescene", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
