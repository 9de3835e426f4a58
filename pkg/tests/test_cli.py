"""CLI tests: the full command pipeline on a tiny plan, exit codes, and the
frontier/report commands."""

import csv
import os

import numpy as np
import pytest

from edgecloud import harness, metrics
from edgecloud.cli import dispatch

from conftest import tiny_plan


@pytest.fixture()
def plan_file(tmp_path):
    path = tmp_path / "plan.json"
    harness.save_plan(path, tiny_plan())
    return str(path)


def test_unknown_subcommand_exits_2(capsys):
    assert dispatch(["does-not-exist"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_config_exits_2(tmp_path, capsys):
    code = dispatch(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_malformed_config_exits_2_with_field_path(tmp_path, capsys):
    cfg = harness.plan_to_dict(tiny_plan())
    del cfg["dataset"]["dim"]
    path = tmp_path / "plan.json"
    import json
    path.write_text(json.dumps(cfg))
    code = dispatch(["gen-data", "--config", str(path), "--out", str(tmp_path)])
    assert code == 2
    assert "plan.dataset.dim" in capsys.readouterr().err


def test_evaluate_before_train_exits_2(plan_file, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert dispatch(["evaluate", "--config", plan_file, "--out", out]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_full_pipeline(plan_file, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert dispatch(["gen-data", "--config", plan_file, "--out", out]) == 0
    assert dispatch(["train", "--config", plan_file, "--out", out]) == 0
    assert dispatch(["evaluate", "--config", plan_file, "--out", out]) == 0
    assert dispatch(["sweep", "--config", plan_file, "--out", out]) == 0
    for name in ("dataset.npz", "edge.npz", "cloud.npz", "adapter.npz",
                 "train_cloud.csv", "train_edge_kd.csv", "train_finetune.csv",
                 "reports.csv", "frontier_comp.csv", "frontier_comm.csv",
                 "sweep.csv", "sweep_frontier.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    rows = metrics.read_report_rows(os.path.join(out, "reports.csv"))
    labels = [r["label"] for r in rows]
    assert labels[:2] == ["edge", "cloud"]
    assert "independent" in labels

    # evaluated scores match an in-process run of the same plan
    result = harness.run_experiment(tiny_plan())
    by_label = {r.label: r for r in result.reports}
    for row in rows:
        rep = by_label[row["label"]]
        assert float(row["s_p"]) == rep.s_p
        assert float(row["accuracy"]) == rep.accuracy

    assert dispatch(["report", "--input", os.path.join(out, "reports.csv")]) == 0
    table = capsys.readouterr().out
    assert "label" in table and "independent" in table


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_exits_3(tmp_path, capsys):
    # a step large enough to overflow the next forward pass
    plan = tiny_plan()
    plan.stages["cloud"].learning_rate = 1e300
    path = tmp_path / "plan.json"
    harness.save_plan(path, plan)
    code = dispatch(["train", "--config", str(path), "--out", str(tmp_path / "out")])
    assert code == 3
    err = capsys.readouterr().err
    assert "diverged" in err and "base" in err


def test_frontier_command_on_hand_written_csv(tmp_path):
    src = tmp_path / "rows.csv"
    with open(src, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "s_p", "s_comp"])
        writer.writerow(["A", "0.9", "0.7"])
        writer.writerow(["B", "0.8", "0.8"])
        writer.writerow(["C", "0.95", "0.9"])
    dst = tmp_path / "front.csv"
    assert dispatch(["frontier", "--input", str(src), "--output", str(dst)]) == 0
    rows = metrics.read_report_rows(dst)
    assert [r["label"] for r in rows] == ["A", "C"]


def test_frontier_missing_column_exits_2(tmp_path, capsys):
    src = tmp_path / "rows.csv"
    src.write_text("label,s_p\nA,0.9\n")
    dst = tmp_path / "front.csv"
    assert dispatch(["frontier", "--input", str(src), "--output", str(dst)]) == 2
    assert "s_comp" in capsys.readouterr().err


def test_out_dir_from_environment(plan_file, tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv("EDGECLOUD_OUT", str(out))
    assert dispatch(["gen-data", "--config", plan_file]) == 0
    assert (out / "dataset.npz").exists()


def test_seed_override_changes_dataset(plan_file, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert dispatch(["gen-data", "--config", plan_file, "--out", out_a]) == 0
    assert dispatch(["gen-data", "--config", plan_file, "--out", out_b, "--seed", "99"]) == 0
    a = harness.Dataset.load(os.path.join(out_a, "dataset.npz"))
    b = harness.Dataset.load(os.path.join(out_b, "dataset.npz"))
    assert not np.array_equal(a.X, b.X)
