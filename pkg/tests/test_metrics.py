import numpy as np
import pytest

from metamarl.utils.metrics import COLUMNS, RunMetrics, read_metrics, summarize_auc, write_metrics

HEADER = "run_id,method,seed,phase,iteration,peer_id,chain_step,mean_return_self,mean_return_peers,auc"


def test_add_chain_rows():
    metrics = RunMetrics("ipd-meta_mapg-s0", "meta_mapg", 0)
    metrics.add_chain("test", 0, 12, [1.0, 2.0, 4.0], [0.0, -1.0, -3.0])
    frame = metrics.to_frame()
    assert list(frame.columns) == COLUMNS
    assert len(frame) == 4
    assert list(frame["chain_step"][:3]) == [0, 1, 2]
    summary = frame.iloc[-1]
    assert frame["chain_step"].isna().iloc[-1]
    assert summary["auc"] == pytest.approx(6.0)
    assert summary["mean_return_self"] == pytest.approx(3.0)
    assert summary["mean_return_peers"] == pytest.approx(-2.0)
    assert frame["auc"].isna().sum() == 3


def test_summary_only_rows_and_bad_phase():
    metrics = RunMetrics("r", "m", 1)
    metrics.add_chain("train", 4, 0, [0.0, 1.5], [0.0, 0.5], per_step=False)
    assert len(metrics) == 1
    with pytest.raises(ValueError):
        metrics.add_chain("warmup", 0, 0, [0.0, 1.0], [0.0, 1.0])


def test_csv_contract(tmp_path):
    metrics = RunMetrics("r", "meta_pg", 2)
    metrics.add_chain("val", 1, 3, [0.1, 1.0 / 3.0], [0.2, 0.4])
    path = write_metrics(str(tmp_path / "out" / "metrics.csv"), [metrics.to_frame()])
    lines = open(path).read().splitlines()
    assert lines[0] == HEADER
    assert len(lines) == 4
    assert "0.33333333333333331" in lines[2]
    frame = read_metrics(path)
    assert frame["chain_step"].isna().sum() == 1
    assert frame["mean_return_self"].iloc[1] == 1.0 / 3.0


def test_append_keeps_single_header(tmp_path):
    path = str(tmp_path / "metrics.csv")
    first = RunMetrics("a", "m", 0)
    first.add_chain("train", 0, 0, [0.0, 1.0], [0.0, 1.0], per_step=False)
    second = RunMetrics("a", "m", 0)
    second.add_chain("test", 0, 1, [0.0, 2.0], [0.0, 1.0], per_step=False)
    write_metrics(path, [first.to_frame()])
    write_metrics(path, [second.to_frame()], append=True)
    lines = open(path).read().splitlines()
    assert lines.count(HEADER) == 1
    assert len(lines) == 3


def test_summarize_auc_across_seeds():
    rows = RunMetrics("x", "meta_mapg", 0)
    for seed, aucs in ((0, [1.0, 3.0]), (1, [4.0, 4.0])):
        run = RunMetrics("x", "meta_mapg", seed)
        for peer, auc in enumerate(aucs):
            run.add_chain("test", 0, peer, [0.0, auc], [0.0, 0.0])
        rows.extend(run)
    summary = summarize_auc(rows.to_frame())
    assert list(summary["method"]) == ["meta_mapg"]
    assert summary["mean"].iloc[0] == pytest.approx(3.0)
    assert summary["n"].iloc[0] == 2
    assert summary["ci95"].iloc[0] == pytest.approx(1.96 * np.std([2.0, 4.0], ddof=1) / np.sqrt(2))
    assert summarize_auc(rows.to_frame(), phase="val").empty
