import json

import pandas as pd
import pytest

from metamarl.metamarl import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_parser, main
from metamarl.utils.config import config_hash, load_config

HEADER = "run_id,method,seed,phase,iteration,peer_id,chain_step,mean_return_self,mean_return_peers,auc"


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("METAMARL_SEED", raising=False)


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_train_then_test(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    assert main(["-q", "train", str(tiny_config_file), "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(load_config(tiny_config_file))
    assert manifest["master_seeds"] == [0]
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == HEADER
    checkpoint = out / "checkpoint_seed0.txt"
    assert checkpoint.is_file()

    assert main(["-q", "test", str(tiny_config_file), "--checkpoint", str(checkpoint)]) == EXIT_OK
    frame = pd.read_csv(out / "metrics.csv")
    assert set(frame["phase"]) == {"train", "test"}
    assert (out / "metrics.csv").read_text().count(HEADER) == 1


def test_test_rejects_other_config(tmp_path, tiny_config_file):
    out = tmp_path / "run"
    main(["-q", "train", str(tiny_config_file), "--out", str(out)])
    other = tmp_path / "other.cfg"
    other.write_text(tiny_config_file.read_text() + "K = 3\n")
    code = main(["-q", "test", str(other), "--checkpoint", str(out / "checkpoint_seed0.txt")])
    assert code == EXIT_RUNTIME


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("K = 0\n")
    assert main(["-q", "train", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["-q", "train", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_fig3_writes_csv(tmp_path):
    cfg = tmp_path / "z.cfg"
    cfg.write_text("game = zero_sum\ninner_lr = 0.75\nouter_lr = 0.01\nmax_iters = 4\nn_samples = 5\n")
    assert main(["-q", "fig3", "--out", str(tmp_path / "f"), "--config", str(cfg)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "f" / "fig3.csv")
    assert list(frame.columns) == ["iteration", "method", "mean", "ci95"]
    assert len(frame) == 8


def test_dump_population(tmp_path, tiny_config_file):
    out = tmp_path / "pop.tsv"
    assert main(["-q", "dump-population", str(tiny_config_file), "--out", str(out)]) == EXIT_OK
    records = [line for line in out.read_text().splitlines() if not line.startswith("#")]
    assert len(records) == 480


@pytest.mark.slow
def test_gradcheck_ipd_passes(capsys):
    assert main(["-q", "gradcheck", "--game", "ipd"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_gradcheck_zero_sum_passes(capsys):
    assert main(["-q", "gradcheck", "--game", "zero_sum"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "zero_sum_closed_form" in out


def _train_bytes(tmp_path, config_text, workers, name):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(config_text.replace("workers = 1", f"workers = {workers}").replace("seeds = 0", "seeds = 0, 1"))
    out = tmp_path / name
    assert main(["-q", "train", str(cfg), "--out", str(out)]) == EXIT_OK
    return (out / "metrics.csv").read_bytes()


@pytest.mark.parametrize("workers", [1, 8])
def test_metrics_do_not_depend_on_worker_count(tmp_path, tiny_config_text, workers):
    reference = _train_bytes(tmp_path, tiny_config_text, 1, "reference")
    assert _train_bytes(tmp_path, tiny_config_text, workers, f"w{workers}") == reference


def test_compare_writes_summary_and_checkpoints(tmp_path, tiny_config_text):
    cfg = tmp_path / "cmp.cfg"
    cfg.write_text(tiny_config_text.replace("seeds = 0", "seeds = 0, 1"))
    out = tmp_path / "cmp"
    code = main(["-q", "compare", str(cfg), "--variants", "meta_mapg,reinforce,meta_mapg_om", "--workers", "2", "--out", str(out)])
    assert code == EXIT_OK
    summary = pd.read_csv(out / "summary.csv")
    assert list(summary["method"]) == ["meta_mapg", "meta_mapg_om", "reinforce"]
    assert set(summary["n"]) == {2}
    frame = pd.read_csv(out / "metrics.csv")
    assert set(frame["phase"]) == {"train", "test"}
    assert set(frame["run_id"]) == {f"ipd-{m}-s{s}" for m in ("meta_mapg", "reinforce", "meta_mapg_om") for s in (0, 1)}
    assert (out / "checkpoint_meta_mapg_om_seed1.txt").is_file()


def test_compare_rejects_unknown_variant(tmp_path, tiny_config_file):
    code = main(["-q", "compare", str(tiny_config_file), "--variants", "meta_sgd", "--out", str(tmp_path / "x")])
    assert code == EXIT_CONFIG


def test_compare_matches_sequential_training(tmp_path, tiny_config_text):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(tiny_config_text)
    assert main(["-q", "train", str(cfg), "--out", str(tmp_path / "train")]) == EXIT_OK
    assert main(["-q", "compare", str(cfg), "--variants", "meta_mapg", "--out", str(tmp_path / "cmp")]) == EXIT_OK
    trained = pd.read_csv(tmp_path / "train" / "metrics.csv")
    compared = pd.read_csv(tmp_path / "cmp" / "metrics.csv")
    pd.testing.assert_frame_equal(compared[compared["phase"] == "train"].reset_index(drop=True), trained)


@pytest.mark.slow
def test_desk_ipd_method_ordering(tmp_path):
    out = tmp_path / "desk"
    assert main(["-q", "compare", "ipd_desk.cfg", "--out", str(out)]) == EXIT_OK
    auc = pd.read_csv(out / "summary.csv").set_index("method")["mean"]
    assert auc["meta_mapg"] >= auc["meta_pg"] >= auc["reinforce"]
    assert auc["meta_mapg"] - auc["reinforce"] >= 0.5
    assert auc["meta_pg"] <= auc["meta_mapg_om"] <= auc["meta_mapg"] + 0.1
