import csv
import json

import numpy as np
import pytest

from amrec.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, RunConfig, build_parser, main, resolve_config
from amrec.data import load_params, load_split, write_fmat

TINY = ["--K", "8", "--mf-epochs", "2", "--vbpr-epochs", "2", "--epochs", "2", "--batch-size", "64"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(root), "--num-users", "50", "--num-items", "150",
                 "--interactions-per-user", "6"]) == EXIT_OK
    return root


def data_flags(dataset):
    return ["--interactions", str(dataset / "interactions.tsv"), "--items", str(dataset / "items.txt"),
            "--features", str(dataset / "features.fmat")]


def test_usage_errors_exit_1(capsys):
    assert main_exit(["bogus"]) == EXIT_USAGE
    assert main_exit(["train", "--K", "notanumber"]) == EXIT_USAGE
    assert main(["train", "--kind", "svd"]) == EXIT_USAGE


def main_exit(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    return e.value.code


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["train", "--interactions", str(tmp_path / "nope.tsv"), "--out", str(tmp_path)]) == EXIT_DATA
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == EXIT_DATA


def test_eval_without_checkpoint(dataset, tmp_path, capsys):
    code = main(["eval", *data_flags(dataset), "--out", str(tmp_path)])
    assert code == EXIT_DATA
    assert "no checkpoint" in capsys.readouterr().err


def test_non_finite_exit_3(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.fmat"
    rows = np.ones((150, 4))
    rows[0, 0] = 1e300
    write_fmat(bad, rows, dtype="<f8")
    flags = ["--interactions", str(dataset / "interactions.tsv"), "--items", str(dataset / "items.txt"),
             "--features", str(bad), "--kind", "duif", "--eta", "10", *TINY, "--out", str(tmp_path)]
    with np.errstate(all="ignore"):
        assert main(["train", *flags]) == EXIT_NUMERIC


def test_train_eval_byte_identical(dataset, tmp_path):
    outs = []
    for run, threads in (("a", "1"), ("b", "4")):
        flags = [*data_flags(dataset), *TINY, "--out", str(tmp_path / run), "--threads", threads]
        assert main(["train", *flags]) == EXIT_OK
        assert main(["eval", *flags]) == EXIT_OK
        outs.append((tmp_path / run / "metrics.json").read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["seed"] == 0 and len(doc["config_hash"]) == 16
    assert set(doc["metrics"]) == {f"{m}@{n}" for m in ("HR", "NDCG") for n in (5, 10, 20)}
    lines = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(x)["stage"] for x in lines] == ["mf"] * 2 + ["vbpr"] * 2 + ["amr"] * 2


def test_lambda_zero_matches_vbpr_pipeline(dataset, tmp_path):
    base = [*data_flags(dataset), "--K", "8", "--batch-size", "64", "--mf-epochs", "2"]
    assert main(["train", *base, "--kind", "amr", "--lam", "0", "--vbpr-epochs", "2", "--epochs", "3",
                 "--out", str(tmp_path / "amr")]) == EXIT_OK
    assert main(["train", *base, "--kind", "vbpr", "--epochs", "2", "--out", str(tmp_path / "vbpr")]) == EXIT_OK
    # the AMR run's VBPR stage equals the standalone VBPR run
    a, _ = load_params(tmp_path / "amr" / "stages" / "vbpr")
    b, _ = load_params(tmp_path / "vbpr" / "checkpoint")
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)


def test_split_round_trip(dataset, tmp_path):
    assert main(["split", *data_flags(dataset), "--out", str(tmp_path)]) == EXIT_OK
    split = load_split(tmp_path / "split")
    assert len(split.test) == 50
    assert len(split.train) == 50 * 5
    # training from the split directory gives the same model as splitting on the fly
    flags = ["--features", str(dataset / "features.fmat"), *TINY]
    assert main(["train", "--split", str(tmp_path / "split"), *flags, "--out", str(tmp_path / "s")]) == EXIT_OK
    assert main(["train", *data_flags(dataset), *TINY, "--out", str(tmp_path / "f")]) == EXIT_OK
    a, _ = load_params(tmp_path / "s" / "checkpoint")
    b, _ = load_params(tmp_path / "f" / "checkpoint")
    np.testing.assert_array_equal(a.E, b.E)


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"epsilon": 0.3, "K": 16, "out": "from_file"}))
    args = build_parser().parse_args(["train", "--config", str(cfg), "--K", "32"])
    monkeypatch.delenv("AMREC_OUT", raising=False)
    rc = resolve_config(args, environ={})
    assert (rc.epsilon, rc.K, rc.out) == (0.3, 32, "from_file")
    rc = resolve_config(args, environ={"AMREC_OUT": "env_out", "AMREC_THREADS": "2"})
    assert (rc.out, rc.threads) == ("env_out", 2)
    # output location and thread count do not enter the config hash
    assert RunConfig(out="x", threads=1).config_hash == RunConfig(out="y", threads=8).config_hash
    assert RunConfig(seed=1).config_hash != RunConfig(seed=2).config_hash


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"epsilonn": 0.3}))
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE


def test_attack_and_report(dataset, tmp_path):
    flags = [*data_flags(dataset), *TINY, "--out", str(tmp_path)]
    assert main(["train", *flags]) == EXIT_OK
    assert main(["eval", *flags]) == EXIT_OK
    assert main(["attack", *flags, "--attack-modes", "fgm", "random", "--attack-eps", "0", "0.1",
                 "--bins", "8"]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "attack" / "drops.csv")))
    assert len(rows) == 2 * 2 * 6
    for r in rows:
        if float(r["epsilon"]) == 0.0 and r["drop"]:
            assert float(r["drop"]) == 0.0
    hist = list(csv.DictReader(open(tmp_path / "attack" / "rank_shift_fgm_0p1.csv")))
    assert len(hist) == 8 and sum(int(h["count"]) for h in hist) == 50
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    assert "Attacks" in (tmp_path / "report.md").read_text()


def test_report_without_artifacts(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_DATA


def test_sweep_single_point_matches_train_eval(dataset, tmp_path):
    flags = [*data_flags(dataset), *TINY, "--epsilon", "0.3", "--lam", "1.0"]
    assert main(["sweep", *flags, "--sweep-eps", "0.3", "--sweep-lam", "1.0", "--out", str(tmp_path / "s")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "s" / "sweep" / "sweep.csv")))
    assert len(rows) == 1
    assert main(["train", *flags, "--out", str(tmp_path / "t")]) == EXIT_OK
    assert main(["eval", *flags, "--out", str(tmp_path / "t")]) == EXIT_OK
    m = json.loads((tmp_path / "t" / "metrics.json").read_text())["metrics"]
    assert float(rows[0]["NDCG@10"]) == m["NDCG@10"] and float(rows[0]["HR@10"]) == m["HR@10"]


def test_sweep_row_counts(dataset, tmp_path):
    flags = [*data_flags(dataset), *TINY, "--sweep-eps", "0.01", "1", "--sweep-lam", "0.1", "1", "10"]
    assert main(["sweep", *flags, "--out", str(tmp_path / "two")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "two" / "sweep" / "sweep.csv")))
    # two-phase: both epsilons at lambda=1, then the two other lambdas at the best epsilon
    assert len(rows) == 4
    assert main(["sweep", *flags, "--full-grid", "--out", str(tmp_path / "full")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "full" / "sweep" / "sweep.csv")))
    assert len(rows) == 6
