import pytest

from polyrec.cli import run
from polyrec.dataio import parse_behaviors

from conftest import TINY_VALUES


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text("".join(f"{key}={value}\n" for key, value in TINY_VALUES.items()), encoding="utf-8")
    return path


@pytest.fixture
def trained_run(tmp_path, config_file):
    data, run_dir = tmp_path / "data", tmp_path / "run"
    assert run(["synth", "--config", str(config_file), "--data", str(data)]) == 0
    assert run(["train", "--config", str(config_file), "--data", str(data), "--run", str(run_dir)]) == 0
    return data, run_dir


def test_synth_is_reproducible(tmp_path, config_file):
    for name in ("a", "b"):
        assert run(["synth", "--config", str(config_file), "--data", str(tmp_path / name)]) == 0
    for file_name in ("catalog.tsv", "behaviors.tsv", "preferences.tsv"):
        assert (tmp_path / "a" / file_name).read_bytes() == (tmp_path / "b" / file_name).read_bytes()


def test_train_writes_a_complete_run(trained_run):
    data, run_dir = trained_run
    for name in ("config.txt", "vocab.txt", "model.ckpt", "progress.log", "eval_history.csv", "eval_history.xlsx", "eval_history.png"):
        assert (run_dir / name).exists(), name
    assert (data / "summaries.tsv").exists()
    assert "vocab_size=256" in (run_dir / "config.txt").read_text(encoding="utf-8")


def test_stores_and_live_model_report_the_same_metrics(trained_run, capsys):
    data, run_dir = trained_run
    common = ["--data", str(data), "--run", str(run_dir)]
    assert run(["precompute", *common]) == 0
    assert (run_dir / "stores" / "users.npy").exists()
    capsys.readouterr()

    assert run(["eval", *common]) == 0
    live = capsys.readouterr().out
    assert run(["eval", *common, "--stores", str(run_dir / "stores")]) == 0
    stored = capsys.readouterr().out
    assert live == stored
    assert live.startswith("impressions=")


def test_score_then_eval_scores_file(trained_run, capsys):
    data, run_dir = trained_run
    common = ["--data", str(data), "--run", str(run_dir)]
    assert run(["precompute", *common]) == 0
    assert run(["score", *common]) == 0
    rows = (run_dir / "scores.tsv").read_text(encoding="utf-8").splitlines()
    records = parse_behaviors(data / "behaviors.tsv")
    assert len(rows) == sum(len(r.impression.candidates) for r in records)
    capsys.readouterr()
    assert run(["eval", "--data", str(data), "--scores", str(run_dir / "scores.tsv")]) == 0
    assert "impressions=24" in capsys.readouterr().out


def test_entropy_command(trained_run, capsys):
    data, run_dir = trained_run
    assert run(["entropy", "--data", str(data), "--run", str(run_dir), "--limit", "5"]) == 0
    assert "mean sparse=" in capsys.readouterr().out


def test_label_scores_give_perfect_auc(tmp_path, config_file, capsys):
    data = tmp_path / "data"
    assert run(["synth", "--config", str(config_file), "--data", str(data)]) == 0
    lines = [
        f"{r.impression.impression_id}\t{cid}\t{label}\n"
        for r in parse_behaviors(data / "behaviors.tsv")
        for cid, label in r.impression.candidates
    ]
    scores = tmp_path / "oracle.tsv"
    scores.write_text("".join(lines), encoding="utf-8")
    capsys.readouterr()
    assert run(["eval", "--data", str(data), "--scores", str(scores)]) == 0
    assert "auc=1.0000" in capsys.readouterr().out


def test_gradcheck_passes(capsys):
    assert run(["gradcheck", "--coords", "4"]) == 0
    assert "max relative error" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["gradcheck", "--set", "bogus=1"],
        ["gradcheck", "--set", "no-equals-sign"],
        ["gradcheck", "--seed", "one"],
    ],
)
def test_usage_errors_exit_with_one(argv):
    assert run(argv) == 1


def test_eval_outside_a_run_is_a_usage_error(tmp_path):
    assert run(["eval", "--run", str(tmp_path / "nothing"), "--data", str(tmp_path)]) == 1


def test_missing_data_exits_with_two(tmp_path):
    assert run(["train", "--data", str(tmp_path / "absent"), "--run", str(tmp_path / "run")]) == 2


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == 0
    assert "config keys" in capsys.readouterr().out


def test_subcommand_help_lists_config_keys(capsys):
    assert run(["train", "--help"]) == 0
    out = capsys.readouterr().out
    assert "config keys" in out
    assert "run_dir=" in out and "data_dir=" in out


def test_path_keys_work_without_flags(tmp_path, config_file, capsys):
    data, run_dir = tmp_path / "data", tmp_path / "run"
    assert run(["synth", "--config", str(config_file), "--set", f"data_dir={data}"]) == 0
    assert (data / "catalog.tsv").exists()

    paths = tmp_path / "paths.txt"
    paths.write_text(config_file.read_text(encoding="utf-8") + f"data_dir={data}\nrun_dir={run_dir}\n", encoding="utf-8")
    assert run(["train", "--config", str(paths)]) == 0
    snapshot = (run_dir / "config.txt").read_text(encoding="utf-8")
    assert not any(line.startswith(("run_dir=", "data_dir=")) for line in snapshot.splitlines())

    capsys.readouterr()
    assert run(["eval", "--config", str(paths)]) == 0
    assert capsys.readouterr().out.startswith("impressions=")


@pytest.mark.parametrize("override", ["dev_fraction=1", "synth_users=0", "synth_candidates=0"])
def test_out_of_range_values_exit_with_one(tmp_path, config_file, override):
    argv = ["--config", str(config_file), "--data", str(tmp_path / "data"), "--set", override]
    assert run(["synth", *argv]) == 1
