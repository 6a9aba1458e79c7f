import filecmp

import pytest

from a2tune.cli import main

TINY_YAML = """\
days: 4
repeats: 2
mse_days: 4
optimal_sweeps: 2
policies: [default, optimal, expert, TAG-GCN]
variants: [MLP, TAG-GCN]
network:
  cell_count: 5
train:
  epochs: 10
  hidden: 4
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_YAML)
    return path


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    files = cmp.common_files
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert not mismatch and not errors, mismatch
    for sub in cmp.common_dirs:
        same_tree(a / sub, b / sub)


@pytest.mark.parametrize("command", [["generate"], ["mse-eval"], ["optimize"]])
def test_subcommands_are_byte_deterministic(tiny, tmp_path, command, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(command + ["--config", str(tiny), "--seed", "3", "--out", str(a)]) == 0
    assert main(command + ["--config", str(tiny), "--seed", "3", "--out", str(b)]) == 0
    same_tree(a, b)
    assert any(a.iterdir())


def test_generate_writes_loadable_dataset(tiny, tmp_path):
    from a2tune.network import load_dataset

    assert main(["generate", "--config", str(tiny), "--days", "2", "--out", str(tmp_path / "d")]) == 0
    records, stats = load_dataset(tmp_path / "d", (-105, -95))
    assert len(records) == 2 * 24 * 5 and stats


def test_report_reproduces_summary(tiny, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["optimize", "--config", str(tiny), "--out", str(run), "--repeats", "1",
                 "--policy", "default", "--policy", "optimal", "--policy", "TAG-GCN", "--variant", "GCN"]) == 0
    original = (run / "summary.txt").read_text()
    assert "GCN" in original and "TAG-GCN" not in original
    capsys.readouterr()
    assert main(["report", str(run), "--out", str(tmp_path / "r")]) == 0
    assert capsys.readouterr().out == original
    assert (tmp_path / "r" / "summary.txt").read_text() == original


def test_freeze_flag_reaches_the_config(tiny, tmp_path):
    from a2tune.config import load_config

    run = tmp_path / "run"
    assert main(["optimize", "--config", str(tiny), "--out", str(run), "--repeats", "1",
                 "--policy", "TAG-GCN", "--freeze-after-day", "2"]) == 0
    assert load_config(run / "config.yaml").freeze_after_day == 2


def test_bad_input_exits_with_message(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("days: 2\n")
    assert main(["optimize", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "a2tune: error:" in capsys.readouterr().err
    assert main(["optimize", "--config", str(bad), "--policy", "nope", "--out", str(tmp_path / "o")]) == 2
    assert main(["report", str(tmp_path / "missing")]) == 2


def test_out_is_required(capsys):
    with pytest.raises(SystemExit):
        main(["generate"])
