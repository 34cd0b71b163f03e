import json
import subprocess
import sys

import pytest

from hartreelab.cli import run
from hartreelab.config import DEFAULT_CONFIG_TEXT, ExperimentConfig, load_config, parse_config
from hartreelab.errors import ConfigError

FAST = """
[grid]
L = 3
[scan]
N_list = 2, 3, 4
t_list = 0.2, 0.4
[hartree]
T = 0.4
stride = 10
[nbody]
N = 3
"""


def test_default_text_round_trips():
    assert parse_config(DEFAULT_CONFIG_TEXT) == ExperimentConfig()


def test_parse_values():
    cfg = parse_config("[potential]\nterms = 0.5:1.0, 0.2:0.5 ; two terms\n[run]\nrecord_timing = yes\n")
    assert cfg.potential_terms == ((0.5, 1.0), (0.2, 0.5))
    assert cfg.run_record_timing is True
    assert cfg.echo()["potential.terms"] == [[0.5, 1.0], [0.2, 0.5]]


@pytest.mark.parametrize(
    "text",
    [
        "[grid]\nsize = 3\n",
        "[nonsense]\nx = 1\n",
        "[grid]\nL = three\n",
        "[grid]\nL = 1\n",
        "[potential]\nterms = 0.5\n",
        "[potential]\nterms = 0.5:2.0\n",
        "[scan]\nN_list = 4, 2\n",
        "[fock]\nN_cut_rule = guess\n",
        "no section header",
    ],
)
def test_bad_config(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nowhere.cfg"):
        load_config(tmp_path / "nowhere.cfg")


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST)
    return path


@pytest.mark.parametrize(
    "command, files",
    [
        ("hartree", ["hartree.csv", "summary.json"]),
        ("nbody", ["nbody.csv", "summary.json"]),
        ("rate", ["rate.csv", "summary.json"]),
        ("selftest", ["selftest.json"]),
    ],
)
def test_commands_write_outputs(command, files, cfg_file, tmp_path, capsys):
    out = tmp_path / command
    assert run([command, "--config", str(cfg_file), "--out", str(out)]) == 0
    for name in files:
        text = (out / name).read_text()
        assert "grid.L" in text or command == "selftest"
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith(command)


def test_rate_summary_schema(cfg_file, tmp_path):
    assert run(["rate", "--config", str(cfg_file), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert {"slope", "intercept", "r2", "degenerate", "t"} <= set(summary["fits"][0])
    assert summary["config"]["scan.N_list"] == [2, 3, 4]


def test_rate_output_is_deterministic(cfg_file, tmp_path):
    for name in ("a", "b"):
        assert run(["rate", "--config", str(cfg_file), "--out", str(tmp_path / name), "--threads", "2"]) == 0
    assert (tmp_path / "a" / "rate.csv").read_bytes() == (tmp_path / "b" / "rate.csv").read_bytes()
    assert b"\r\n" not in (tmp_path / "a" / "rate.csv").read_bytes()


def test_exit_codes(tmp_path, cfg_file, capsys):
    assert run(["rate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "missing.cfg" in capsys.readouterr().err
    assert run(["rate", "--bogus"]) == 2
    assert run(["teleport"]) == 2
    assert run(["rate", "--config", str(cfg_file), "--threads", "0"]) == 2
    bad = tmp_path / "cap.cfg"
    bad.write_text("[fluctuation]\nL = 7\n")
    assert run(["fluctuation", "--config", str(bad), "--out", str(tmp_path)]) == 4
    trunc = tmp_path / "trunc.cfg"
    trunc.write_text("[fluctuation]\nL = 2\nN_cut = 2\nN_list = 2, 4, 8\nt_list = 0.5, 1.0\nleakage_budget = 1e-12\n")
    assert run(["fluctuation", "--config", str(trunc), "--out", str(tmp_path)]) == 3


def test_default_config_command(capsys):
    assert run(["default-config"]) == 0
    assert parse_config(capsys.readouterr().out) == ExperimentConfig()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hartreelab.cli", "rate", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
