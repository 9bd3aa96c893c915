import subprocess
import sys

import pytest

from diffmatch import __version__
from diffmatch.cli import main

SMALL = """[scenario]
num_users = 3
num_experts = 2
quota = 1
[training]
epochs = 2
batch = 4
dqn_episodes = 1
[run]
seeds = 0
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_converge_then_sample(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["converge", "--config", str(cfg_file), "--out", str(out)]) == 0
    ckpt = out / "checkpoints" / "gdm_T6_seed0.bin"
    assert ckpt.exists()
    capsys.readouterr()
    assert main(["sample", "--config", str(cfg_file), "--out", str(out),
                 "--checkpoint", str(ckpt), "--snr", "5"]) == 0
    text = capsys.readouterr().out
    assert "# seed 0 snr_db 5.0 diffusion_steps 6" in text
    assert (out / "sample_seed0.txt").read_text() == text


def test_sample_rejects_mismatched_checkpoint(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    main(["converge", "--config", str(cfg_file), "--out", str(out)])
    other = tmp_path / "other.cfg"
    other.write_text(SMALL.replace("num_users = 3", "num_users = 4"))
    code = main(["sample", "--config", str(other), "--out", str(out),
                 "--checkpoint", str(out / "checkpoints" / "gdm_T6_seed0.bin")])
    assert code == 2
    assert "does not fit" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[sweep]\nsnr_db_max = -20\n")
    assert main(["converge", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert f"{p}:2:" in capsys.readouterr().err


def test_oracle_classical_only(cfg_file, tmp_path, capsys):
    assert main(["oracle", "--config", str(cfg_file), "--out", str(tmp_path),
                 "--skip-training"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and all(line.startswith("PASS ") for line in lines)


def test_oracle_failure_exits_1(cfg_file, tmp_path):
    cfg_file.write_text(SMALL + "[oracle]\ncorrupt_weights = true\nweight_instances = 5\n")
    assert main(["oracle", "--config", str(cfg_file), "--out", str(tmp_path),
                 "--skip-training"]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "diffmatch", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == __version__
    res = subprocess.run([sys.executable, "-m", "diffmatch"], capture_output=True, text=True)
    assert res.returncode == 2
