import csv

import numpy as np
import pytest
from scipy import stats

from diffmatch import experiments as ex
from diffmatch.config import loads
from diffmatch.errors import TrainingError

SMALL = """
[scenario]
num_users = 4
num_experts = 3
quota = 1
[training]
epochs = 1
batch = 4
dqn_episodes = 2
[sweep]
snr_db_min = 0
snr_db_max = 10
eval_drops = 5
[run]
seeds = 0
[oracle]
epochs = 5
num_seeds = 2
min_passing = 1
weight_instances = 10
da_instances = 10
"""


@pytest.fixture
def small():
    return loads(SMALL)


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_one_epoch_gives_one_row_per_method(small, tmp_path):
    res = ex.run_convergence(small, tmp_path)
    assert res.ok
    path = tmp_path / "convergence.csv"
    assert tuple(header(path)) == ex.CSV_HEADER
    rows = [r for r in ex.read_records(path) if r["metric"] == "mean_reward"]
    assert sorted(r["method"] for r in rows) == ["dqn", "gdm", "random"]
    assert all(r["axis"] == "epoch" and r["axis_value"] == 1 for r in rows)
    assert (tmp_path / "run-manifest.txt").read_text().count("config_sha256 = ") == 1
    assert tuple(header(tmp_path / "stats" / "gdm_seed0.csv")) == ex.STATS_HEADER
    assert (tmp_path / "checkpoints" / "gdm_T6_seed0.bin").exists()


def test_rerun_is_bit_identical(small, tmp_path):
    cfg = small.with_section("training", epochs=3)
    ex.run_convergence(cfg, tmp_path / "a")
    ex.run_convergence(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "convergence.csv").read_bytes() == \
        (tmp_path / "b" / "convergence.csv").read_bytes()


def test_output_dir_from_environment(small, tmp_path, monkeypatch):
    monkeypatch.setenv("DIFFMATCH_OUT", str(tmp_path / "env"))
    ex.run_oracle_suite(small, include_training=False)
    assert (tmp_path / "env" / "oracle_report.csv").exists()
    # an explicit directory wins over the environment
    ex.run_oracle_suite(small, tmp_path / "explicit", include_training=False)
    assert (tmp_path / "explicit" / "oracle_report.csv").exists()


def test_failing_seed_is_recorded_and_others_continue(small, tmp_path, monkeypatch):
    real = ex._train_gdm

    def flaky(cfg, scenario, seed, *a, **kw):
        if seed == 1:
            raise TrainingError("diverged")
        return real(cfg, scenario, seed, *a, **kw)

    monkeypatch.setattr(ex, "_train_gdm", flaky)
    res = ex.run_convergence(small, tmp_path, seeds=(0, 1, 2))
    assert not res.ok and len(res.errors) == 1 and "seed 1" in res.errors[0]
    seeds = {r["seed"] for r in ex.read_records(tmp_path / "convergence.csv")
             if r["axis"] == "summary"}
    assert seeds == {0, 2}


def test_random_baseline_has_no_trend():
    cfg = loads(SMALL)
    scenario = ex.build_scenario(cfg, 0, (10.0,))
    env = ex.DropSequence(scenario, ex.stream(0, ex.STREAM_DROPS))
    rng = ex.stream(0, ex.STREAM_RANDOM)
    curve = [ex._random_epoch(env.sample_drop(), 8, rng).mean_reward for _ in range(300)]
    fit = stats.linregress(np.arange(300), curve)
    assert abs(fit.slope / fit.stderr) < 3.0


def test_sweep_oracle_normalizes_to_one(small, tmp_path):
    res = ex.run_snr_sweep(small, tmp_path)
    assert res.ok
    rows = ex.read_records(tmp_path / "snr_sweep.csv")
    norm = [r for r in rows if r["metric"] == "normalized_qoe"]
    assert {r["method"] for r in norm} == {"gdm-T3", "gdm-T6", "dqn", "random", "greedy", "oracle"}
    oracle = [r["value"] for r in norm if r["method"] == "oracle"]
    assert len(oracle) == 3 and np.allclose(oracle, 1.0, rtol=0, atol=1e-12)
    assert all(r["value"] <= 1.0 + 1e-12 for r in norm)


def test_sweep_falls_back_to_upper_proxy(small, tmp_path):
    cfg = small.with_section("sweep", brute_force_limit=10, snr_db_max=0.0, eval_drops=3)
    ex.run_snr_sweep(cfg, tmp_path)
    methods = {r["method"] for r in ex.read_records(tmp_path / "snr_sweep.csv")}
    assert "upper_proxy" in methods and "oracle" not in methods


def test_oracle_suite_report(small, tmp_path):
    res = ex.run_oracle_suite(small, tmp_path)
    with open(tmp_path / "oracle_report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(ex.oracle_checks(small)) == 4
    names = {r["check"] for r in rows}
    assert {"max_weight_matches_brute_force", "deferred_acceptance_stable"} <= names
    assert [c.name for c in res.checks] == [r["check"] for r in rows]
    assert all(r["passed"] == "1" for r in rows if not r["check"].startswith("gdm_"))


def test_corrupted_weights_are_caught(small, tmp_path):
    cfg = small.with_section("oracle", corrupt_weights=True)
    res = ex.run_oracle_suite(cfg, tmp_path, include_training=False)
    mw = next(c for c in res.checks if c.name == "max_weight_matches_brute_force")
    assert not mw.passed and mw.value > 0


@pytest.mark.parametrize("curve, expected", [
    ([1.0] * 50, 50),
    ([0.0] * 10 + [1.0] * 40, 11),
    ([float(k) for k in range(101)], 91),
])
def test_epochs_to_fraction(curve, expected):
    assert ex.epochs_to_fraction(curve, final_window=1, smoothing=1) == expected
