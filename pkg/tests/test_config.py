import re

import pytest
from hypothesis import given, settings, strategies as st

from diffmatch.config import ExperimentConfig, dump_config, dumps, load_config, loads
from diffmatch.errors import ConfigurationError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == ExperimentConfig()
    assert cfg.scenario.num_users == 15 and cfg.run.seeds == (0, 1, 2, 3, 4)
    assert cfg.sweep.grid() == (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)


def test_inverted_snr_range_reports_line():
    text = "# sweep settings\n[sweep]\nsnr_db_min = -10\nsnr_db_max = -20\n"
    with pytest.raises(ConfigurationError) as ei:
        loads(text, source="bad.cfg")
    msg = str(ei.value)
    assert msg.startswith("bad.cfg:4:")
    assert "snr_db_max" in msg


@pytest.mark.parametrize("text, line, word", [
    ("[scenario]\nnum_users = 4\n\nbogus = 1\n", 4, "bogus"),
    ("[scenario]\nnum_users = 4\n[extras]\nx = 1\n", 3, "extras"),
    ("[training]\nepochs = many\n", 2, "epochs"),
    ("[oracle]\nsizes = 3by2\n", 2, "3by2"),
    ("[run]\nseeds = 1 1\n", 2, "distinct"),
])
def test_bad_input_is_located(text, line, word):
    with pytest.raises(ConfigurationError) as ei:
        loads(text, source="c")
    assert re.match(rf"c:{line}:", str(ei.value)), str(ei.value)
    assert word in str(ei.value)


def test_comments_and_lists():
    cfg = loads("[run]\nseeds = 3 5 7   # three seeds\n[oracle]\ncorrupt_weights = yes\n")
    assert cfg.run.seeds == (3, 5, 7)
    assert cfg.oracle.corrupt_weights is True


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/x.cfg")


configs = st.builds(
    lambda users, quota_off, epochs, lr, seeds, snr_lo, span, corrupt: ExperimentConfig()
    .with_section("scenario", num_users=users, quota=1 + quota_off)
    .with_section("training", epochs=epochs, lr=lr)
    .with_section("run", seeds=tuple(sorted(seeds)))
    .with_section("sweep", snr_db_min=snr_lo, snr_db_max=snr_lo + span)
    .with_section("oracle", corrupt_weights=corrupt),
    st.integers(1, 40), st.integers(0, 5), st.integers(1, 10_000),
    st.floats(1e-6, 1.0), st.sets(st.integers(0, 1000), min_size=1, max_size=6),
    st.floats(-50, 50), st.floats(0, 60), st.booleans())


@settings(max_examples=60, deadline=None)
@given(configs)
def test_round_trip(cfg):
    assert loads(dumps(cfg)) == cfg


def test_dump_then_load_file(tmp_path):
    cfg = ExperimentConfig().with_section("training", diffusion_steps=(2, 4, 8))
    dump_config(cfg, tmp_path / "c.cfg")
    back = load_config(tmp_path / "c.cfg")
    assert back == cfg and back.digest() == cfg.digest()
    assert cfg.digest() != ExperimentConfig().digest()
