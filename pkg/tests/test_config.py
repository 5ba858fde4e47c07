from dataclasses import fields

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transrx.config import SimConfig
from transrx.link import Link
from transrx.numerics import ContractError


def test_defaults_match_link_parameters():
    c = SimConfig()
    w, ch, m, t = c.waveform, c.channel, c.model, c.train
    assert (w.num_symbols, w.num_subcarriers, w.subcarrier_spacing_hz) == (14, 128, 240e3)
    assert w.bits_per_symbol == 6 and w.rx_antennas == 2
    assert ch.carrier_hz == 28e9 and ch.delay_spread_s == 266e-9
    assert (ch.speed_min_kmh, ch.speed_max_kmh) == (60.0, 120.0)
    assert (m.num_blocks, m.num_heads, m.d_model) == (4, 4, 128)
    assert t.lr == 1e-3
    assert Link.from_config(c).code.rate == 0.5


def test_text_fixpoint_defaults():
    text = SimConfig().to_text()
    again = SimConfig.from_text(text)
    assert again.to_text() == text
    assert again == SimConfig()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 512), st.floats(-20, 40, allow_nan=False),
       st.lists(st.floats(-10, 30, allow_nan=False), min_size=1, max_size=6),
       st.booleans(), st.sampled_from(["uma-like", "cdl-like", "flat"]),
       st.lists(st.integers(0, 13), min_size=1, max_size=3, unique=True))
def test_text_fixpoint_random(f, smin, snrs, derot, preset, pilots):
    c = SimConfig()
    c.waveform.num_subcarriers = f
    c.waveform.pilot_symbols = tuple(sorted(pilots))
    c.train.snr_min_db = smin
    c.sweep.snr_db = tuple(snrs)
    c.model.pilot_derotation = derot
    c.channel.preset = preset
    parsed = SimConfig.from_text(c.to_text())
    assert parsed == c
    assert parsed.to_text() == c.to_text()


def test_every_section_and_key_serialized():
    text = SimConfig().to_text()
    c = SimConfig()
    for sec in fields(c):
        assert f"[{sec.name}]" in text
        for f in fields(getattr(c, sec.name)):
            assert f"\n{f.name} = " in text


def test_partial_file_keeps_defaults():
    c = SimConfig.from_text("[train]\nsteps = 7\n")
    assert c.train.steps == 7 and c.train.lr == 1e-3


@pytest.mark.parametrize("text", ["[nope]\na = 1\n", "[train]\nstepz = 1\n",
                                  "[train]\nsteps = many\n", "[model]\npilot_derotation = maybe\n"])
def test_bad_config_rejected(text):
    with pytest.raises(ContractError):
        SimConfig.from_text(text)


def test_paths_resolve_relative_to_file(tmp_path):
    p = tmp_path / "sub" / "x.ini"
    p.parent.mkdir()
    SimConfig().save(p)
    c = SimConfig.load(p)
    assert c.resolve(c.train.checkpoint) == p.parent / "transrx.ckpt"
    assert c.resolve("/abs/file") == __import__("pathlib").Path("/abs/file")
