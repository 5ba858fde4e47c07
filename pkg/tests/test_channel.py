import numpy as np
import pytest

from transrx import channel as ch
from transrx.modem import ResourceGridSpec
from transrx.numerics import ContractError

SPEC = ResourceGridSpec(14, 32, (2, 11), rx_antennas=2)


@pytest.mark.parametrize("name", ["uma-like", "cdl-like"])
def test_presets_normalized_and_spread(name):
    p = ch.TdlProfile.preset(name)
    assert abs(p.powers.sum() - 1.0) < 1e-9
    assert np.all(np.diff(p.delays) >= 0) and p.delays[0] >= 0
    assert abs(p.rms_delay_spread - 266e-9) / 266e-9 < 0.05


def test_presets_differ():
    a, b = ch.TdlProfile.preset("uma-like"), ch.TdlProfile.preset("cdl-like")
    assert a.delays.size != b.delays.size or not np.allclose(a.delays, b.delays)


def test_unknown_preset():
    with pytest.raises(ContractError):
        ch.TdlProfile.preset("rural")


def test_pdp_csv(tmp_path):
    f = tmp_path / "pdp.csv"
    f.write_text("# delay_s, power_linear\n0.0, 2.0\n1e-7, 1.0\n3e-7, 1.0\n")
    p = ch.TdlProfile.from_csv(f)
    np.testing.assert_allclose(p.powers, [0.5, 0.25, 0.25])
    np.testing.assert_allclose(p.delays, [0, 1e-7, 3e-7])


def test_doppler():
    assert abs(ch.DopplerSpec(120, 28e9).max_doppler - 3111.111) < 0.01
    assert ch.DopplerSpec(0).max_doppler == 0.0
    with pytest.raises(ContractError):
        ch.DopplerSpec(-1)


def test_snr_to_noise_var():
    assert ch.snr_to_noise_var(0) == 1.0
    assert np.isclose(ch.snr_to_noise_var(10), 0.1)
    assert np.isclose(ch.snr_to_noise_var(-3), 1.99526, atol=1e-4)


def test_flat_static_channel_is_constant():
    flat = ch.TdlProfile(np.zeros(1), np.ones(1))
    r = ch.sample_realization(flat, ch.DopplerSpec(0), SPEC, seed=3)
    for a in range(SPEC.rx_antennas):
        assert np.unique(r.h[..., a]).size == 1


def test_static_channel_time_invariant():
    r = ch.sample_realization(ch.TdlProfile.preset("uma-like"), ch.DopplerSpec(0), SPEC, seed=4)
    assert np.all(r.h == r.h[:1])


def test_moving_channel_varies_in_time():
    r = ch.sample_realization(ch.TdlProfile.preset("uma-like"), ch.DopplerSpec(120), SPEC, seed=4)
    assert not np.allclose(r.h[0], r.h[-1])


def test_reproducible_from_seed():
    p, d = ch.TdlProfile.preset("cdl-like"), ch.DopplerSpec(90)
    a = ch.sample_realization(p, d, SPEC, seed=11).h
    b = ch.sample_realization(p, d, SPEC, seed=11).h
    assert a.tobytes() == b.tobytes()


@pytest.fixture(scope="module")
def many():
    p = ch.TdlProfile.preset("uma-like")
    return p, ch.sample_realization(p, ch.DopplerSpec(100), SPEC, seed=0, batch=10_000).h


def test_unit_average_power(many):
    _, h = many
    assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.03


def test_frequency_correlation_matches_pdp(many):
    p, h = many
    for lag in (1, 2, 4):
        emp = np.mean(h[:, :, lag:, :] * np.conj(h[:, :, :-lag, :]))
        # H(f) = sum sqrt(p) g exp(-2j pi f tau) -> E[H(f+d) H*(f)] = sum p exp(-2j pi d tau)
        ana = np.sum(p.powers * np.exp(-2j * np.pi * lag * 240e3 * p.delays))
        assert abs(emp - ana) < 0.05 * max(abs(ana), 0.2)


def test_antennas_uncorrelated(many):
    _, h = many
    corr = np.mean(h[..., 0] * np.conj(h[..., 1]))
    assert abs(corr) < 0.05


def test_apply_noiseless():
    x = np.exp(1j * np.linspace(0, 3, 14 * 32)).reshape(14, 32)
    r = ch.ChannelRealization(np.ones((14, 32, 2)), 0.0)
    np.testing.assert_array_equal(ch.apply(x, r)[..., 0], x)
    r = ch.ChannelRealization(np.full((14, 32, 2), 2j), 0.0)
    np.testing.assert_array_equal(ch.apply(x, r)[..., 1], 2j * x)


def test_apply_noise_variance():
    x = np.zeros((200, 14, 32), complex)
    r = ch.ChannelRealization(np.ones((200, 14, 32, 2)), 0.37)
    y = ch.apply(x, r, np.random.default_rng(0))
    assert y.size >= 1e5
    assert abs(np.mean(np.abs(y) ** 2) / 0.37 - 1) < 0.02


def test_apply_shape_mismatch():
    with pytest.raises(ContractError):
        ch.apply(np.zeros((14, 31)), ch.ChannelRealization(np.ones((14, 32, 2)), 0.1))
