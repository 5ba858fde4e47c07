import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transrx import harness as H
from transrx.config import SimConfig
from transrx.link import Link
from transrx.numerics import ContractError


def desk_cfg(preset="uma-like", static=False) -> SimConfig:
    c = SimConfig()
    c.waveform.num_subcarriers = 32
    c.waveform.bits_per_symbol = 2
    c.channel.preset = preset
    if static:
        c.channel.speed_min_kmh = c.channel.speed_max_kmh = 0.0
    return c


@pytest.fixture(scope="module")
def fading():
    cfg = desk_cfg()
    return cfg, Link.from_config(cfg)


def test_block_layout_whole_codewords(fading):
    _, link = fading
    ncw, grids = link.block_layout
    assert ncw * link.code.n == grids * link.bits_per_grid == 3072


@pytest.mark.parametrize("rid", ["perfect-csi", "ls-lmmse"])
def test_noiseless_flat_static_no_errors(rid):
    cfg = desk_cfg("flat", static=True)
    r = H.run_e2e_block(cfg, rid, 120.0, 0)
    assert r.bit_errors == 0 and r.codeword_errors == 0
    np.testing.assert_array_equal(r.rx_bits, r.tx_bits)


def test_same_seed_same_errors(fading):
    cfg, link = fading
    a = H.run_e2e_block(cfg, "ls-lmmse", 3.0, [1, 2, 3], link)
    b = H.run_e2e_block(cfg, "ls-lmmse", 3.0, [1, 2, 3], link)
    assert a.bit_errors == b.bit_errors and a.rx_bits.tobytes() == b.rx_bits.tobytes()


def test_common_random_numbers_across_receivers(fading):
    cfg, link = fading
    seen = []

    def spy(y, real):
        seen.append(y.copy())
        return np.zeros(y.shape[:3] + (2,))

    H.run_e2e_block(cfg, spy, 3.0, 9, link)
    H.run_e2e_block(cfg, spy, 3.0, 9, link)
    assert seen[0].tobytes() == seen[1].tobytes()


def test_perfect_not_worse_than_ls(fading):
    cfg, link = fading
    totals = {}
    for rid in ("perfect-csi", "ls-lmmse"):
        rx = H.make_receiver(rid, cfg, link)
        totals[rid] = sum(H.run_e2e_block(cfg, rx, 3.0, [7, b], link).bit_errors
                          for b in range(100))
    assert totals["perfect-csi"] <= totals["ls-lmmse"]
    assert totals["ls-lmmse"] > 0


def test_unknown_receiver():
    with pytest.raises(ContractError):
        H.make_receiver("deeprx", desk_cfg())


def test_registered_receiver_slot(fading):
    cfg, link = fading

    def factory(rid, cfg, link):
        return H.make_receiver("perfect-csi", cfg, link)

    H.register_receiver("oracle-copy", factory)
    try:
        a = H.run_e2e_block(cfg, "oracle-copy:any", 2.0, 4, link)
        b = H.run_e2e_block(cfg, "perfect-csi", 2.0, 4, link)
        assert a.bit_errors == b.bit_errors
    finally:
        H._FACTORIES.pop("oracle-copy")


def test_receiver_errors_carry_block_context(fading):
    cfg, link = fading

    def broken(y, real):
        raise ValueError("boom")

    with pytest.raises(ValueError, match="dB.*boom"):
        H.run_e2e_block(cfg, broken, 1.0, 0, link)


def test_payload_shape_checked(fading):
    cfg, link = fading
    with pytest.raises(ContractError):
        H.run_e2e_block(cfg, "ls-lmmse", 1.0, 0, link, info_bits=np.zeros((1, 512), np.int8))


@pytest.fixture(scope="module")
def monotone_sweep():
    cfg = desk_cfg()
    cfg.sweep.snr_db = (0.0, 4.0, 8.0)
    cfg.sweep.receivers = ("perfect-csi",)
    cfg.sweep.min_bits = 100_000
    cfg.sweep.target_errors = 100
    return cfg, H.ber_sweep(cfg)


def test_sweep_ber_non_increasing(monotone_sweep):
    _, pts = monotone_sweep
    assert all(p.bits >= 100_000 for p in pts)
    bers = [p.ber for p in pts]
    assert bers[0] > 0
    assert all(a >= b for a, b in zip(bers, bers[1:]))


def test_sweep_point_accounting(monotone_sweep):
    _, pts = monotone_sweep
    for p in pts:
        assert p.ber == p.bit_errors / p.bits
        assert p.bler == p.block_errors / p.blocks
        assert p.bits == p.blocks * 512


def small_sweep_cfg(tmp_path) -> SimConfig:
    cfg = desk_cfg()
    cfg.sweep.snr_db = (1.0, 3.0)
    cfg.sweep.receivers = ("perfect-csi", "ls-lmmse")
    cfg.sweep.min_bits = 10_000
    cfg.sweep.target_errors = 50
    cfg.sweep.max_blocks = 60
    cfg.sweep.results_csv = str(tmp_path / "r.csv")
    cfg.sweep.plot_csv = str(tmp_path / "p.csv")
    return cfg


def test_sweep_csv_rows_and_roundtrip(tmp_path):
    cfg = small_sweep_cfg(tmp_path)
    pts = H.ber_sweep(cfg)
    H.write_results_csv(pts, cfg.sweep.results_csv)
    H.write_plot_csv(pts, cfg.sweep.plot_csv)
    back = H.read_results_csv(cfg.sweep.results_csv)
    assert len(back) == 2 * 2 and back == pts
    plot = H.read_plot_csv(cfg.sweep.plot_csv)
    assert set(plot) == {"perfect-csi", "ls-lmmse"}
    assert plot["ls-lmmse"] == [(p.snr_db, p.ber) for p in pts if p.receiver == "ls-lmmse"]


def test_sweep_max_blocks_caps_codewords(tmp_path):
    cfg = small_sweep_cfg(tmp_path)
    cfg.sweep.snr_db = (12.0,)
    cfg.sweep.receivers = ("perfect-csi",)
    cfg.sweep.min_bits = 10**9
    cfg.sweep.max_blocks = 30
    (p,) = H.ber_sweep(cfg)
    assert p.blocks <= 30 and p.blocks > 30 - 3


def test_sweep_byte_identical_and_thread_invariant(tmp_path):
    cfg = small_sweep_cfg(tmp_path)
    outs = []
    for workers in (1, 1, 3):
        path = tmp_path / f"w{len(outs)}.csv"
        H.write_results_csv(H.ber_sweep(cfg, workers=workers), path)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_sweep_needs_points():
    cfg = desk_cfg()
    cfg.sweep.snr_db = ()
    with pytest.raises(ContractError):
        H.ber_sweep(cfg)


# ------------------------------------------------------------------ images

def test_psnr_spot_values():
    a = np.zeros((4, 4))
    assert abs(H.psnr(a, a + 1, 255) - 48.1308036086791) < 1e-9
    assert H.psnr(a, a + 255, 255) == 0.0
    assert H.psnr(a, a, 255) == math.inf
    assert H.format_psnr(math.inf) == "inf"


def test_psnr_contract():
    with pytest.raises(ContractError):
        H.psnr(np.zeros(3), np.zeros(4))
    with pytest.raises(ContractError):
        H.psnr(np.zeros(3), np.zeros(3), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.sampled_from([1, 3]), st.booleans(),
       st.sampled_from([1, 15, 255, 1000, 65535]), st.integers(0, 2**31))
def test_pnm_roundtrip(h, w, chans, binary, maxval, seed):
    import tempfile
    from pathlib import Path

    shape = (h, w, 3) if chans == 3 else (h, w)
    px = np.random.default_rng(seed).integers(0, maxval + 1, shape)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "img.pnm"
        H.write_pnm(path, px, maxval, binary=binary)
        back, mv = H.read_pnm(path)
    assert mv == maxval and back.shape == shape
    np.testing.assert_array_equal(back, px)


def test_pnm_comments_in_header(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P2\n# made by hand\n3 1 # width height\n255\n0 128 255\n")
    px, mv = H.read_pnm(p)
    assert mv == 255 and px.tolist() == [[0, 128, 255]]


def test_unsupported_image_format(tmp_path):
    p = tmp_path / "x.png"
    p.write_bytes(b"\x89PNG\r\n\x1a\n")
    with pytest.raises(ContractError, match="P2, P3, P5 or P6"):
        H.read_pnm(p)


def gradient_image(h=24, w=20):
    y, x = np.mgrid[:h, :w]
    return ((x * 11 + y * 7) % 256).astype(np.uint8)


def test_noiseless_image_demo_bit_exact(tmp_path):
    cfg = desk_cfg("flat", static=True)
    p = tmp_path / "g.pgm"
    H.write_pnm(p, gradient_image())
    rep = H.image_demo(cfg, p, "ls-lmmse", 120.0)
    assert rep.psnr_db == math.inf and rep.bit_errors == 0
    np.testing.assert_array_equal(rep.reconstructed, gradient_image())


def test_black_image_stays_black():
    cfg = desk_cfg("flat", static=True)
    black = np.zeros((16, 16, 3), np.uint8)
    rep = H.image_demo(cfg, (black, 255), "perfect-csi", 120.0)
    assert not rep.reconstructed.any()


def test_noisy_image_demo_is_deterministic(fading):
    cfg, link = fading
    img = (gradient_image(), 255)
    a = H.image_demo(cfg, img, "ls-lmmse", 1.0, link)
    b = H.image_demo(cfg, img, "ls-lmmse", 1.0, link)
    assert a.bit_errors > 0 and a.reconstructed.tobytes() == b.reconstructed.tobytes()
    assert a.psnr_db == b.psnr_db < math.inf
