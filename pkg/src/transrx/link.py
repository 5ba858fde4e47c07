"""Transmit chain shared by training and evaluation.

bits -> LDPC encode -> QAM map -> resource grid -> fading channel + AWGN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import channel as chan
from .config import SimConfig
from .ldpc import QcLdpcCode, default_code, encode, load_base_matrix
from .modem import Constellation, ResourceGridSpec, grid_map, map_bits


@dataclass
class Link:
    spec: ResourceGridSpec
    constellation: Constellation
    code: QcLdpcCode
    profile: chan.TdlProfile
    subcarrier_spacing: float
    carrier_hz: float
    speed_range: tuple[float, float]
    num_sinusoids: int = 32

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Link":
        w, c, ch = cfg.waveform, cfg.code, cfg.channel
        spec = ResourceGridSpec(w.num_symbols, w.num_subcarriers, tuple(w.pilot_symbols),
                                w.pilot_seed, w.rx_antennas)
        if c.base_matrix == "default" and c.lifting == 64:
            code = default_code()
        elif c.base_matrix == "default":
            # shrink the default shifts modulo a smaller lifting (tests, tiny configs)
            b = default_code().base
            code = QcLdpcCode(np.where(b >= 0, b % c.lifting, -1), c.lifting)
        else:
            code = QcLdpcCode(load_base_matrix(cfg.resolve(c.base_matrix)), c.lifting)
        if ch.pdp_csv:
            profile = chan.TdlProfile.from_csv(cfg.resolve(ch.pdp_csv))
        else:
            profile = chan.TdlProfile.preset(ch.preset, ch.delay_spread_s)
        return cls(spec, Constellation(w.bits_per_symbol), code, profile,
                   w.subcarrier_spacing_hz, ch.carrier_hz,
                   (ch.speed_min_kmh, ch.speed_max_kmh), ch.num_sinusoids)

    @property
    def bits_per_grid(self) -> int:
        return self.spec.num_data_re * self.constellation.bits_per_symbol

    @cached_property
    def block_layout(self) -> tuple[int, int]:
        """(codewords, grids) per evaluation block.

        Uses the smallest whole number of grids that carries a whole number of
        codewords when that is at most 64 codewords; otherwise pads the last
        grid with filler bits.
        """
        n, cap = self.code.n, self.bits_per_grid
        lcm = n * cap // math.gcd(n, cap)
        if lcm // n <= 64:
            return lcm // n, lcm // cap
        cw = max(1, cap // n)
        return cw, math.ceil(cw * n / cap)

    def draw_speeds(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.speed_range
        return rng.uniform(lo, hi, count)

    def channel(self, rng: np.random.Generator, count: int) -> chan.ChannelRealization:
        speeds = self.draw_speeds(rng, count)
        dops = [chan.DopplerSpec(float(v), self.carrier_hz) for v in speeds]
        return chan.sample_realization(self.profile, dops, self.spec, self.subcarrier_spacing,
                                       seed=rng, batch=count, num_sinusoids=self.num_sinusoids)

    def modulate(self, coded_stream: np.ndarray, num_grids: int) -> np.ndarray:
        """Fill ``num_grids`` grids from a flat coded bit stream (length = capacity)."""
        syms = map_bits(coded_stream, self.constellation).reshape(num_grids, -1)
        return grid_map(syms, self.spec)

    def transmit(self, rng: np.random.Generator, info_bits: np.ndarray, noise_var,
                 num_grids: int):
        """Encode ``(codewords, k)`` info bits and send them over ``num_grids`` grids.

        Returns ``(coded_stream, y, realization)``; filler bits pad the stream
        to the grid capacity.
        """
        coded = encode(info_bits, self.code).reshape(-1)
        cap = num_grids * self.bits_per_grid
        if coded.size > cap:
            raise ValueError("codewords do not fit into the requested grids")
        filler = rng.integers(0, 2, cap - coded.size, dtype=np.int8)
        stream = np.concatenate([coded, filler])
        x = self.modulate(stream, num_grids)
        real = self.channel(rng, num_grids)
        real.noise_var = np.broadcast_to(np.asarray(noise_var, float), (num_grids,)).copy()
        y = chan.apply(x, real, rng)
        return stream, y, real
