"""Gray-labelled square QAM, soft demapping and resource-grid (de)mapping.

Bit convention (used by the mapper, both demappers and the neural receiver
labels): bits are grouped MSB-first into ``N``-bit labels. Even-indexed bits
of a label select the in-phase amplitude, odd-indexed bits the quadrature
amplitude, following the recursive Gray construction of 3GPP TS 38.211
(e.g. 16-QAM: ``(1-2b0)(2-(1-2b2)) + j(1-2b1)(2-(1-2b3))``, scaled by 1/sqrt(10)).
A 0 in the leading bit of each axis maps to the positive half-plane.

LLRs are ``log P(b=0|y) / P(b=1|y)``; positive favours 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .numerics import ContractError


def _pam_levels(bits: np.ndarray) -> np.ndarray:
    """Gray PAM amplitude for bit columns ``bits[..., 0..m-1]`` (unnormalized)."""
    m = bits.shape[-1]
    s = 1 - 2 * bits.astype(np.int64)
    amp = np.ones(bits.shape[:-1], dtype=np.int64)
    # Inner-to-outer recursion: a_m = 1, a_k = 2^(m-k) - s_k a_{k+1}
    for k in range(m - 1, 0, -1):
        amp = 2 ** (m - k) - s[..., k] * amp
    return s[..., 0] * amp


@dataclass(frozen=True)
class Constellation:
    bits_per_symbol: int

    def __post_init__(self):
        if self.bits_per_symbol not in (2, 4, 6, 8):
            raise ContractError("bits_per_symbol must be 2, 4, 6 or 8")

    @cached_property
    def labels(self) -> np.ndarray:
        """(2^N, N) label bits; row ``k`` is the MSB-first binary of ``k``."""
        n = self.bits_per_symbol
        k = np.arange(2 ** n)
        return ((k[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)

    @cached_property
    def points(self) -> np.ndarray:
        n = self.bits_per_symbol
        m = 2 ** n
        i = _pam_levels(self.labels[:, 0::2])
        q = _pam_levels(self.labels[:, 1::2])
        return (i + 1j * q) / np.sqrt(2 * (m - 1) / 3)

    @property
    def num_points(self) -> int:
        return 2 ** self.bits_per_symbol


def map_bits(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map a flat bit stream (length divisible by N) to complex symbols."""
    bits = np.asarray(bits).reshape(-1)
    n = c.bits_per_symbol
    if bits.size % n:
        raise ContractError(f"bit count {bits.size} not divisible by {n}")
    idx = bits.reshape(-1, n).astype(np.int64) @ (1 << np.arange(n - 1, -1, -1))
    return c.points[idx]


def _check_noise(noise_var):
    if np.any(np.asarray(noise_var) <= 0):
        raise ContractError("noise_var must be positive")


def demap_exact(y: np.ndarray, noise_var, c: Constellation) -> np.ndarray:
    """Exact (log-MAP) bit LLRs for equalized symbols.

    ``y`` has any shape; ``noise_var`` broadcasts against it. Returns an array
    of shape ``y.shape + (N,)``.
    """
    _check_noise(noise_var)
    y = np.asarray(y)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), y.shape)
    metric = -np.abs(y[..., None] - c.points) ** 2 / nv[..., None]
    zero = c.labels.T == 0  # (N, M)
    neg = np.full_like(metric, -np.inf)
    out = np.empty(y.shape + (c.bits_per_symbol,))
    for k in range(c.bits_per_symbol):
        out[..., k] = (logsumexp(np.where(zero[k], metric, neg), axis=-1)
                       - logsumexp(np.where(zero[k], neg, metric), axis=-1))
    return out


def demap_maxlog(y: np.ndarray, noise_var, c: Constellation) -> np.ndarray:
    """Max-log approximation of :func:`demap_exact`."""
    _check_noise(noise_var)
    y = np.asarray(y)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), y.shape)
    d2 = np.abs(y[..., None] - c.points) ** 2
    zero = c.labels.T == 0
    out = np.empty(y.shape + (c.bits_per_symbol,))
    for k in range(c.bits_per_symbol):
        d0 = np.where(zero[k], d2, np.inf).min(axis=-1)
        d1 = np.where(zero[k], np.inf, d2).min(axis=-1)
        out[..., k] = (d1 - d0) / nv
    return out


@dataclass(frozen=True)
class ResourceGridSpec:
    """Slot layout: ``num_symbols`` OFDM symbols by ``num_subcarriers``.

    Pilot OFDM symbols are full-band and carry a seeded unit-modulus QPSK
    sequence. There are no guard bands and no DC null.
    """

    num_symbols: int = 14
    num_subcarriers: int = 128
    pilot_symbols: tuple[int, ...] = (2, 11)
    pilot_seed: int = 1234
    rx_antennas: int = 2

    def __post_init__(self):
        if self.num_symbols <= 0 or self.num_subcarriers <= 0 or self.rx_antennas <= 0:
            raise ContractError("grid extents must be positive")
        ps = tuple(int(p) for p in self.pilot_symbols)
        if len(set(ps)) != len(ps) or any(not 0 <= p < self.num_symbols for p in ps):
            raise ContractError(f"pilot symbols {ps} invalid for {self.num_symbols} symbols")
        object.__setattr__(self, "pilot_symbols", tuple(sorted(ps)))

    @property
    def data_symbols(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.num_symbols) if i not in self.pilot_symbols)

    @property
    def num_data_re(self) -> int:
        return len(self.data_symbols) * self.num_subcarriers

    @cached_property
    def pilot_mask(self) -> np.ndarray:
        mask = np.zeros((self.num_symbols, self.num_subcarriers), dtype=bool)
        mask[list(self.pilot_symbols), :] = True
        return mask

    @cached_property
    def pilots(self) -> np.ndarray:
        """(len(pilot_symbols), F) pilot values, identical for every slot."""
        rng = np.random.default_rng(self.pilot_seed)
        bits = rng.integers(0, 2, size=(len(self.pilot_symbols) * self.num_subcarriers * 2))
        return map_bits(bits, Constellation(2)).reshape(len(self.pilot_symbols),
                                                        self.num_subcarriers)


def grid_map(symbols: np.ndarray, spec: ResourceGridSpec) -> np.ndarray:
    """Place data symbols (row-major over data REs) and pilots on the grid.

    ``symbols`` is ``(num_data_re,)`` or ``(batch, num_data_re)``; the result is
    ``(S, F)`` or ``(batch, S, F)``.
    """
    symbols = np.asarray(symbols)
    lead = symbols.shape[:-1]
    if symbols.shape[-1] != spec.num_data_re:
        raise ContractError(f"expected {spec.num_data_re} data symbols, got {symbols.shape[-1]}")
    grid = np.empty(lead + (spec.num_symbols, spec.num_subcarriers), dtype=np.complex128)
    grid[..., list(spec.data_symbols), :] = symbols.reshape(
        lead + (len(spec.data_symbols), spec.num_subcarriers))
    grid[..., list(spec.pilot_symbols), :] = spec.pilots
    return grid


def grid_demap(llr_grid: np.ndarray, spec: ResourceGridSpec) -> np.ndarray:
    """Extract per-RE payloads at data positions, flattened to a stream.

    ``llr_grid`` is ``(..., S, F, N)``; returns ``(..., num_data_re * N)``.
    """
    llr_grid = np.asarray(llr_grid)
    if llr_grid.shape[-3:-1] != (spec.num_symbols, spec.num_subcarriers):
        raise ContractError(f"grid shape {llr_grid.shape} does not match spec")
    data = llr_grid[..., list(spec.data_symbols), :, :]
    return data.reshape(llr_grid.shape[:-3] + (-1,))
