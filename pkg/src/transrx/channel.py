"""Frequency-domain tapped-delay-line Rayleigh channel with Jakes Doppler.

Each tap gain is a sum of ``num_sinusoids`` complex exponentials with random
arrival angles and phases (sum-of-sinusoids Jakes model). The channel is held
constant within an OFDM symbol and evolves from symbol to symbol; the
frequency response at subcarrier ``j`` is ``sum_l sqrt(p_l) g_l(t_i)
exp(-2j pi f_j tau_l)``. Receive antennas fade independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .modem import ResourceGridSpec
from .numerics import ContractError

SPEED_OF_LIGHT = 3e8
# 5G NR normal cyclic prefix: 144/2048 of the useful symbol length.
CP_FRACTION = 144 / 2048

# Shapes of the two presets before scaling to the target RMS delay spread.
# "cdl-like" is a clustered profile: a few groups of closely spaced rays.
_CLUSTERED_DELAYS = np.array([0.0, 0.06, 0.15, 0.9, 0.97, 1.08, 2.2, 2.35, 3.6, 3.75])
_CLUSTERED_POWERS_DB = np.array([0.0, -1.5, -4.0, -3.0, -4.5, -7.0, -7.5, -9.0, -12.0, -14.0])


def rms_delay_spread(delays: np.ndarray, powers: np.ndarray) -> float:
    p = np.asarray(powers, float) / np.sum(powers)
    d = np.asarray(delays, float)
    mean = np.sum(p * d)
    return float(np.sqrt(np.sum(p * d * d) - mean ** 2))


@dataclass(frozen=True)
class TdlProfile:
    delays: np.ndarray
    powers: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        d = np.asarray(self.delays, float)
        p = np.asarray(self.powers, float)
        if d.shape != p.shape or d.ndim != 1 or d.size == 0:
            raise ContractError("delays and powers must be equal-length vectors")
        if np.any(d < 0) or np.any(np.diff(d) < 0):
            raise ContractError("tap delays must be non-negative and ascending")
        if np.any(p < 0) or p.sum() <= 0:
            raise ContractError("tap powers must be non-negative with positive sum")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "powers", p / p.sum())

    @property
    def rms_delay_spread(self) -> float:
        return rms_delay_spread(self.delays, self.powers)

    @classmethod
    def preset(cls, name: str, delay_spread: float = 266e-9) -> "TdlProfile":
        """``uma-like``: exponential PDP; ``cdl-like``: clustered PDP."""
        if name == "uma-like":
            # 12 equally spaced taps; exp(-t/tau) with 12 taps over 4.4 tau
            t = np.linspace(0.0, 4.4, 12)
            delays, powers = t, np.exp(-t)
        elif name == "cdl-like":
            delays, powers = _CLUSTERED_DELAYS, 10 ** (_CLUSTERED_POWERS_DB / 10)
        elif name == "flat":
            return cls(np.zeros(1), np.ones(1), name)
        else:
            raise ContractError(f"unknown channel preset '{name}'")
        scale = delay_spread / rms_delay_spread(delays, powers)
        return cls(delays * scale, powers, name)

    @classmethod
    def from_csv(cls, path: str | Path) -> "TdlProfile":
        """Two columns: delay in seconds, linear power. ``#`` lines are skipped."""
        arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if arr.shape[1] != 2:
            raise ContractError(f"{path}: expected two columns (delay_s, power_linear)")
        return cls(arr[:, 0], arr[:, 1], Path(path).stem)


@dataclass(frozen=True)
class DopplerSpec:
    speed_kmh: float
    carrier_hz: float = 28e9

    def __post_init__(self):
        if self.speed_kmh < 0:
            raise ContractError("speed must be non-negative")

    @property
    def speed_ms(self) -> float:
        return self.speed_kmh / 3.6

    @property
    def max_doppler(self) -> float:
        return self.speed_ms * self.carrier_hz / SPEED_OF_LIGHT


@dataclass
class ChannelRealization:
    """Frequency response ``h`` of shape ``(..., S, F, A)`` and noise variance."""

    h: np.ndarray
    noise_var: np.ndarray | float
    seed: int | None = None


def symbol_duration(subcarrier_spacing: float) -> float:
    return (1.0 + CP_FRACTION) / subcarrier_spacing


def _jakes_gains(rng: np.random.Generator, batch: int, taps: int, antennas: int,
                 fd: np.ndarray, times: np.ndarray, num_sinusoids: int) -> np.ndarray:
    """(batch, S, taps, antennas) unit-power tap gains."""
    shape = (batch, taps, antennas, num_sinusoids)
    angle = rng.uniform(0, 2 * np.pi, shape)
    phase = rng.uniform(0, 2 * np.pi, shape)
    w = 2 * np.pi * fd[:, None, None, None] * np.cos(angle)
    arg = w[:, None] * times[None, :, None, None, None] + phase[:, None]
    return np.exp(1j * arg).sum(axis=-1) / np.sqrt(num_sinusoids)


def sample_realization(profile: TdlProfile, doppler: DopplerSpec | list[DopplerSpec],
                       spec: ResourceGridSpec, subcarrier_spacing: float = 240e3,
                       seed=None, batch: int | None = None,
                       num_sinusoids: int = 32) -> ChannelRealization:
    """Draw frequency responses for one grid, or ``batch`` grids.

    ``doppler`` may be a list (one entry per grid) for mixed-speed batches.
    The noise variance is left at 1; callers set it per SNR.
    """
    if subcarrier_spacing <= 0:
        raise ContractError("subcarrier spacing must be positive")
    rng = np.random.default_rng(seed)
    single = batch is None
    b = 1 if single else batch
    dops = doppler if isinstance(doppler, (list, tuple)) else [doppler] * b
    if len(dops) != b:
        raise ContractError("need one DopplerSpec per grid")
    fd = np.array([d.max_doppler for d in dops])
    times = np.arange(spec.num_symbols) * symbol_duration(subcarrier_spacing)
    gains = _jakes_gains(rng, b, profile.delays.size, spec.rx_antennas, fd, times,
                         num_sinusoids)
    freqs = np.arange(spec.num_subcarriers) * subcarrier_spacing
    steer = np.sqrt(profile.powers)[None, :] * np.exp(
        -2j * np.pi * freqs[:, None] * profile.delays[None, :])  # (F, L)
    h = np.einsum("fl,bsla->bsfa", steer, gains)
    if single:
        h = h[0]
    return ChannelRealization(h=h, noise_var=1.0, seed=seed if isinstance(seed, int) else None)


def snr_to_noise_var(snr_db):
    """Es/N0 per receive antenna at unit symbol energy."""
    return 10.0 ** (-np.asarray(snr_db, dtype=float) / 10.0)


def apply(x: np.ndarray, realization: ChannelRealization, rng=None) -> np.ndarray:
    """``y = H x + n`` per RE and antenna.

    ``x`` is ``(..., S, F)``; the result is ``(..., S, F, A)``. ``noise_var``
    may be a scalar or one value per grid.
    """
    h = realization.h
    x = np.asarray(x)
    if h.shape[:-1] != x.shape:
        raise ContractError(f"apply: grid {x.shape} vs channel {h.shape}")
    y = h * x[..., None]
    nv = np.asarray(realization.noise_var, dtype=float)
    if np.any(nv > 0):
        rng = np.random.default_rng(rng)
        nv = nv.reshape(nv.shape + (1,) * (y.ndim - nv.ndim))
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(nv / 2) * noise
    return y
