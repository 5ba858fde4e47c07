"""LS channel estimation, LMMSE equalization and soft demapping.

Shapes: received grids are ``(..., S, F, A)``; channel estimates share that
shape; the per-grid noise estimate has shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .modem import Constellation, ResourceGridSpec, demap_exact, demap_maxlog
from .numerics import ContractError

NOISE_FLOOR = 1e-6


@dataclass
class ChannelEstimate:
    h: np.ndarray
    noise_var: np.ndarray
    source: str  # "ls" or "perfect"


def _interp_symbols(h_pilot: np.ndarray, pilot_idx, num_symbols: int) -> np.ndarray:
    """Linear interpolation along the symbol axis (axis -3), edge-held."""
    pilot_idx = np.asarray(pilot_idx)
    if pilot_idx.size == 1:
        return np.repeat(h_pilot, num_symbols, axis=-3)
    pos = np.clip(np.arange(num_symbols), pilot_idx[0], pilot_idx[-1])
    hi = np.clip(np.searchsorted(pilot_idx, pos, side="left"), 1, pilot_idx.size - 1)
    lo = hi - 1
    w = (pos - pilot_idx[lo]) / (pilot_idx[hi] - pilot_idx[lo])
    w = w[:, None, None]
    return (1 - w) * np.take(h_pilot, lo, axis=-3) + w * np.take(h_pilot, hi, axis=-3)


def ls_estimate(y: np.ndarray, spec: ResourceGridSpec) -> ChannelEstimate:
    """Per-RE LS estimate ``y * conj(x)`` at pilots, interpolated in time.

    The noise power is estimated from the pilot estimates' deviation from a
    3-subcarrier moving average: for white estimation noise of variance s2
    that residual has variance ``2 s2 / 3``, hence the 1.5 factor. Residual
    channel curvature inflates the estimate, which is then an interference-
    plus-noise figure rather than pure thermal noise.
    """
    if not spec.pilot_symbols:
        raise ContractError("ls_estimate needs at least one pilot symbol")
    pil = list(spec.pilot_symbols)
    h_p = y[..., pil, :, :] * np.conj(spec.pilots)[:, :, None]
    h = _interp_symbols(h_p, pil, spec.num_symbols)
    if spec.num_subcarriers >= 3:
        smooth = (h_p[..., :-2, :] + h_p[..., 1:-1, :] + h_p[..., 2:, :]) / 3
        resid = h_p[..., 1:-1, :] - smooth
        nv = 1.5 * np.mean(np.abs(resid) ** 2, axis=(-3, -2, -1))
    else:
        nv = np.full(y.shape[:-3], NOISE_FLOOR)
    return ChannelEstimate(h=h, noise_var=np.maximum(nv, NOISE_FLOOR), source="ls")


def perfect_estimate(realization: ChannelRealization) -> ChannelEstimate:
    nv = np.broadcast_to(np.asarray(realization.noise_var, float), realization.h.shape[:-3])
    return ChannelEstimate(h=realization.h, noise_var=np.maximum(nv, NOISE_FLOOR),
                           source="perfect")


def lmmse_equalize(y: np.ndarray, h: np.ndarray, noise_var):
    """Single-stream LMMSE: ``(h^H h + s2)^-1 h^H y`` over the last (antenna) axis.

    Returns the (biased) equalized symbol and its MSE ``s2 / (|h|^2 + s2)``.
    ``noise_var`` broadcasts against ``y.shape[:-1]``.
    """
    y = np.asarray(y)
    h = np.asarray(h)
    if y.shape != h.shape:
        raise ContractError(f"lmmse_equalize: y {y.shape} vs h {h.shape}")
    nv = np.asarray(noise_var, dtype=float)
    gain = np.sum(np.abs(h) ** 2, axis=-1)
    denom = gain + nv
    if np.any(denom <= 0):
        raise ContractError("lmmse_equalize: singular system (zero channel and zero noise)")
    x_hat = np.sum(np.conj(h) * y, axis=-1) / denom
    return x_hat, nv / denom


def unbias(x_hat: np.ndarray, mse: np.ndarray):
    """Remove the LMMSE shrinkage: ``x / (1 - e)`` with noise ``e / (1 - e)``.

    For the SIMO case this equals matched-filter/ZF output with noise
    variance ``s2 / |h|^2``.
    """
    g = np.maximum(1.0 - mse, 1e-12)
    return x_hat / g, np.maximum(mse / g, 1e-12)


def baseline_receive(y: np.ndarray, spec: ResourceGridSpec, constellation: Constellation,
                     csi: str = "ls", true_channel: ChannelRealization | None = None,
                     maxlog: bool = False) -> np.ndarray:
    """Per-RE LLRs ``(..., S, F, N)`` from received grids ``(..., S, F, A)``."""
    if csi == "ls":
        est = ls_estimate(y, spec)
    elif csi == "perfect":
        if true_channel is None:
            raise ContractError("perfect CSI requires the true channel realization")
        est = perfect_estimate(true_channel)
    else:
        raise ContractError(f"unknown csi mode '{csi}'")
    nv = np.asarray(est.noise_var)[..., None, None]
    x_hat, mse = lmmse_equalize(y, est.h, nv)
    x_u, nv_u = unbias(x_hat, mse)
    demap = demap_maxlog if maxlog else demap_exact
    return demap(x_u, nv_u, constellation)
