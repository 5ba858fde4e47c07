"""Transformer-encoder neural receiver.

Every resource element of the slot is one token. Token features are the
real and imaginary parts of the received samples on each antenna followed by
``ln(noise_var)``. With ``pilot_derotation`` on, samples at pilot resource
elements are first multiplied by the conjugate of the known pilot, so the
network sees ``h`` there instead of ``h * p`` with a pseudo-random ``p``.
The network is an input dense layer, an optional fixed 2-D
sinusoidal position table, ``num_blocks`` post-norm encoder blocks
(self-attention, add & norm, two-layer ReLU FFN, add & norm) and a dense head
producing one LLR per bit (positive favours 0).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .modem import ResourceGridSpec
from .numerics import ContractError, Parameter, Tensor

LN_EPS = 1e-6


@dataclass(frozen=True)
class TransRxConfig:
    num_blocks: int = 4
    num_heads: int = 4
    d_model: int = 128
    ffn_dim: int = 128
    bits_per_symbol: int = 6
    rx_antennas: int = 2
    num_symbols: int = 14
    num_subcarriers: int = 128
    positional_encoding: str = "sinusoidal-2d"
    pilot_symbols: tuple[int, ...] = (2, 11)
    pilot_seed: int = 1234
    pilot_derotation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pilot_symbols", tuple(int(i) for i in self.pilot_symbols))
        for name in ("num_blocks", "num_heads", "d_model", "ffn_dim", "bits_per_symbol",
                     "rx_antennas", "num_symbols", "num_subcarriers"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.d_model % self.num_heads:
            raise ContractError("d_model must be divisible by num_heads")
        if self.positional_encoding not in ("none", "sinusoidal-2d"):
            raise ContractError(f"unknown positional encoding '{self.positional_encoding}'")
        if self.positional_encoding == "sinusoidal-2d" and self.d_model % 4:
            raise ContractError("sinusoidal-2d needs d_model divisible by 4")
        if any(not 0 <= i < self.num_symbols for i in self.pilot_symbols):
            raise ContractError("pilot symbol index outside the slot")

    @property
    def num_features(self) -> int:
        return 2 * self.rx_antennas + 1

    @property
    def num_tokens(self) -> int:
        return self.num_symbols * self.num_subcarriers

    def to_dict(self) -> dict:
        return asdict(self)

    def grid_spec(self) -> ResourceGridSpec:
        return ResourceGridSpec(self.num_symbols, self.num_subcarriers, self.pilot_symbols,
                                self.pilot_seed, self.rx_antennas)

    def parameter_count(self) -> int:
        d, f = self.d_model, self.ffn_dim
        block = 4 * (d * d + d) + 2 * 2 * d + (d * f + f) + (f * d + d)
        return (self.num_features * d + d) + self.num_blocks * block + (d * self.bits_per_symbol
                                                                        + self.bits_per_symbol)


def _sinusoids(length: int, dim: int) -> np.ndarray:
    # Periods run geometrically from 3 to 2L/3 positions, so every channel
    # varies across the axis and none aliases at the grid spacing.
    n = dim // 2
    periods = 3.0 * (2.0 * length / 3.0) ** (np.arange(n) / max(n - 1, 1))
    ang = np.arange(length)[:, None] * (2.0 * np.pi / periods)[None, :]
    out = np.empty((length, dim))
    out[:, 0::2], out[:, 1::2] = np.sin(ang), np.cos(ang)
    return out


def positional_table(num_symbols: int, num_subcarriers: int, d_model: int) -> np.ndarray:
    """(S*F, d_model): first half encodes the symbol index, second half the subcarrier."""
    half = d_model // 2
    sym = _sinusoids(num_symbols, half)
    sub = _sinusoids(num_subcarriers, half)
    return np.concatenate([np.repeat(sym, num_subcarriers, axis=0),
                           np.tile(sub, (num_symbols, 1))], axis=1)


class TransRxModel:
    def __init__(self, config: TransRxConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params
        self._pe = None

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].tensor

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def pe(self) -> Tensor | None:
        c = self.config
        if c.positional_encoding == "none":
            return None
        dt = nx.default_dtype()
        if self._pe is None or self._pe.data.dtype != dt:
            self._pe = Tensor(positional_table(c.num_symbols, c.num_subcarriers, c.d_model))
        return self._pe

    def derotation(self) -> np.ndarray | None:
        """(S, F) multiplier: conj(pilot) on pilot REs and 1 elsewhere, or None."""
        if not self.config.pilot_derotation or not self.config.pilot_symbols:
            return None
        spec = self.config.grid_spec()
        rot = np.ones((spec.num_symbols, spec.num_subcarriers), dtype=complex)
        rot[list(spec.pilot_symbols)] = np.conj(spec.pilots)
        return rot

    def features(self, y: np.ndarray, noise_var) -> Tensor:
        return preprocess(y, noise_var, self.derotation())

    def __call__(self, features: Tensor) -> Tensor:
        return forward(self, features)


def init_parameters(config: TransRxConfig, seed: int = 0) -> TransRxModel:
    """Uniform fan-in init (limit 1/sqrt(fan_in)), zero biases, unit LN gains.

    The output head starts at zero so an untrained model emits all-zero LLRs.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}

    def dense(name, fan_in, fan_out, zero=False):
        lim = 1.0 / math.sqrt(fan_in)
        w = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-lim, lim, (fan_in, fan_out))
        params[f"{name}/w"] = Parameter(f"{name}/w", Tensor(w))
        params[f"{name}/b"] = Parameter(f"{name}/b", Tensor(np.zeros(fan_out)))

    def norm(name, dim):
        params[f"{name}/gain"] = Parameter(f"{name}/gain", Tensor(np.ones(dim)))
        params[f"{name}/bias"] = Parameter(f"{name}/bias", Tensor(np.zeros(dim)))

    d = config.d_model
    dense("input", config.num_features, d)
    for i in range(config.num_blocks):
        for proj in ("wq", "wk", "wv", "wo"):
            dense(f"block{i}/mhsa/{proj}", d, d)
        norm(f"block{i}/norm1", d)
        dense(f"block{i}/ffn1", d, config.ffn_dim)
        dense(f"block{i}/ffn2", config.ffn_dim, d)
        norm(f"block{i}/norm2", d)
    dense("output", d, config.bits_per_symbol, zero=True)
    return TransRxModel(config, params)


def preprocess(y: np.ndarray, noise_var, derotation: np.ndarray | None = None) -> Tensor:
    """Received grids ``(B, S, F, A)`` to token features ``(B, S*F, 2A+1)``.

    Tokens are row-major over (symbol, subcarrier). A single grid ``(S, F, A)``
    is treated as a batch of one. ``derotation``, if given, is an ``(S, F)``
    complex multiplier applied to every antenna before splitting into parts.
    """
    y = np.asarray(y)
    if y.ndim == 3:
        y = y[None]
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape[:1])
    if np.any(nv <= 0):
        raise ContractError("noise_var must be positive")
    b, s, f, a = y.shape
    if derotation is not None:
        if derotation.shape != (s, f):
            raise ContractError(f"derotation {derotation.shape} does not match grid {(s, f)}")
        y = y * derotation[..., None]
    tok = y.reshape(b, s * f, a)
    feats = np.concatenate([tok.real, tok.imag,
                            np.broadcast_to(np.log(nv)[:, None, None], (b, s * f, 1))], axis=-1)
    return Tensor(feats)


def _dense(model: TransRxModel, name: str, x: Tensor) -> Tensor:
    return nx.add(nx.matmul(x, model[f"{name}/w"]), model[f"{name}/b"])


def _attention(model: TransRxModel, prefix: str, x: Tensor) -> Tensor:
    b, t, d = x.shape
    h = model.config.num_heads
    dh = d // h

    def heads(name):
        z = _dense(model, f"{prefix}/{name}", x)
        return nx.transpose(nx.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

    q, k, v = heads("wq"), heads("wk"), heads("wv")
    scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = nx.matmul(nx.softmax_lastaxis(scores), v)
    ctx = nx.reshape(nx.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return _dense(model, f"{prefix}/wo", ctx)


def forward(model: TransRxModel, features: Tensor) -> Tensor:
    """Token features ``(B, T, 2A+1)`` to LLRs ``(B, T, bits_per_symbol)``."""
    c = model.config
    if features.ndim != 3 or features.shape[-1] != c.num_features:
        raise ContractError(f"features {features.shape} incompatible with config "
                            f"({c.num_features} features)")
    x = _dense(model, "input", features)
    pe = model.pe()
    if pe is not None:
        if features.shape[1] != c.num_tokens:
            raise ContractError(f"positional table expects {c.num_tokens} tokens")
        x = nx.add(x, pe)
    for i in range(c.num_blocks):
        p = f"block{i}"
        x = nx.layer_norm(nx.add(x, _attention(model, f"{p}/mhsa", x)),
                          model[f"{p}/norm1/gain"], model[f"{p}/norm1/bias"], LN_EPS)
        ffn = _dense(model, f"{p}/ffn2", nx.relu(_dense(model, f"{p}/ffn1", x)))
        x = nx.layer_norm(nx.add(x, ffn), model[f"{p}/norm2/gain"], model[f"{p}/norm2/bias"],
                          LN_EPS)
    return _dense(model, "output", x)


def llr_grid(model: TransRxModel, y: np.ndarray, noise_var, batch_size: int = 8) -> np.ndarray:
    """Inference helper: ``(B, S, F, A)`` grids to ``(B, S, F, N)`` LLRs."""
    y = np.asarray(y)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape[:1])
    out = []
    with nx.no_grad():
        for i in range(0, y.shape[0], batch_size):
            out.append(forward(model, model.features(y[i:i + batch_size],
                                                  nv[i:i + batch_size])).data)
    llr = np.concatenate(out, axis=0)
    return llr.reshape(y.shape[:3] + (model.config.bits_per_symbol,))
