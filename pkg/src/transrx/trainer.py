"""Training of the neural receiver and checkpoint persistence.

The model minimizes bitwise binary cross-entropy between its LLRs and the
coded bits carried by the data resource elements. ``rate_metric`` reports
``1 - BCE / ln 2``, an achievable-rate estimate in bits per coded bit.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import SimConfig, TrainConfig
from .channel import apply
from .ldpc import encode
from .link import Link
from .neural_rx import TransRxConfig, TransRxModel, forward, init_parameters
from .numerics import ContractError, Parameter, Tensor

LN2 = math.log(2.0)
MAGIC = b"TRX1"
FORMAT_VERSION = 1
LOG_COLUMNS = ("step", "bce", "rate", "grad_norm", "lr", "wallclock_s")


class CheckpointError(RuntimeError):
    pass


def bce_loss(llrs: Tensor, bits: np.ndarray) -> Tensor:
    """Mean bitwise BCE with ``P(bit=1) = sigmoid(-LLR)``.

    Per bit this is ``softplus(LLR)`` for a 1 and ``softplus(-LLR)`` for a 0.
    """
    bits = np.asarray(bits)
    if bits.shape != llrs.shape:
        raise ContractError(f"bce_loss: llrs {llrs.shape} vs bits {bits.shape}")
    sign = Tensor(2.0 * bits - 1.0)
    return nx.mean_all(nx.softplus(nx.mul(llrs, sign)))


def rate_metric(bce: float) -> float:
    return 1.0 - bce / LN2


def model_config_from(cfg: SimConfig) -> TransRxConfig:
    m, w = cfg.model, cfg.waveform
    return TransRxConfig(num_blocks=m.num_blocks, num_heads=m.num_heads, d_model=m.d_model,
                         ffn_dim=m.ffn_dim, bits_per_symbol=w.bits_per_symbol,
                         rx_antennas=w.rx_antennas, num_symbols=w.num_symbols,
                         num_subcarriers=w.num_subcarriers,
                         positional_encoding=m.positional_encoding,
                         pilot_symbols=w.pilot_symbols, pilot_seed=w.pilot_seed,
                         pilot_derotation=m.pilot_derotation)


@dataclass
class Batch:
    bits: np.ndarray  # (B, num_data_re, N) coded bits on data REs
    y: np.ndarray  # (B, S, F, A)
    noise_var: np.ndarray  # (B,)


def make_batch(link: Link, rng: np.random.Generator, batch_size: int,
               snr_range: tuple[float, float]) -> Batch:
    """Fresh grids through the transmit chain; SNR drawn uniformly per grid."""
    cap = batch_size * link.bits_per_grid
    ncw = math.ceil(cap / link.code.n)
    info = rng.integers(0, 2, (ncw, link.code.k), dtype=np.int8)
    snr = rng.uniform(snr_range[0], snr_range[1], batch_size)
    nv = 10.0 ** (-snr / 10.0)
    # the encoder output is truncated to the batch capacity
    stream = encode(info, link.code).reshape(-1)[:cap]
    x = link.modulate(stream, batch_size)
    real = link.channel(rng, batch_size)
    real.noise_var = nv
    y = apply(x, real, rng)
    bits = stream.reshape(batch_size, link.spec.num_data_re, link.constellation.bits_per_symbol)
    return Batch(bits, y, nv)


def data_token_index(link: Link) -> np.ndarray:
    mask = ~link.spec.pilot_mask.reshape(-1)
    return np.nonzero(mask)[0]


def batch_loss(model: TransRxModel, batch: Batch, data_idx: np.ndarray) -> Tensor:
    llr = forward(model, model.features(batch.y, batch.noise_var))
    return bce_loss(nx.index_select(llr, data_idx, axis=1), batch.bits)


def train_step(model: TransRxModel, batch: Batch, data_idx: np.ndarray, lr: float = 1e-3,
               weight_decay: float = 0.01) -> tuple[float, float]:
    """One AdamW step on ``batch``; returns (loss before the update, grad norm)."""
    params = model.parameters()
    for p in params:
        p.zero_grad()
    loss = batch_loss(model, batch, data_idx)
    value = float(loss.data)
    if not math.isfinite(value):
        raise nx.NonFiniteError(f"non-finite training loss {value}")
    nx.backward(loss)
    gn = nx.grad_norm(params)
    nx.adamw_step(params, lr=lr, weight_decay=weight_decay)
    return value, gn


class Trainer:
    """Runs the training loop with per-step, counter-derived RNG streams."""

    def __init__(self, cfg: SimConfig, model: TransRxModel | None = None, step: int = 0):
        self.cfg = cfg
        self.link = Link.from_config(cfg)
        self.model = model or init_parameters(model_config_from(cfg), cfg.model.init_seed)
        self.step = step
        self.data_idx = data_token_index(self.link)

    def batch_for(self, step: int) -> Batch:
        t = self.cfg.train
        rng = np.random.default_rng([t.seed, step])
        return make_batch(self.link, rng, t.batch_size, (t.snr_min_db, t.snr_max_db))

    def run(self, steps: int | None = None, log_path: str | Path | None = None,
            checkpoint_path: str | Path | None = None, progress=None) -> list[dict]:
        t: TrainConfig = self.cfg.train
        steps = t.steps if steps is None else steps
        rows = []
        start = time.perf_counter()
        fh = open(log_path, "a" if self.step and Path(log_path).exists() else "w",
                  newline="") if log_path else None
        try:
            writer = csv.writer(fh) if fh else None
            if writer and fh.tell() == 0:
                writer.writerow(LOG_COLUMNS)
            for _ in range(steps):
                loss, gn = train_step(self.model, self.batch_for(self.step), self.data_idx,
                                      t.lr, t.weight_decay)
                self.step += 1
                row = dict(step=self.step, bce=loss, rate=rate_metric(loss), grad_norm=gn,
                           lr=t.lr, wallclock_s=time.perf_counter() - start)
                rows.append(row)
                if writer:
                    writer.writerow([row["step"], repr(loss), repr(row["rate"]), repr(gn),
                                     repr(t.lr), f"{row['wallclock_s']:.3f}"])
                if progress:
                    progress(row)
                if (checkpoint_path and t.checkpoint_interval
                        and self.step % t.checkpoint_interval == 0):
                    save_checkpoint(self.model, checkpoint_path, step=self.step,
                                    seed=t.seed)
        finally:
            if fh:
                fh.close()
        if checkpoint_path:
            save_checkpoint(self.model, checkpoint_path, step=self.step, seed=t.seed)
        return rows


# ---------------------------------------------------------------- checkpoints

def _write_records(fh, records: list[tuple[str, np.ndarray]]):
    fh.write(struct.pack("<I", len(records)))
    for name, arr in records:
        nb = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        fh.write(struct.pack("<I", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def records(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for _ in range(self.u32()):
            name = self.take(self.u32()).decode("utf-8")
            rank = self.u32()
            dims = struct.unpack(f"<{rank}I", self.take(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims)
            out.append((name, arr.astype(np.float32)))
        return out


def save_checkpoint(model: TransRxModel, path: str | Path, step: int = 0,
                    seed: int | None = None) -> None:
    """Binary checkpoint: magic, version, config JSON, params, AdamW state, state JSON.

    All integers are little-endian u32; tensor values are little-endian float32.
    """
    params = model.parameters()
    cfg_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    state = {"step": step, "seed": seed, "adam_steps": {p.name: p.step for p in params}}
    state_blob = json.dumps(state, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        _write_records(fh, [(p.name, p.data) for p in params])
        _write_records(fh, [(f"adam/m/{p.name}", p.m) for p in params]
                       + [(f"adam/v/{p.name}", p.v) for p in params])
        fh.write(struct.pack("<I", len(state_blob)))
        fh.write(state_blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path, expect: TransRxConfig | None = None):
    """Load ``(model, state)``; refuses a file whose config differs from ``expect``."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        config = TransRxConfig(**json.loads(r.take(r.u32()).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable config block") from exc
    if expect is not None and config != expect:
        raise CheckpointError(f"{path}: checkpoint config {config} does not match requested "
                              f"{expect}")
    weights = dict(r.records())
    moments = dict(r.records())
    state = json.loads(r.take(r.u32()).decode("utf-8"))
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint")
    with nx.precision(np.float32):
        model = init_parameters(config, 0)
    for name, p in model.params.items():
        if name not in weights or weights[name].shape != p.data.shape:
            raise CheckpointError(f"{path}: missing or misshapen parameter '{name}'")
        p.tensor.data = weights[name].copy()
        p.m = moments[f"adam/m/{name}"].copy()
        p.v = moments[f"adam/v/{name}"].copy()
        p.step = int(state["adam_steps"][name])
    return model, state
