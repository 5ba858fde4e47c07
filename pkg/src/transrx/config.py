"""Experiment configuration: dataclass sections read from an INI-style text file.

Defaults follow the link parameters the receiver was designed for (14 OFDM
symbols, 128 subcarriers at 240 kHz, 64-QAM, rate-1/2 code, 28 GHz carrier,
266 ns delay spread, 60-120 km/h, two receive antennas) and the model
hyperparameters (4 blocks, 4 heads, width 128, AdamW at 1e-3).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .numerics import ContractError


@dataclass
class WaveformConfig:
    num_symbols: int = 14
    num_subcarriers: int = 128
    subcarrier_spacing_hz: float = 240e3
    pilot_symbols: tuple[int, ...] = (2, 11)
    pilot_seed: int = 1234
    rx_antennas: int = 2
    bits_per_symbol: int = 6


@dataclass
class CodeConfig:
    base_matrix: str = "default"  # "default" or path to an integer grid file
    lifting: int = 64
    max_iters: int = 20
    min_sum_scale: float = 0.75
    llr_clip: float = 20.0


@dataclass
class ChannelConfig:
    preset: str = "uma-like"  # uma-like | cdl-like | flat
    pdp_csv: str = ""  # overrides preset when set
    delay_spread_s: float = 266e-9
    carrier_hz: float = 28e9
    speed_min_kmh: float = 60.0
    speed_max_kmh: float = 120.0
    num_sinusoids: int = 32


@dataclass
class ModelConfig:
    num_blocks: int = 4
    num_heads: int = 4
    d_model: int = 128
    ffn_dim: int = 128
    positional_encoding: str = "sinusoidal-2d"
    pilot_derotation: bool = True
    init_seed: int = 0


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 2000
    lr: float = 1e-3
    weight_decay: float = 0.01
    snr_min_db: float = 0.0
    snr_max_db: float = 12.0
    seed: int = 1
    checkpoint_interval: int = 500
    checkpoint: str = "transrx.ckpt"
    log: str = "train_log.csv"


@dataclass
class SweepConfig:
    snr_db: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    receivers: tuple[str, ...] = ("perfect-csi", "ls-lmmse")
    min_bits: int = 100_000
    max_blocks: int = 2000
    target_errors: int = 100
    workers: int = 1
    seed: int = 2024
    results_csv: str = "sweep.csv"
    plot_csv: str = "sweep_plot.csv"


@dataclass
class SimConfig:
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    code: CodeConfig = field(default_factory=CodeConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        for sec in fields(self):
            obj = getattr(self, sec.name)
            cp[sec.name] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, base_dir: Path | None = None) -> "SimConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        cfg = cls()
        known = {f.name for f in fields(cls)}
        for sec in cp.sections():
            if sec not in known:
                raise ContractError(f"unknown config section [{sec}]")
            obj = getattr(cfg, sec)
            hints = get_type_hints(type(obj))
            names = {f.name for f in fields(obj)}
            for key, raw in cp[sec].items():
                if key not in names:
                    raise ContractError(f"unknown key '{key}' in [{sec}]")
                setattr(obj, key, _parse(raw, hints[key], f"[{sec}] {key}"))
        cfg._base_dir = base_dir
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), base_dir=path.parent)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def resolve(self, rel: str) -> Path:
        """Resolve a path from the config relative to the config file's directory."""
        p = Path(rel)
        base = getattr(self, "_base_dir", None)
        return p if p.is_absolute() or base is None else base / p


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, hint, where: str):
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if hint == tuple[int, ...]:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if hint == tuple[float, ...]:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if hint == tuple[str, ...]:
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ContractError(f"{where}: cannot parse '{raw}'") from exc
    raise TypeError(f"unsupported config type {hint}")
