"""End-to-end link evaluation: BER/BLER sweeps and the image transmission demo.

One evaluation block is a fixed composition

    info bits -> LDPC encode -> QAM map -> resource grid -> channel
    -> receiver LLRs -> grid demap -> clip -> LDPC decode -> compare

and receivers only supply the LLR stage. Every block draws its randomness
from ``default_rng([master_seed, point, block])`` before the receiver runs,
so all receivers at a point see the same bits, channel and noise, and the
totals do not depend on how blocks are spread over worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .baseline_rx import baseline_receive
from .channel import ChannelRealization, snr_to_noise_var
from .config import SimConfig
from .ldpc import decode_batch
from .link import Link
from .modem import grid_demap
from .neural_rx import llr_grid
from .numerics import ContractError

# blocks evaluated between stopping-rule checks; fixed so the number of
# simulated blocks never depends on the worker count
CHUNK_BLOCKS = 8

Receiver = Callable[[np.ndarray, ChannelRealization], np.ndarray]
"""Maps received grids ``(B, S, F, A)`` and the realization to LLRs ``(B, S, F, N)``.

Only ``perfect-csi`` may look at ``realization.h``; every receiver may use
the nominal ``realization.noise_var``.
"""

_FACTORIES: dict[str, Callable[[str, SimConfig, Link], Receiver]] = {}


def register_receiver(prefix: str, factory: Callable[[str, SimConfig, Link], Receiver]):
    """Add a receiver family. Ids are ``prefix`` or ``prefix:argument``.

    This is the slot for further learned baselines: a factory gets the full id,
    the config and the link and returns a :data:`Receiver`.
    """
    _FACTORIES[prefix] = factory


def _baseline(csi: str):
    def factory(rid, cfg, link):
        def rx(y, real):
            return baseline_receive(y, link.spec, link.constellation, csi=csi, true_channel=real)
        return rx
    return factory


def _transrx(rid, cfg, link):
    from .trainer import load_checkpoint, model_config_from

    _, _, path = rid.partition(":")
    path = path or cfg.train.checkpoint
    model, _ = load_checkpoint(cfg.resolve(path), expect=model_config_from(cfg))

    def rx(y, real):
        return llr_grid(model, y, real.noise_var)
    return rx


register_receiver("perfect-csi", _baseline("perfect"))
register_receiver("ls-lmmse", _baseline("ls"))
register_receiver("transrx", _transrx)


def make_receiver(rid: str, cfg: SimConfig, link: Link | None = None) -> Receiver:
    prefix = rid.split(":", 1)[0]
    if prefix not in _FACTORIES:
        raise ContractError(f"unknown receiver '{rid}' (known: {', '.join(sorted(_FACTORIES))})")
    return _FACTORIES[prefix](rid, cfg, link or Link.from_config(cfg))


@dataclass
class BlockResult:
    tx_bits: np.ndarray  # (codewords, k)
    rx_bits: np.ndarray
    bit_errors: int
    codewords: int
    codeword_errors: int


def run_e2e_block(cfg: SimConfig, receiver: Receiver | str, snr_db: float, seed,
                  link: Link | None = None, info_bits: np.ndarray | None = None) -> BlockResult:
    """Send one block of codewords through the full chain and count errors.

    ``seed`` is anything ``np.random.default_rng`` accepts. ``info_bits``
    (``(codewords, k)``) replaces the random payload, e.g. for images.
    """
    link = link or Link.from_config(cfg)
    if isinstance(receiver, str):
        receiver = make_receiver(receiver, cfg, link)
    ncw, ngrids = link.block_layout
    rng = np.random.default_rng(seed)
    if info_bits is None:
        info_bits = rng.integers(0, 2, (ncw, link.code.k), dtype=np.int8)
    elif info_bits.shape != (ncw, link.code.k):
        raise ContractError(f"info_bits must be {(ncw, link.code.k)}, got {info_bits.shape}")
    _, y, real = link.transmit(rng, info_bits, snr_to_noise_var(snr_db), ngrids)
    try:
        llr = receiver(y, real)
    except Exception as exc:
        raise type(exc)(f"receiver failed at {snr_db} dB, block seed {seed}: {exc}") from exc
    stream = grid_demap(llr, link.spec).reshape(-1)
    c = cfg.code
    coded = np.clip(stream[:ncw * link.code.n], -c.llr_clip, c.llr_clip)
    rx_bits, _, _ = decode_batch(coded.reshape(ncw, link.code.n), link.code,
                                 max_iters=c.max_iters, scale=c.min_sum_scale, clip=c.llr_clip)
    wrong = rx_bits != info_bits
    return BlockResult(info_bits, rx_bits, int(wrong.sum()), ncw, int(wrong.any(axis=1).sum()))


@dataclass
class SweepPoint:
    receiver: str
    snr_db: float
    bits: int
    bit_errors: int
    ber: float
    blocks: int  # codewords
    block_errors: int
    bler: float
    seed: int


def _block_seed(master: int, point: int, block: int) -> list[int]:
    return [master, point, block]


def sweep_point(cfg: SimConfig, receiver: Receiver, rid: str, snr_db: float, point: int,
                link: Link, pool: ThreadPoolExecutor | None = None) -> SweepPoint:
    """Blocks until ``bits >= min_bits`` and ``errors >= target_errors``.

    ``max_blocks`` caps the number of codewords whatever the other counters say.
    """
    s = cfg.sweep
    ncw = link.block_layout[0]
    bits = errors = cws = cw_err = 0
    block = 0
    done = False
    while not done:
        idx = range(block, block + CHUNK_BLOCKS)
        run = lambda b: run_e2e_block(cfg, receiver, snr_db, _block_seed(s.seed, point, b),
                                      link)
        results = list(pool.map(run, idx)) if pool else [run(b) for b in idx]
        for r in results:
            bits += r.codewords * link.code.k
            errors += r.bit_errors
            cws += r.codewords
            cw_err += r.codeword_errors
            block += 1
            if (bits >= s.min_bits and errors >= s.target_errors) or cws + ncw > s.max_blocks:
                done = True
                break
    return SweepPoint(rid, float(snr_db), bits, errors, errors / bits, cws, cw_err,
                      cw_err / cws, s.seed)


def ber_sweep(cfg: SimConfig, receivers: list[str] | None = None, workers: int | None = None,
              link: Link | None = None, progress=None) -> list[SweepPoint]:
    """All (receiver, SNR) points; rows ordered by receiver then SNR."""
    s = cfg.sweep
    if not s.snr_db:
        raise ContractError("sweep needs at least one SNR point")
    link = link or Link.from_config(cfg)
    receivers = list(receivers or s.receivers)
    workers = s.workers if workers is None else workers
    out = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for rid in receivers:
            rx = make_receiver(rid, cfg, link)
            for i, snr in enumerate(s.snr_db):
                pt = sweep_point(cfg, rx, rid, snr, i, link, pool)
                out.append(pt)
                if progress:
                    progress(pt)
    finally:
        if pool:
            pool.shutdown()
    return out


_RESULT_FIELDS = [f.name for f in fields(SweepPoint)]


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_results_csv(points: list[SweepPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_RESULT_FIELDS)
        for p in points:
            w.writerow([_fmt(v) for v in asdict(p).values()])


def read_results_csv(path: str | Path) -> list[SweepPoint]:
    types = {f.name: f.type for f in fields(SweepPoint)}
    conv = {"str": str, "float": float, "int": int}
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepPoint(**{k: conv[types[k]](v) for k, v in r.items()}) for r in rows]


def write_plot_csv(points: list[SweepPoint], path: str | Path) -> None:
    """Wide table: ``snr_db`` then one BER column per receiver (blank if missing)."""
    receivers = list(dict.fromkeys(p.receiver for p in points))
    snrs = sorted({p.snr_db for p in points})
    table = {(p.receiver, p.snr_db): p.ber for p in points}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snr_db"] + receivers)
        for snr in snrs:
            w.writerow([repr(snr)] + [repr(table[r, snr]) if (r, snr) in table else ""
                                      for r in receivers])


def read_plot_csv(path: str | Path) -> dict[str, list[tuple[float, float]]]:
    """``{receiver: [(snr_db, ber), ...]}`` from a plot-data file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out: dict[str, list[tuple[float, float]]] = {r: [] for r in header[1:]}
    for row in body:
        for r, v in zip(header[1:], row[1:]):
            if v:
                out[r].append((float(row[0]), float(v)))
    return out


# ---------------------------------------------------------------- images

def psnr(reference: np.ndarray, reconstructed: np.ndarray, peak: float = 255.0) -> float:
    """PSNR in dB; ``math.inf`` when the images are identical."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"psnr: shapes {a.shape} and {b.shape} differ")
    if peak <= 0:
        raise ContractError("psnr: peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def _tokens(buf: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    """Whitespace-separated header tokens, skipping ``#`` comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ContractError("image header truncated")
        out.append(buf[start:pos])
    return out, pos


def read_pnm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PGM/PPM (P2, P3, P5, P6) image. Returns ``(pixels, maxval)``.

    Grey images come back as ``(H, W)``, colour as ``(H, W, 3)``.
    """
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ContractError(f"{path}: unsupported image format {magic!r}; expected portable "
                            "graymap/pixmap (P2, P3, P5 or P6)")
    (w, h, maxval), pos = _tokens(buf, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ContractError(f"{path}: maxval {maxval} out of range")
    chans = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * chans
    if magic in (b"P2", b"P3"):
        vals, _ = _tokens(buf, count, pos)
        data = np.array([int(v) for v in vals], dtype=np.uint16 if maxval > 255 else np.uint8)
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = buf[pos:pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise ContractError(f"{path}: pixel data truncated")
        data = np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))
    shape = (h, w, 3) if chans == 3 else (h, w)
    return data.reshape(shape), maxval


def write_pnm(path: str | Path, pixels: np.ndarray, maxval: int = 255, binary: bool = True):
    px = np.asarray(pixels)
    if px.ndim == 3 and px.shape[2] == 3:
        magic = "P6" if binary else "P3"
    elif px.ndim == 2:
        magic = "P5" if binary else "P2"
    else:
        raise ContractError(f"cannot write image of shape {px.shape}")
    h, w = px.shape[:2]
    header = f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii")
    if binary:
        dtype = ">u2" if maxval > 255 else np.uint8
        body = px.astype(dtype).tobytes()
    else:
        body = ("\n".join(" ".join(str(int(v)) for v in row)
                          for row in px.reshape(h, -1)) + "\n").encode("ascii")
    Path(path).write_bytes(header + body)


@dataclass
class ImageReport:
    receiver: str
    snr_db: float
    psnr_db: float
    bit_errors: int
    bits: int
    reconstructed: np.ndarray


def image_demo(cfg: SimConfig, image, receiver: str, snr_db: float,
               link: Link | None = None, seed: int | None = None) -> ImageReport:
    """Send an image's bits through the link and measure the reconstruction PSNR.

    ``image`` is a PGM/PPM path or a ``(pixels, maxval)`` pair. Pixels are
    serialized MSB first, padded with zeros to whole blocks, and bits that the
    decoder gets wrong stay wrong in the output.
    """
    link = link or Link.from_config(cfg)
    pixels, maxval = read_pnm(image) if isinstance(image, (str, Path)) else image
    pixels = np.asarray(pixels)
    depth = 16 if maxval > 255 else 8
    words = pixels.reshape(-1).astype(np.uint16 if depth == 16 else np.uint8)
    if depth == 16:
        words = words.astype(">u2").view(np.uint8)
    bits = np.unpackbits(words.view(np.uint8))
    ncw, _ = link.block_layout
    per_block = ncw * link.code.k
    nblocks = max(1, math.ceil(bits.size / per_block))
    padded = np.zeros(nblocks * per_block, dtype=np.int8)
    padded[:bits.size] = bits
    rx = make_receiver(receiver, cfg, link)
    master = cfg.sweep.seed if seed is None else seed
    out = np.empty_like(padded)
    for b in range(nblocks):
        blk = padded[b * per_block:(b + 1) * per_block].reshape(ncw, link.code.k)
        res = run_e2e_block(cfg, rx, snr_db, [master, b], link, info_bits=blk)
        out[b * per_block:(b + 1) * per_block] = res.rx_bits.reshape(-1)
    rx_bytes = np.packbits(out[:bits.size].astype(np.uint8))
    if depth == 16:
        rec = rx_bytes.view(">u2").astype(np.uint16)
    else:
        rec = rx_bytes
    rec = np.minimum(rec, maxval).reshape(pixels.shape).astype(pixels.dtype)
    errors = int(np.sum(out[:bits.size] != bits))
    return ImageReport(receiver, float(snr_db), psnr(pixels, rec, float(maxval)), errors,
                       int(bits.size), rec)
