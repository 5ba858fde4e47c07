"""Rate-1/2 quasi-cyclic LDPC code with a normalized min-sum decoder.

The default base matrix (8 x 16 blocks, lifting 64, so n=1024 and k=512)
was produced by ``scripts/make_base_matrix.py``: random 4-cycle-free
circulant shifts on the information columns and an 802.11n-style
dual-diagonal parity part. Codewords are systematic, info bits first.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numerics import ContractError

DEFAULT_BASE = np.array([
    [29, -1, -1, -1, 15, -1, -1, 6, 1, 0, -1, -1, -1, -1, -1, -1],
    [-1, 39, 28, -1, -1, -1, 3, 60, -1, 0, 0, -1, -1, -1, -1, -1],
    [-1, 44, -1, 39, -1, -1, 25, -1, -1, -1, 0, 0, -1, -1, -1, -1],
    [51, -1, 40, -1, -1, 32, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1],
    [7, -1, 52, -1, -1, -1, 52, -1, 0, -1, -1, -1, 0, 0, -1, -1],
    [-1, 21, -1, 53, -1, 24, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1],
    [8, -1, -1, -1, 34, 25, -1, 30, -1, -1, -1, -1, -1, -1, 0, 0],
    [-1, 63, -1, 32, 46, -1, -1, -1, 1, -1, -1, -1, -1, -1, -1, 0],
])
DEFAULT_LIFTING = 64
LLR_CLIP = 20.0


def load_base_matrix(path: str | Path) -> np.ndarray:
    """Read a whitespace-separated integer grid (``-1`` = all-zero block)."""
    rows = [line.split() for line in Path(path).read_text().splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    base = np.array([[int(v) for v in r] for r in rows], dtype=int)
    if base.ndim != 2 or len({len(r) for r in rows}) != 1:
        raise ContractError(f"{path}: base matrix rows have unequal lengths")
    return base


def _gf2_rank(mat: np.ndarray) -> int:
    m = mat.astype(bool).copy()
    rank = 0
    for col in range(m.shape[1]):
        piv = np.nonzero(m[rank:, col])[0]
        if piv.size == 0:
            continue
        p = rank + piv[0]
        if p != rank:
            m[[rank, p]] = m[[p, rank]]
        others = np.nonzero(m[:, col])[0]
        others = others[others != rank]
        m[others] ^= m[rank]
        rank += 1
        if rank == m.shape[0]:
            break
    return rank


def _gf2_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` over GF(2) for square invertible ``a`` (b may be a matrix)."""
    n = a.shape[0]
    aug = np.hstack([a.astype(bool), b.astype(bool)])
    for col in range(n):
        piv = np.nonzero(aug[col:, col])[0]
        if piv.size == 0:
            raise ContractError("parity part of H is singular over GF(2)")
        p = col + piv[0]
        if p != col:
            aug[[col, p]] = aug[[p, col]]
        others = np.nonzero(aug[:, col])[0]
        others = others[others != col]
        aug[others] ^= aug[col]
    return aug[:, n:]


@dataclass(frozen=True, eq=False)
class QcLdpcCode:
    base: np.ndarray
    lifting: int

    def __post_init__(self):
        base = np.asarray(self.base, dtype=int)
        if base.ndim != 2 or base.shape[1] <= base.shape[0]:
            raise ContractError("base matrix must be wider than tall")
        if np.any(base >= self.lifting) or np.any(base < -1):
            raise ContractError("circulant shifts must lie in [-1, lifting)")
        object.__setattr__(self, "base", base)

    @property
    def n(self) -> int:
        return self.base.shape[1] * self.lifting

    @property
    def m(self) -> int:
        return self.base.shape[0] * self.lifting

    @property
    def k(self) -> int:
        return self.n - self.m

    @property
    def rate(self) -> float:
        return self.k / self.n

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(check index, variable index) per edge, sorted by check."""
        z = self.lifting
        chk, var = [], []
        for r, c in zip(*np.nonzero(self.base >= 0)):
            s = self.base[r, c]
            t = np.arange(z)
            chk.append(r * z + t)
            var.append(c * z + (t + s) % z)
        chk, var = np.concatenate(chk), np.concatenate(var)
        order = np.lexsort((var, chk))
        return chk[order], var[order]

    @cached_property
    def H(self) -> sp.csr_matrix:
        chk, var = self.edges
        return sp.csr_matrix((np.ones(chk.size, dtype=np.int8), (chk, var)),
                             shape=(self.m, self.n))

    @cached_property
    def parity_map(self) -> np.ndarray:
        """(m, k) binary matrix P with parity = P @ info (mod 2)."""
        dense = self.H.toarray().astype(bool)
        return _gf2_solve(dense[:, self.k:], dense[:, :self.k]).astype(np.int32)

    def rank(self) -> int:
        return _gf2_rank(self.H.toarray())

    def syndrome(self, codewords: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(codewords).astype(np.int32)
        return np.asarray(self.H @ c.T).T % 2


def default_code() -> QcLdpcCode:
    return _DEFAULT


_DEFAULT = QcLdpcCode(DEFAULT_BASE, DEFAULT_LIFTING)


def encode(info_bits: np.ndarray, code: QcLdpcCode) -> np.ndarray:
    """Systematic encoding; accepts ``(k,)`` or ``(batch, k)``."""
    u = np.asarray(info_bits)
    if u.shape[-1] != code.k:
        raise ContractError(f"encode: expected {code.k} info bits, got {u.shape[-1]}")
    u2 = u.reshape(-1, code.k).astype(np.int32)
    parity = (u2 @ code.parity_map.T) % 2
    out = np.concatenate([u2, parity], axis=1).astype(np.int8)
    return out.reshape(u.shape[:-1] + (code.n,))


class _DecoderGraph:
    """Padded check-major edge layout used by the vectorized min-sum."""

    def __init__(self, code: QcLdpcCode):
        chk, var = code.edges
        self.num_edges = chk.size
        self.var = var
        deg = np.bincount(chk, minlength=code.m)
        dmax = deg.max()
        start = np.concatenate([[0], np.cumsum(deg)[:-1]])
        slot = np.arange(chk.size) - start[chk]
        # index into a length E+1 edge buffer; entry E is padding
        self.pad = np.full((code.m, dmax), chk.size, dtype=np.int64)
        self.pad[chk, slot] = np.arange(chk.size)
        self.valid = self.pad < chk.size
        self.gather = sp.csr_matrix((np.ones(chk.size), (np.arange(chk.size), var)),
                                    shape=(chk.size, code.n))


_GRAPHS: dict[int, _DecoderGraph] = {}


def _graph(code: QcLdpcCode) -> _DecoderGraph:
    g = _GRAPHS.get(id(code))
    if g is None:
        g = _GRAPHS[id(code)] = _DecoderGraph(code)
    return g


def decode_batch(llrs: np.ndarray, code: QcLdpcCode, max_iters: int = 20,
                 scale: float = 0.75, clip: float = LLR_CLIP):
    """Normalized min-sum decoding of ``(batch, n)`` LLRs.

    Returns ``(info_bits, converged, iters_used)`` with per-codeword flags.
    Codewords stop iterating as soon as their syndrome is zero.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    llrs = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
    if llrs.shape[1] != code.n:
        raise ContractError(f"decode: expected {code.n} LLRs, got {llrs.shape[1]}")
    g = _graph(code)
    ch = np.clip(llrs, -clip, clip)
    batch = ch.shape[0]
    c2v = np.zeros((batch, g.num_edges))
    post = ch.copy()
    hard = (post < 0).astype(np.int8)
    converged = np.zeros(batch, dtype=bool)
    iters = np.zeros(batch, dtype=np.int32)
    active = np.arange(batch)
    for it in range(1, max_iters + 1):
        v2c = post[active][:, g.var] - c2v[active]
        buf = np.concatenate([v2c, np.zeros((active.size, 1))], axis=1)
        msg = buf[:, g.pad]  # (B, m, dmax)
        mag = np.where(g.valid, np.abs(msg), np.inf)
        neg = (msg < 0) & g.valid
        sign_all = np.where(neg.sum(axis=2) % 2 == 1, -1.0, 1.0)
        i1 = mag.argmin(axis=2)
        min1 = np.take_along_axis(mag, i1[..., None], axis=2)[..., 0]
        np.put_along_axis(mag, i1[..., None], np.inf, axis=2)
        min2 = mag.min(axis=2)
        out_mag = np.where(np.arange(mag.shape[2]) == i1[..., None], min2[..., None],
                           min1[..., None])
        out = scale * sign_all[..., None] * np.where(neg, -1.0, 1.0) * out_mag
        new = np.empty((active.size, g.num_edges))
        new[:, g.pad[g.valid]] = out[:, g.valid]
        c2v[active] = new
        post[active] = ch[active] + np.asarray(new @ g.gather)
        hard[active] = post[active] < 0
        iters[active] = it
        ok = ~np.any(code.syndrome(hard[active]), axis=1)
        converged[active[ok]] = True
        active = active[~ok]
        if active.size == 0:
            break
    return hard[:, :code.k].copy(), converged, iters


def decode(llrs: np.ndarray, code: QcLdpcCode, max_iters: int = 20):
    """Decode a single length-n LLR vector; see :func:`decode_batch`."""
    llrs = np.asarray(llrs)
    if llrs.ndim != 1:
        raise ContractError("decode expects a single LLR vector")
    bits, conv, iters = decode_batch(llrs[None], code, max_iters)
    return bits[0], bool(conv[0]), int(iters[0])
