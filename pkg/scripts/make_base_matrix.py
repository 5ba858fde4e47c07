"""Search for the default rate-1/2 QC-LDPC base matrix shipped in transrx.ldpc.

Information columns get random circulant shifts (column weight 3 or 4) chosen
so that no length-4 cycle exists in the lifted graph; the parity part uses the
dual-diagonal layout of IEEE 802.11n, which makes the parity sub-matrix
invertible. Prints the matrix as an integer grid (-1 = zero block).
"""

import argparse
import itertools

import numpy as np


def has_4cycle(base, z):
    rows, cols = base.shape
    for r1, r2 in itertools.combinations(range(rows), 2):
        both = [c for c in range(cols) if base[r1, c] >= 0 and base[r2, c] >= 0]
        for c1, c2 in itertools.combinations(both, 2):
            if (base[r1, c1] - base[r1, c2] + base[r2, c2] - base[r2, c1]) % z == 0:
                return True
    return False


def parity_part(mb):
    p = -np.ones((mb, mb), dtype=int)
    p[0, 0], p[mb // 2, 0], p[mb - 1, 0] = 1, 0, 1
    for j in range(1, mb):
        p[j - 1, j] = 0
        p[j, j] = 0
    return p


def search(mb=8, kb=8, z=64, weights=(4, 4, 3, 3, 3, 3, 3, 3), seed=7, tries=10000):
    rng = np.random.default_rng(seed)
    par = parity_part(mb)
    for _ in range(tries):
        info = -np.ones((mb, kb), dtype=int)
        load = np.zeros(mb)
        for c, w in enumerate(weights):
            # prefer lightly loaded rows to keep check degrees even
            order = np.lexsort((rng.random(mb), load))
            rows = order[:w]
            info[rows, c] = rng.integers(0, z, size=w)
            load[rows] += 1
        base = np.hstack([info, par])
        if not has_4cycle(base, z):
            return base
    raise RuntimeError("no 4-cycle-free matrix found")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--lifting", type=int, default=64)
    args = ap.parse_args()
    base = search(z=args.lifting, seed=args.seed)
    for row in base:
        print(" ".join(f"{v:3d}" for v in row))
