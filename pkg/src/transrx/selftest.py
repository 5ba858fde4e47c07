"""Built-in self checks run by ``transrx selftest``.

Each check returns a ``(name, passed, detail)`` tuple so the CLI and the test
suite can share them.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .ldpc import decode_batch, default_code, encode
from .modem import Constellation, demap_exact
from .neural_rx import TransRxConfig, forward, init_parameters
from .numerics import Tensor

PRIMITIVES = ("matmul", "matmul_batched", "add", "sub", "mul", "scale", "relu", "sigmoid",
              "softplus", "softmax", "layer_norm", "concat", "reshape", "transpose",
              "index_select", "mean", "sum")


def primitive_fd_error(name: str, seed: int = 0) -> float:
    """Worst relative finite-difference error of one primitive, in 64-bit."""
    rng = np.random.default_rng(seed)
    with nx.precision(np.float64):
        x = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
        if name == "relu":
            x.data[np.abs(x.data) < 1e-2] = 0.5  # stay off the kink
        extra: list[Tensor] = []
        if name == "matmul":
            extra = [Tensor(rng.normal(size=(5, 4)))]
            fn = lambda: nx.matmul(x, extra[0])
        elif name == "matmul_batched":
            extra = [Tensor(rng.normal(size=(2, 5, 4)))]
            fn = lambda: nx.matmul(x, extra[0])
        elif name in ("add", "sub", "mul"):
            extra = [Tensor(rng.normal(size=(5,)))]
            op = getattr(nx, name)
            fn = lambda: op(x, extra[0])
        elif name == "layer_norm":
            extra = [Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))]
            fn = lambda: nx.layer_norm(x, extra[0], extra[1])
        elif name == "concat":
            extra = [Tensor(rng.normal(size=(2, 3, 2)))]
            fn = lambda: nx.concat_lastaxis([x, extra[0]])
        else:
            fn = {
                "scale": lambda: nx.scale(x, -1.7),
                "relu": lambda: nx.relu(x),
                "sigmoid": lambda: nx.sigmoid(x),
                "softplus": lambda: nx.softplus(x),
                "softmax": lambda: nx.softmax_lastaxis(x),
                "reshape": lambda: nx.reshape(x, (6, 5)),
                "transpose": lambda: nx.transpose(x, (2, 0, 1)),
                "index_select": lambda: nx.index_select(x, np.array([0, 2, 2]), axis=1),
                "mean": lambda: nx.mean_all(x),
                "sum": lambda: nx.sum_all(x),
            }[name]
        probe = Tensor(rng.normal(size=fn().data.size))

        def loss():
            return nx.sum_all(nx.mul(nx.reshape(fn(), (-1,)), probe))

        return nx.finite_difference_check(loss, [x] + extra, eps=1e-6)


def tiny_model_config(pe: str = "sinusoidal-2d") -> TransRxConfig:
    return TransRxConfig(num_blocks=2, num_heads=2, d_model=8, ffn_dim=8, bits_per_symbol=2,
                         rx_antennas=2, num_symbols=3, num_subcarriers=4,
                         positional_encoding=pe, pilot_symbols=(1,))


def full_graph_fd_error(dtype=np.float64, seed: int = 0, max_coords: int = 6) -> float:
    """Finite-difference check of every parameter of a small receiver.

    Autodiff runs at ``dtype``. The numeric side always evaluates the loss in
    64-bit on a copy of the weights, so at 32-bit this measures the error of
    the 32-bit gradients against an accurate reference.
    """
    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    with nx.precision(np.float64):
        model = init_parameters(cfg, seed)
        # the zero head would hide every upstream gradient
        for name in ("output/w", "output/b"):
            model[name].data[...] = rng.normal(size=model[name].shape)
        feats = Tensor(rng.normal(size=(2, cfg.num_tokens, cfg.num_features)))
        probe = Tensor(rng.normal(size=(2, cfg.num_tokens, cfg.bits_per_symbol)))

        def loss():
            return nx.sum_all(nx.mul(forward(model, feats), probe))

        params = [p.tensor for p in model.parameters()]
        if dtype == np.float64:
            return nx.finite_difference_check(loss, params, eps=1e-6, max_coords=max_coords,
                                              rng=rng)
        ref = {p.name: p.data.copy() for p in model.parameters()}
        nx.backward(loss())
        numeric_grads = {}
        for p in model.parameters():
            flat = p.data.reshape(-1)
            coords = rng.choice(flat.size, min(max_coords, flat.size), replace=False)
            g = []
            for c in coords:
                orig = flat[c]
                flat[c] = orig + 1e-6
                with nx.no_grad():
                    up = float(loss().data)
                flat[c] = orig - 1e-6
                with nx.no_grad():
                    dn = float(loss().data)
                flat[c] = orig
                g.append((up - dn) / 2e-6)
            numeric_grads[p.name] = (coords, np.array(g))
    with nx.precision(dtype):
        model32 = init_parameters(cfg, seed)
        for p in model32.parameters():
            p.tensor.data = ref[p.name].astype(dtype)
        f32 = Tensor(feats.data)
        pr32 = Tensor(probe.data)
        nx.backward(nx.sum_all(nx.mul(forward(model32, f32), pr32)))
    pairs = []
    for p in model32.parameters():
        coords, num = numeric_grads[p.name]
        pairs.append((num, p.grad.reshape(-1)[coords].astype(np.float64)))
    return nx.relative_errors(pairs)


def brute_force_llrs(y: complex, noise_var: float, c: Constellation) -> list[float]:
    """Naive per-bit enumeration, written independently of :func:`demap_exact`."""
    out = []
    n = c.bits_per_symbol
    for k in range(n):
        num = den = 0.0
        for idx in range(2 ** n):
            bit = (idx >> (n - 1 - k)) & 1
            w = np.exp(-abs(y - c.points[idx]) ** 2 / noise_var)
            if bit == 0:
                num += w
            else:
                den += w
        out.append(float(np.log(num) - np.log(den)))
    return out


def demapper_oracle_error(trials: int = 1000, seed: int = 0) -> float:
    """Max |exact - brute force| over random (y, noise_var) for QPSK/16/64-QAM.

    Draws keep both probability sums representable in 64-bit so that the
    naive ratio is itself accurate.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 4, 6):
        c = Constellation(n)
        ys = rng.normal(scale=0.8, size=trials) + 1j * rng.normal(scale=0.8, size=trials)
        nvs = 10 ** rng.uniform(-1.3, 0.7, size=trials)
        fast = demap_exact(ys, nvs, c)
        for i in range(trials):
            ref = brute_force_llrs(ys[i], nvs[i], c)
            worst = max(worst, float(np.max(np.abs(fast[i] - ref))))
    return worst


def ldpc_roundtrip_failures(count: int = 10_000, seed: int = 0, batch: int = 1000) -> int:
    code = default_code()
    rng = np.random.default_rng(seed)
    bad = 0
    for start in range(0, count, batch):
        u = rng.integers(0, 2, (min(batch, count - start), code.k), dtype=np.int8)
        cw = encode(u, code)
        if code.syndrome(cw).any():
            bad += int(code.syndrome(cw).any(axis=1).sum())
        bits, _, _ = decode_batch(np.where(cw == 0, 20.0, -20.0), code)
        bad += int(np.any(bits != u, axis=1).sum())
    return bad


def run_all(quick: bool = False) -> list[tuple[str, bool, str]]:
    results = []
    for name in PRIMITIVES:
        err = primitive_fd_error(name)
        results.append((f"grad/{name}", err < 1e-4, f"rel err {err:.2e}"))
    err = full_graph_fd_error(np.float64)
    results.append(("grad/transrx-64bit", err < 1e-4, f"rel err {err:.2e}"))
    err = full_graph_fd_error(np.float32)
    results.append(("grad/transrx-32bit", err < 1e-2, f"rel err {err:.2e}"))
    err = demapper_oracle_error(100 if quick else 1000)
    results.append(("demapper/exact-vs-bruteforce", err < 1e-9, f"max abs diff {err:.2e}"))
    bad = ldpc_roundtrip_failures(500 if quick else 10_000)
    results.append(("ldpc/noiseless-roundtrip", bad == 0, f"{bad} failures"))
    return results


def constellation_table(c: Constellation) -> list[tuple]:
    """Rows (index, label bits, real, imag) for CSV export."""
    return [(i, "".join(str(b) for b in c.labels[i]), float(p.real), float(p.imag))
            for i, p in enumerate(c.points)]

