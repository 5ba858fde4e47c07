"""Command line entry point (``transrx``)."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness
from .config import SimConfig
from .modem import Constellation
from .selftest import constellation_table, run_all


def _train(args) -> int:
    from .trainer import Trainer, load_checkpoint, model_config_from

    cfg = SimConfig.load(args.config)
    ckpt = cfg.resolve(cfg.train.checkpoint)
    if args.resume and ckpt.exists():
        model, state = load_checkpoint(ckpt, expect=model_config_from(cfg))
        trainer = Trainer(cfg, model, state["step"])
    else:
        trainer = Trainer(cfg)
    steps = cfg.train.steps - trainer.step if args.steps is None else args.steps

    def progress(row):
        if row["step"] % args.print_every == 0:
            print(f"step {row['step']:6d}  bce {row['bce']:.4f}  rate {row['rate']:.4f}  "
                  f"|g| {row['grad_norm']:.3g}  {row['wallclock_s']:.0f}s", flush=True)

    trainer.run(max(steps, 0), log_path=cfg.resolve(cfg.train.log), checkpoint_path=ckpt,
                progress=progress)
    print(f"checkpoint written to {ckpt}")
    return 0


def _sweep(args) -> int:
    cfg = SimConfig.load(args.config)
    receivers = args.receivers.split(",") if args.receivers else None

    def progress(p):
        print(f"{p.receiver:>20s}  {p.snr_db:6.2f} dB  BER {p.ber:.3e}  BLER {p.bler:.3e}  "
              f"({p.bit_errors}/{p.bits})", flush=True)

    points = harness.ber_sweep(cfg, receivers, args.workers, progress=progress)
    harness.write_results_csv(points, cfg.resolve(cfg.sweep.results_csv))
    harness.write_plot_csv(points, cfg.resolve(cfg.sweep.plot_csv))
    return 0


def _demo_image(args) -> int:
    cfg = SimConfig.load(args.config)
    report = harness.image_demo(cfg, args.image, args.receiver, args.snr)
    print(f"{report.receiver}  {report.snr_db:g} dB  PSNR {harness.format_psnr(report.psnr_db)} dB"
          f"  bit errors {report.bit_errors}/{report.bits}")
    if args.out:
        _, maxval = harness.read_pnm(args.image)
        harness.write_pnm(args.out, report.reconstructed, maxval)
    return 0


def _selftest(args) -> int:
    if args.dump_constellation:
        rows = constellation_table(Constellation(args.bits_per_symbol))
        out = open(args.dump_constellation, "w", newline="") if args.dump_constellation != "-" \
            else sys.stdout
        try:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["index", "label", "real", "imag"])
            writer.writerows(rows)
        finally:
            if out is not sys.stdout:
                out.close()
    ok = True
    for name, passed, detail in run_all(quick=args.quick):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
    return 0 if ok else 1


def _dump_config(args) -> int:
    cfg = SimConfig() if args.defaults or not args.config else SimConfig.load(args.config)
    sys.stdout.write(cfg.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transrx", description="OFDM link simulator with a "
                                "transformer neural receiver")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the neural receiver")
    t.add_argument("config", type=Path)
    t.add_argument("--steps", type=int, help="override the number of steps to run")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    t.add_argument("--print-every", type=int, default=50)
    t.set_defaults(func=_train)

    s = sub.add_parser("sweep", help="Monte-Carlo BER/BLER sweep")
    s.add_argument("config", type=Path)
    s.add_argument("--receivers", help="comma-separated ids, e.g. ls-lmmse,transrx:model.ckpt")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=_sweep)

    d = sub.add_parser("demo-image", help="send a PGM/PPM image through the link")
    d.add_argument("config", type=Path)
    d.add_argument("--image", type=Path, required=True)
    d.add_argument("--snr", type=float, required=True, help="SNR in dB")
    d.add_argument("--receiver", required=True)
    d.add_argument("--out", type=Path, help="write the reconstructed image here")
    d.set_defaults(func=_demo_image)

    st = sub.add_parser("selftest", help="gradient checks, demapper oracle, LDPC roundtrip")
    st.add_argument("--quick", action="store_true")
    st.add_argument("--dump-constellation", metavar="CSV", nargs="?", const="-",
                    help="write the constellation and bit labels as CSV ('-' for stdout)")
    st.add_argument("--bits-per-symbol", type=int, default=6)
    st.set_defaults(func=_selftest)

    dc = sub.add_parser("dump-config", help="print a configuration file")
    dc.add_argument("config", type=Path, nargs="?")
    dc.add_argument("--defaults", action="store_true")
    dc.set_defaults(func=_dump_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
