"""Train the desk-scale receiver and sweep it against the two baselines.

Writes the checkpoint, training log, sweep CSV and plot-data CSV next to the
config file (see ``configs/desk.ini``).

    python scripts/desk_experiment.py configs/desk.ini --steps 3000
"""

import argparse
import time

from transrx import harness
from transrx.config import SimConfig
from transrx.trainer import Trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--steps", type=int, help="override train.steps")
    ap.add_argument("--skip-train", action="store_true", help="reuse the existing checkpoint")
    args = ap.parse_args()

    cfg = SimConfig.load(args.config)
    if not args.skip_train:
        t0 = time.perf_counter()

        def progress(row):
            if row["step"] % 100 == 0:
                print(f"step {row['step']:5d}  bce {row['bce']:.4f}  rate {row['rate']:.3f}",
                      flush=True)

        Trainer(cfg).run(args.steps, log_path=cfg.resolve(cfg.train.log),
                         checkpoint_path=cfg.resolve(cfg.train.checkpoint), progress=progress)
        print(f"training took {(time.perf_counter() - t0) / 60:.1f} min")

    points = harness.ber_sweep(cfg, progress=lambda p: print(
        f"{p.receiver:>28s} {p.snr_db:5.1f} dB  BER {p.ber:.3e}  BLER {p.bler:.3e}", flush=True))
    harness.write_results_csv(points, cfg.resolve(cfg.sweep.results_csv))
    harness.write_plot_csv(points, cfg.resolve(cfg.sweep.plot_csv))


if __name__ == "__main__":
    main()
