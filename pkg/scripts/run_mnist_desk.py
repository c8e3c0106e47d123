"""Desk-scale MNIST 3-vs-5 at 8x8: train several seeds and report the mean.

Usage: python3 scripts/run_mnist_desk.py [--seeds 0 1 2] [--epochs 200] [--noise 0.1]

Reads the IDX files written by make_mnist_idx.py. Each seed is evaluated
noiseless and, if --noise is given, again with RX noise at that level.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from biqc.ansatz import AnsatzConfig
from biqc.data import load_idx, normalize_batch, resize, split
from biqc.model import BiqcConfig, init_params
from biqc.train import TrainConfig, evaluate, train_loop

DATA = Path(__file__).resolve().parents[1] / "data" / "mnist35"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--data", type=Path, default=DATA)
    args = ap.parse_args()

    full = load_idx(args.data / "mnist5k-images-idx3-ubyte.gz", args.data / "mnist5k-labels-idx1-ubyte.gz", (3, 5))
    tr, te = split(full, 500, 200, seed=0)
    x_tr, x_te = (normalize_batch(resize(ds.images, 8, 8)) for ds in (tr, te))
    model = BiqcConfig(image_h=8, image_w=8)
    noisy = BiqcConfig(image_h=8, image_w=8, ansatz=AnsatzConfig(noise_level=args.noise))

    rows = []
    for seed in args.seeds:
        start = time.perf_counter()
        result = train_loop(model, init_params(model, seed), x_tr, tr.labels, x_te, te.labels,
                            TrainConfig(max_epochs=args.epochs, seed=seed))
        clean = evaluate(model, result.params, x_te, te.labels, seed=seed)
        row = [seed, result.epochs, clean.accuracy, clean.auc]
        if args.noise:
            row.append(evaluate(noisy, result.params, x_te, te.labels, seed=seed).accuracy)
        rows.append(row)
        print(f"seed {seed}: epochs {result.epochs} acc {clean.accuracy:.4f} auc {clean.auc:.4f}"
              + (f" noisy_acc {row[4]:.4f}" if args.noise else "") + f" ({time.perf_counter() - start:.0f}s)")
    mean = np.mean(np.array(rows)[:, 2:], axis=0)
    print("mean acc {:.4f} auc {:.4f}".format(*mean[:2]) + (f" noisy_acc {mean[2]:.4f}" if args.noise else ""))


if __name__ == "__main__":
    main()
