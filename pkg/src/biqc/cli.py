"""Command-line entry point: train, eval, select-patch, spectrum, gen-data, ablate."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from .ansatz import AnsatzConfig
from .model import ABLATIONS, PATCH_MODES, VARIANTS, BiqcConfig, apply_ablation, biqc_forward, circuit_budget, init_params
from .spectral import RMetricMap, format_r_map
from .train import (
    MONITORS,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    evaluate,
    train_loop,
    write_features_csv,
    write_metrics_csv,
    write_spectrum_csv,
)

log = logging.getLogger("biqc")

DEFAULT_SIZES = {"idx": (500, 200), "synthetic": (100, 50)}
DEFAULT_RESOLUTION = {"idx": 8, "synthetic": 224}


class CliError(Exception):
    pass


def _ablation_set(text: str) -> frozenset:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if items in ([], ["none"]):
        return frozenset()
    unknown = [t for t in items if t not in ABLATIONS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown ablation {unknown[0]!r}; choose from {', '.join(VARIANTS)}")
    return frozenset(items)


def _digits(text: str) -> tuple[int, int]:
    try:
        a, b = (int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--digits expects two comma-separated integers, got {text!r}") from None
    return a, b


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset", choices=("idx", "pgm", "synthetic"), default="idx", help="input format")
    g.add_argument("--images", type=Path, help="IDX image file (idx) or PGM directory (pgm)")
    g.add_argument("--labels", type=Path, help="IDX label file")
    g.add_argument("--test-images", type=Path, help="separate IDX test images (otherwise split --images)")
    g.add_argument("--test-labels", type=Path, help="separate IDX test labels")
    g.add_argument("--digits", type=_digits, default=(3, 5), help="IDX classes mapped to labels 0,1")
    g.add_argument("--class0", default="disc", help="PGM filename prefix of class 0")
    g.add_argument("--class1", default="square", help="PGM filename prefix of class 1")
    g.add_argument("--resolution", type=int, help="square input size (idx: 8, synthetic: 224, pgm: native)")
    g.add_argument("--n-train", type=int, help="training samples (idx: 500, synthetic: 100, pgm: 80%%)")
    g.add_argument("--n-test", type=int, help="test samples (idx: 200, synthetic: 50, pgm: 20%%)")
    g.add_argument("--data-seed", type=int, default=0, help="seed for the split or synthetic generation")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--qubits", type=int, default=4, help="qubits per block")
    g.add_argument("--blocks", type=int, default=2, help="circuit blocks per patch")
    g.add_argument("--layers", type=int, default=2, help="entangling layers per block")
    g.add_argument("--patch", type=int, default=0, help="patch size; 0 = 4 up to 32x32 inputs, else 32")
    g.add_argument("--cutoff", type=float, default=0.25, help="normalized radial frequency cutoff")
    g.add_argument("--folded", action="store_true", help="use folded (aliased) DFT frequencies")
    g.add_argument("--patch-mode", choices=PATCH_MODES, default="both", help="which patches feed the circuits")
    g.add_argument("--noise", type=float, default=0.0, help="RX noise level")
    g.add_argument("--ablation", type=_ablation_set, default=frozenset(), help="comma list of " + ", ".join(VARIANTS))


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=1e-3, help="AdamW learning rate")
    g.add_argument("--weight-decay", type=float, default=5e-4, help="decoupled weight decay")
    g.add_argument("--batch", type=int, default=16, help="mini-batch size")
    g.add_argument("--max-epochs", type=int, default=10000, help="hard epoch cap")
    g.add_argument("--patience", type=int, default=50, help="epochs without improvement before stopping")
    g.add_argument("--min-delta", type=float, default=1e-6, help="smallest loss drop that counts as improvement")
    g.add_argument("--monitor", choices=MONITORS, default="train", help="loss watched by early stopping")
    g.add_argument("--train-with-noise", action="store_true", help="apply --noise during gradient steps too")


def _out_flags(p: argparse.ArgumentParser, checkpoint_required: bool = False) -> None:
    p.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    p.add_argument("--checkpoint", type=Path, required=checkpoint_required, help="checkpoint path (train default: OUT_DIR/model.biqc)")
    p.add_argument("--out-dir", type=Path, default=Path("runs"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="biqc", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, write checkpoint and metrics CSV", formatter_class=fmt)
    _data_flags(p), _model_flags(p), _train_flags(p), _out_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split", formatter_class=fmt)
    _data_flags(p), _out_flags(p, checkpoint_required=True)
    p.add_argument("--noise", type=float, help="override the checkpoint's RX noise level")
    p.add_argument("--features-csv", type=Path, help="dump fused feature vectors")
    p.add_argument("--spectrum-csv", type=Path, help="dump per-sample Nyquist coefficients")

    p = sub.add_parser("select-patch", help="print the r-map and both selected regions of one image", formatter_class=fmt)
    p.add_argument("--image", type=Path, required=True, help="binary PGM image")
    p.add_argument("--patch", type=int, default=0, help="patch size; 0 = size rule")
    p.add_argument("--cutoff", type=float, default=0.25, help="normalized radial frequency cutoff")
    p.add_argument("--folded", action="store_true", help="use folded (aliased) DFT frequencies")
    p.add_argument("--checkpoint", type=Path, help="trained model for the attention patch (else seeded init)")
    p.add_argument("--seed", type=int, default=0, help="seed of the fallback init")

    p = sub.add_parser("spectrum", help="dump the Nyquist coefficient of every test sample", formatter_class=fmt)
    _data_flags(p), _out_flags(p, checkpoint_required=True)

    p = sub.add_parser("gen-data", help="write a synthetic disc/square PGM corpus", formatter_class=fmt)
    p.add_argument("--resolution", type=int, default=224, help="image side in pixels")
    p.add_argument("--n-per-class", type=int, default=50, help="images per class")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out-dir", type=Path, default=Path("textures"), help="output directory")

    p = sub.add_parser("ablate", help="train every ablation variant with a shared seed", formatter_class=fmt)
    _data_flags(p), _model_flags(p), _train_flags(p), _out_flags(p)
    return parser


def _echo(title: str, settings: dict) -> None:
    print(f"# {title}")
    for key in sorted(settings):
        print(f"#   {key} = {settings[key]}")


def load_splits(args) -> tuple[D.Dataset, D.Dataset]:
    """Normalized (train, test) datasets from the data flags."""
    kind = args.dataset
    n_train, n_test = args.n_train, args.n_test
    if kind == "synthetic":
        res = args.resolution or DEFAULT_RESOLUTION[kind]
        n_train = n_train or DEFAULT_SIZES[kind][0]
        n_test = n_test or DEFAULT_SIZES[kind][1]
        if n_train % 2 or n_test % 2:
            raise CliError("synthetic splits must have even sizes (balanced classes)")
        train = D.gen_texture(n_train // 2, res, args.data_seed)
        test = D.gen_texture(n_test // 2, res, args.data_seed + 1)
    else:
        if args.images is None:
            raise CliError(f"--dataset {kind} needs --images")
        if kind == "idx":
            if args.labels is None:
                raise CliError("--dataset idx needs --labels")
            full = D.load_idx(args.images, args.labels, args.digits)
            res = args.resolution or DEFAULT_RESOLUTION[kind]
        else:
            full = D.load_pgm_dir(args.images, args.class0, args.class1)
            res = args.resolution
        if args.test_images is not None:
            if kind != "idx" or args.test_labels is None:
                raise CliError("--test-images needs --dataset idx and --test-labels")
            train, test = full, D.load_idx(args.test_images, args.test_labels, args.digits)
            if n_train:
                train = train.subset(np.arange(min(n_train, len(train))))
            if n_test:
                test = test.subset(np.arange(min(n_test, len(test))))
        else:
            if kind == "idx":
                n_train = n_train or DEFAULT_SIZES[kind][0]
                n_test = n_test or DEFAULT_SIZES[kind][1]
            else:
                n_test = n_test or max(1, len(full) // 5)
                n_train = n_train or len(full) - n_test
            train, test = D.split(full, n_train, n_test, args.data_seed)
        if res and (res, res) != tuple(train.resolution):
            train = D.Dataset(D.resize(train.images, res, res), train.labels, train.name)
            test = D.Dataset(D.resize(test.images, res, res), test.labels, test.name)
    norm = lambda ds: D.Dataset(D.normalize_batch(ds.images), ds.labels, ds.name)
    return norm(train), norm(test)


def model_config(args, height: int, width: int) -> BiqcConfig:
    ansatz = AnsatzConfig(args.qubits, args.blocks, args.layers, args.noise)
    return BiqcConfig(
        image_h=height,
        image_w=width,
        patch_size=args.patch,
        ansatz=ansatz,
        cutoff=args.cutoff,
        folded_frequencies=args.folded,
        ablation=args.ablation,
        patch_mode=args.patch_mode,
    )


def train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        max_epochs=args.max_epochs,
        patience=args.patience,
        min_delta=args.min_delta,
        batch_size=args.batch,
        seed=args.seed,
        monitor=args.monitor,
        noise_level=args.noise,
        train_with_noise=args.train_with_noise,
    )


def _data_settings(args, train: D.Dataset, test: D.Dataset) -> dict:
    return {
        "data.dataset": args.dataset,
        "data.resolution": "x".join(map(str, train.resolution)),
        "data.n_train": len(train),
        "data.n_test": len(test),
        "data.seed": args.data_seed,
    }


def _fit(model: BiqcConfig, cfg: TrainConfig, train: D.Dataset, test: D.Dataset, verbose: bool):
    def show(row):
        if verbose:
            print(f"epoch {row.epoch} loss {row.loss:.6f} train_acc {row.train_acc:.4f} "
                  f"test_acc {row.test_acc:.4f} test_auc {row.test_auc:.4f}", flush=True)

    params = init_params(model, cfg.seed)
    return train_loop(model, params, train.images, train.labels, test.images, test.labels, cfg, callback=show)


def cmd_train(args) -> None:
    train, test = load_splits(args)
    model = model_config(args, *train.resolution)
    cfg = train_config(args)
    _echo("resolved config", {**config_to_dict(model, cfg), **_data_settings(args, train, test)})
    result = _fit(model, cfg, train, test, args.verbose)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = args.checkpoint or args.out_dir / "model.biqc"
    D.save_checkpoint(ckpt, D.Checkpoint(result.params, config_to_dict(model, cfg)))
    write_metrics_csv(args.out_dir / "metrics.csv", result.log)
    last = result.log[-1]
    print(f"epochs {result.epochs} loss {last.loss:.6f} train_acc {last.train_acc:.4f} "
          f"test_acc {last.test_acc:.4f} test_auc {last.test_auc:.4f}")
    print(f"checkpoint {ckpt}")
    print(f"metrics {args.out_dir / 'metrics.csv'}")


def _load_model(path: Path, noise: float | None = None):
    ckpt = D.load_checkpoint(path)
    model, cfg = config_from_dict(ckpt.config)
    if noise is not None:
        model = dataclasses.replace(model, ansatz=dataclasses.replace(model.ansatz, noise_level=noise))
    return model, cfg, ckpt.tensors


def _check_resolution(model: BiqcConfig, ds: D.Dataset) -> None:
    if tuple(ds.resolution) != (model.image_h, model.image_w):
        raise CliError(f"data resolution {ds.resolution} does not match the checkpoint's {model.image_h}x{model.image_w}")


def cmd_eval(args) -> None:
    model, cfg, params = _load_model(args.checkpoint, args.noise)
    _, test = load_splits(args)
    _check_resolution(model, test)
    _echo("resolved config", {**config_to_dict(model, cfg), **_data_settings(args, test, test), "eval.seed": args.seed})
    report = evaluate(model, params, test.images, test.labels, seed=args.seed, keep_features=True)
    print(report.summary())
    if args.features_csv:
        write_features_csv(args.features_csv, test.labels, report.features)
        print(f"features {args.features_csv}")
    if args.spectrum_csv:
        write_spectrum_csv(args.spectrum_csv, test.labels, report.features)
        print(f"spectrum {args.spectrum_csv}")


def cmd_spectrum(args) -> None:
    model, cfg, params = _load_model(args.checkpoint)
    _, test = load_splits(args)
    _check_resolution(model, test)
    _echo("resolved config", {**config_to_dict(model, cfg), **_data_settings(args, test, test)})
    report = evaluate(model, params, test.images, test.labels, seed=args.seed, keep_features=True)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / "spectrum.csv"
    coeffs = np.array(write_spectrum_csv(path, test.labels, report.features))
    for label in (0, 1):
        sel = coeffs[test.labels == label]
        if sel.size:
            print(f"label {label}: n={sel.size} mean={sel.mean():.6f} std={sel.std():.6f}")
    print(f"spectrum {path}")


def cmd_select_patch(args) -> None:
    image = D.normalize_minmax(D.read_pgm(args.image))
    h, w = image.shape
    if args.checkpoint:
        model, _, params = _load_model(args.checkpoint)
        if (model.image_h, model.image_w) != (h, w):
            raise CliError(f"image is {h}x{w} but the checkpoint expects {model.image_h}x{model.image_w}")
        source = f"checkpoint {args.checkpoint}"
    else:
        model = BiqcConfig(image_h=h, image_w=w, patch_size=args.patch, cutoff=args.cutoff, folded_frequencies=args.folded)
        params = init_params(model, args.seed)
        source = f"untrained init, seed {args.seed}"
    _echo("resolved config", {"image": str(args.image), "resolution": f"{h}x{w}", "patch": model.patch_size,
                              "cutoff": model.cutoff, "folded": model.folded_frequencies, "attention": source})
    trace = biqc_forward(model, params, image)
    print(format_r_map(RMetricMap(trace.r_maps[0], model.patch_size)))
    m = trace.metric_regions[0]
    print(f"metric patch (row, col) = ({m.row}, {m.col}) r = {trace.r_maps[0].max():.6g}")
    if trace.attention_regions:
        a = trace.attention_regions[0]
        print(f"attention patch (row, col) = ({a.row}, {a.col}) gate = {trace.gate[0]:.6g}")


def cmd_gen_data(args) -> None:
    ds = D.gen_texture(args.n_per_class, args.resolution, args.seed)
    _echo("resolved config", {"resolution": args.resolution, "n_per_class": args.n_per_class, "seed": args.seed})
    args.out_dir.mkdir(parents=True, exist_ok=True)
    names = {0: "disc", 1: "square"}
    for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
        D.write_pgm(args.out_dir / f"{names[int(label)]}_{i:05d}.pgm", img)
    print(f"wrote {len(ds)} images to {args.out_dir}")


def cmd_ablate(args) -> None:
    train, test = load_splits(args)
    base = model_config(args, *train.resolution)
    cfg = train_config(args)
    _echo("resolved config", {**config_to_dict(base, cfg), **_data_settings(args, train, test)})
    args.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in VARIANTS:
        model = apply_ablation(base, variant)
        result = _fit(model, cfg, train, test, args.verbose)
        last = result.log[-1]
        rows.append([variant, model.fusion_dim, circuit_budget(model)["circuits"], result.epochs,
                     f"{last.test_acc:.4f}", f"{last.test_auc:.4f}"])
        write_metrics_csv(args.out_dir / f"metrics_{variant}.csv", result.log)
    header = ["variant", "fusion_dim", "circuits_per_sample", "epochs", "test_acc", "test_auc"]
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    with open(args.out_dir / "ablation.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([header] + rows)
    print(f"table {args.out_dir / 'ablation.csv'}")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "select-patch": cmd_select_patch,
    "spectrum": cmd_spectrum,
    "gen-data": cmd_gen_data,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    threads = os.environ.get("BIQC_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"biqc: error: BIQC_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=limit):
            COMMANDS[args.command](args)
    except (CliError, ValueError, OSError, FloatingPointError, KeyError, TypeError) as err:
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"biqc: error: {msg}", file=sys.stderr)
        return 1
    return 0
