"""``qnnlab`` command line: degrade | prep | train | eval | report."""
from __future__ import annotations

import argparse
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import harness
from .dataset import amplitudes_to_image, encode_images, load_encoded, load_mnist
from .errors import DomainError, IntegrityError, QnnlabError
from .noise import load_device_model, resolve_device
from .qnn import accuracy, predict, save_model
from .training import TrainConfig, train

DEFAULT_MNIST = "/root/data/mnist"


def _mnist_default() -> str:
    return os.environ.get("QNNLAB_MNIST_DIR", DEFAULT_MNIST)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _devices(specs, scale: float, manifest: harness.RunManifest):
    models = []
    for spec in specs:
        path = resolve_device(spec)
        manifest.add_fixture(path)
        model = load_device_model(path)
        models.append(model if scale == 1.0 else model.scaled(scale))
    return models


def _checkpoints(value: str | None) -> tuple:
    if not value:
        return ()
    if value == "paper-fig2":
        return harness.PRESET_CHECKPOINTS
    try:
        return tuple(sorted({int(v) for v in value.split(",")}))
    except ValueError:
        raise DomainError(f"--checkpoints expects 'paper-fig2' or a comma list of depths, got {value!r}") from None


def _test_image(mnist: str, index: int) -> np.ndarray:
    images, labels = load_mnist(mnist, "test")
    harness.check_image_index(index, len(labels))
    return encode_images(images[index : index + 1], labels[index : index + 1]).amplitudes[0]


def _max_samples(text: str):
    if text in ("all", "none"):
        return None
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("--max-samples must be positive or 'all'")
    return value


# -- commands ------------------------------------------------------------------------


def cmd_degrade(args) -> int:
    out = _out_dir(args.out)
    manifest = harness.RunManifest(["qnnlab"] + args.argv, vars_snapshot(args), args.seed)
    models = _devices(args.device, args.noise_scale, manifest)
    image = _test_image(args.mnist, args.image_index) if args.input == "image" else None
    checkpoints = _checkpoints(args.checkpoints)
    fits = []
    for model in models:
        amps = harness.degrade_input(args.input, model.n_qubits, image)
        res = harness.run_degrade(
            model, amps, args.depth_max, args.trials, args.seed, args.readout, checkpoints, harness.worker_count()
        )
        stem = _safe(model.name)
        name = f"degrade_{stem}.csv"
        header = ["depth", "chi2_uniform_mean", "chi2_uniform_std", "chi2_ref_mean", "chi2_ref_std"]
        harness.write_csv(out / name, header, res.rows())
        manifest.outputs.append(name)
        means = res.chi2_uniform.mean(axis=0)
        fits.append(
            [
                model.name,
                "" if res.rate is None else res.rate,
                "" if res.r2 is None else res.r2,
                res.fit_points,
                harness.count_violations(means),
                means[-1] / means[0] if means[0] > 0 else "",
            ]
        )
        if checkpoints:
            name = f"checkpoints_{stem}.csv"
            rows = (
                [d, i, noisy[i], ideal[i]]
                for d, (noisy, ideal) in sorted(res.checkpoints.items())
                for i in range(noisy.size)
            )
            harness.write_csv(out / name, ["depth", "index", "noisy", "ideal"], rows)
            manifest.outputs.append(name)
        print(f"{model.name}: decay rate {fits[-1][1]} (r2 {fits[-1][2]}, {res.fit_points} points)")
    header = ["device", "decay_rate", "fit_r2", "fit_points", "monotonicity_violations", "final_over_initial"]
    harness.write_csv(out / "degrade_fit.csv", header, fits)
    manifest.outputs.append("degrade_fit.csv")
    manifest.write(out)
    return 0


def cmd_prep(args) -> int:
    out = _out_dir(args.out)
    manifest = harness.RunManifest(["qnnlab"] + args.argv, vars_snapshot(args), args.seed)
    models = _devices(args.device, args.noise_scale, manifest)
    amps = _test_image(args.mnist, args.image_index)
    results = [harness.run_prep(None, amps)] + [harness.run_prep(m, amps) for m in models]
    names = ["ideal"] + [_safe(m.name) for m in models]
    mask01 = set(harness.qubit_mask_indices((0, 1), 8).tolist())
    for stem, res in zip(names, results):
        harness.write_pgm(out / f"{stem}.pgm", amplitudes_to_image(res.probs))
        manifest.outputs.append(f"{stem}.pgm")
    harness.write_csv(
        out / "prep_probs.csv",
        ["index", "target"] + names,
        ([i, amps[i] ** 2] + [r.probs[i] for r in results] for i in range(amps.size)),
    )
    summary = [
        [r.device, r.tv, r.excess_index, r.excess_value, int(r.excess_index in mask01)] for r in results
    ]
    header = ["device", "tv_from_ideal", "max_excess_index", "max_excess_value", "in_qubit01_mask"]
    harness.write_csv(out / "prep_summary.csv", header, summary)
    manifest.outputs += ["prep_probs.csv", "prep_summary.csv"]
    manifest.write(out)
    for row in summary:
        print(f"{row[0]}: TV {row[1]:.4f}, max excess at index {row[2]}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    manifest = harness.RunManifest(["qnnlab"] + args.argv, vars_snapshot(args), args.seed)
    data = load_encoded(args.mnist, "train", args.split)
    test = load_encoded(args.mnist, "test", args.split, args.eval_limit)
    summary = []
    for layers in args.layers:
        config = TrainConfig(
            args.split, layers, args.lr, args.batch_size, args.epochs, args.seed, args.max_samples
        )
        model, log = train(data, config)
        stem = f"{args.split}_L{layers}"
        save_model(model, out / f"model_{stem}.json")
        log.write_csv(out / f"trainlog_{stem}.csv")
        acc = accuracy(predict(test.amplitudes, model), test.labels)
        summary.append([args.split, layers, model.provenance["train_samples"], config.epochs, log.losses[-1], acc])
        manifest.outputs += [f"model_{stem}.json", f"trainlog_{stem}.csv"]
        manifest.config.setdefault("train_wallclock_ms", {})[stem] = round(log.wallclock_ms, 1)
        print(f"split {args.split}, {layers} layer(s): test accuracy {acc:.4f} on {len(test)} samples")
    header = ["split", "layers", "train_samples", "epochs", "final_batch_loss", "test_accuracy"]
    harness.write_csv(out / "train_summary.csv", header, summary)
    manifest.outputs.append("train_summary.csv")
    manifest.write(out)
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args.out)
    manifest = harness.RunManifest(["qnnlab"] + args.argv, vars_snapshot(args), args.seed)
    device_paths = [str(resolve_device(d)) for d in args.device]
    for p in device_paths:
        manifest.add_fixture(p)
    for p in args.model:
        manifest.add_fixture(p)
    cells = [
        harness.EvalCell(str(m), d, scale, args.mnist, args.limit, args.shots, args.seed, args.sample)
        for m in args.model
        for d in [None] + device_paths
        for scale in (args.noise_scale if d is not None else [1.0])
    ]
    results = harness.run_cells(harness.evaluate_cell, cells)
    header, rows = harness.table_rows(results)
    harness.write_csv(out / "accuracy.csv", header, rows)
    long_header = ["split", "layers", "noise_model", "accuracy", "n_samples", "shots"]
    harness.write_csv(out / "accuracy_long.csv", long_header, ([r[k] for k in long_header] for r in results))
    manifest.outputs += ["accuracy.csv", "accuracy_long.csv"]
    manifest.write(out)
    for r in results:
        print(f"{r['split']} L{r['layers']} {r['noise_model']}: {r['accuracy']:.4f}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise IntegrityError(f"{run_dir} is not a directory")
    out = _out_dir(args.out or run_dir / "report")
    manifests = sorted(p for p in run_dir.rglob("manifest.json") if out not in p.parents)
    if not manifests:
        raise IntegrityError(f"no run manifests under {run_dir}")
    accuracy_rows, fit_rows = [], []
    for path in manifests:
        data = harness.verify_manifest(path)
        rel = str(path.parent.relative_to(run_dir))
        for name in sorted(data["outputs"]):
            if name == "accuracy_long.csv":
                for row in harness.read_csv(path.parent / name):
                    row["layers"] = int(row["layers"])
                    row["run"] = rel
                    accuracy_rows.append(row)
            elif name == "degrade_fit.csv":
                fit_rows += [dict(row, run=rel) for row in harness.read_csv(path.parent / name)]
    manifest = harness.RunManifest(["qnnlab"] + args.argv, vars_snapshot(args), 0)
    for path in manifests:
        manifest.add_fixture(path)
    if accuracy_rows:
        cols = ["run", "split", "layers", "noise_model", "accuracy", "n_samples", "shots"]
        harness.write_csv(out / "report_accuracy.csv", cols, ([r[c] for c in cols] for r in accuracy_rows))
        header, rows = harness.table_rows(accuracy_rows)
        harness.write_csv(out / "report_table.csv", header, rows)
        missing = harness.missing_cells(accuracy_rows)
        harness.write_csv(out / "report_missing.csv", ["split", "noise_model", "layers"], missing)
        manifest.outputs += ["report_accuracy.csv", "report_table.csv", "report_missing.csv"]
        if missing:
            print(f"warning: accuracy grid incomplete, {len(missing)} cell(s) missing (see report_missing.csv)")
    if fit_rows:
        cols = ["run", "device", "decay_rate", "fit_r2", "fit_points", "monotonicity_violations", "final_over_initial"]
        harness.write_csv(out / "report_degrade.csv", cols, ([r[c] for c in cols] for r in fit_rows))
        manifest.outputs.append("report_degrade.csv")
    manifest.write(out)
    print(f"verified {len(manifests)} manifest(s); report written to {out}")
    return 0


# -- parser --------------------------------------------------------------------------------


def vars_snapshot(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnnlab", description="Noisy quantum neural network experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, device_required=False, device_default=None):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="master seed")
        sp.add_argument("--mnist", default=_mnist_default(), help="directory holding the four MNIST IDX files")
        if device_default is not None or device_required:
            sp.add_argument(
                "--device", action="append", required=device_required,
                help="calibration JSON file or bundled fixture name (repeatable)",
            )
            sp.add_argument("--noise-scale", type=float, default=1.0, help="multiply every error rate by this factor")

    d = sub.add_parser("degrade", help="state degradation under random-weight layers")
    common(d, device_default=True)
    d.add_argument("--depth-max", type=int, default=60)
    d.add_argument("--trials", type=int, default=10)
    d.add_argument("--input", choices=("image", "basis", "uniform"), default="image")
    d.add_argument("--image-index", type=int, default=0, help="index into the MNIST test set")
    d.add_argument("--readout", action="store_true", help="apply readout confusion before measuring")
    d.add_argument("--checkpoints", help="'paper-fig2' or comma-separated depths whose distributions are saved")
    d.set_defaults(func=cmd_degrade)

    pr = sub.add_parser("prep", help="amplitude-embedded image read back through noisy devices")
    common(pr, device_required=True)
    pr.add_argument("--image-index", type=int, default=0, help="index into the MNIST test set")
    pr.set_defaults(func=cmd_prep)

    t = sub.add_parser("train", help="train noise-free classifiers")
    common(t)
    t.add_argument("--split", choices=("0-1", "0-3", "0-9"), default="0-1")
    t.add_argument("--layers", type=int, nargs="+", default=[1])
    t.add_argument("--epochs", type=int, default=None, help="default: 1, 2, 4 for 0-1, 0-3, 0-9")
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument(
        "--max-samples", type=_max_samples, default=-1,
        help="training subset size or 'all' (default: all for 0-1, 8000 otherwise)",
    )
    t.add_argument("--eval-limit", type=int, default=None, help="test samples used for the summary accuracy")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy grid over models and noise models")
    common(e)
    e.add_argument("--model", nargs="+", required=True, help="qnnmodel/1 JSON files")
    e.add_argument("--device", nargs="*", default=[], help="calibration JSON files or bundled fixture names")
    e.add_argument("--noise-scale", type=float, nargs="+", default=[1.0], help="noise multipliers to sweep")
    e.add_argument("--shots", type=int, default=None)
    e.add_argument("--limit", type=int, default=None, help="first N test samples of each split")
    e.add_argument("--sample", type=int, default=None, help="seeded uniform subset of N test samples")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="verify run manifests and merge their tables")
    r.add_argument("run_dir")
    r.add_argument("--out", default=None, help="default: RUN_DIR/report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    if getattr(args, "device", None) is None and args.command == "degrade":
        args.device = ["example-highnoise"]
    try:
        return args.func(args)
    except (QnnlabError, FileNotFoundError) as exc:
        print(f"qnnlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
