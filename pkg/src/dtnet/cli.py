"""Command line entry point: ``dtnet train|eval|bench|inspect|synth``.

Exit codes: 0 ok, 2 input or configuration, 3 bundle/dataset incompatibility,
4 corrupt model file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DTNetError

log = logging.getLogger("dtnet")

SHADES = " .:-=+*#%@"


def _config(args):
    from .config import apply_overrides, from_parser, read_parser

    parser, path = read_parser(args.config)
    overrides = list(args.set or [])
    if getattr(args, "manifest", None):
        overrides.append(f"dataset.manifest={Path(args.manifest).resolve()}")
    if getattr(args, "subsample", None) is not None:
        overrides += [f"dataset.subsample={args.subsample}",
                      f"dataset.test_subsample={args.subsample}"]
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"run.workers={args.workers}")
    apply_overrides(parser, overrides)
    return from_parser(parser, base_dir=path.parent)


def cmd_train(args) -> int:
    from . import pipeline, plotting

    cfg = _config(args)
    out = Path(args.out)
    t0 = time.perf_counter()
    streams = pipeline.load_split(cfg.dataset, "train", cfg.dataset.subsample, cfg.refractory)
    log.info("loaded %d training samples from %s", len(streams), cfg.dataset.root)
    model = pipeline.train(cfg, streams)
    model.save(out)
    plotting.training_figure(model.reports, out / "figures" / "training.png")
    plotting.feature_grid_figure(model.encoders[0], cfg.layers[0].radius,
                                 out / "figures" / "layer1_features.png")
    for i, rep in enumerate(model.reports["layers"]):
        print(f"layer{i + 1}: surfaces={rep['surfaces_seen']} final_error={rep['final_error']:.6f} "
              f"converged={str(rep['converged']).lower()}")
    acc = model.reports["classifier"]["epoch_accuracy"]
    print(f"train_accuracy={acc[-1] if acc else float('nan'):.6f}")
    print(f"bundle={out}")
    log.info("training finished in %.1fs", time.perf_counter() - t0)
    return 0


def _eval_manifest(args, model):
    from .config import from_parser, read_parser

    if args.config:
        parser, path = read_parser(args.config)
        if "layer1" not in parser:
            # a bare manifest: borrow the bundle's layers
            from .dataset_io import DatasetManifest
            return DatasetManifest.from_file(path), None
        cfg = from_parser(parser, base_dir=path.parent)
        return cfg.dataset, cfg.test_subsample
    if args.manifest:
        from .dataset_io import DatasetManifest
        return DatasetManifest.from_file(args.manifest), None
    return model.config.dataset, model.config.test_subsample


def cmd_eval(args) -> int:
    from . import pipeline, plotting

    model = pipeline.Model.load(args.bundle)
    manifest, test_sub = _eval_manifest(args, model)
    pipeline.check_geometry(model, manifest)
    sub = args.subsample if args.subsample is not None else (
        test_sub if args.split == "test" and test_sub else manifest.subsample)
    streams = pipeline.load_split(manifest, args.split, sub, model.config.refractory)
    workers = args.workers or model.config.workers
    cm = pipeline.evaluate_model(model, streams, workers)
    out = Path(args.out) if args.out else Path(args.bundle) / f"eval_{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion.txt").write_text(cm.to_text())
    (out / "confusion.csv").write_text(cm.to_csv())
    (out / "rates.csv").write_text(cm.rates_csv())
    summary = {
        "split": args.split,
        "samples": cm.total,
        "accuracy": cm.overall_rate,
        "per_class": {n: (None if np.isnan(r) else float(r))
                      for n, r in zip(cm.class_names, cm.per_class_rates())},
        "dataset_root": str(manifest.root),
        "protocol": "train/test split as laid out under the dataset root",
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    plotting.confusion_figure(cm, out / "confusion.png")
    plotting.rates_figure(cm, out / "rates.png")
    sys.stdout.write(cm.to_text())
    print(f"reports={out}")
    print(f"accuracy={cm.overall_rate:.6f}")
    return 0


def cmd_bench(args) -> int:
    from . import plotting
    from .bench import run_bench, synthetic_stream

    cfg = _config(args)
    layer = cfg.layers[0]
    ds = cfg.dataset
    stream = synthetic_stream(args.events, ds.width, ds.height, seed=cfg.seed)
    radii = args.radius or [layer.radius]
    rows = []
    for r in radii:
        runs = [run_bench(stream, r, layer.tau, layer.code_dim, seed=cfg.seed)
                for _ in range(args.repeat)]
        best = max(runs, key=lambda b: b.events_per_s)
        rows.append(best.as_row())
        print(best.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        keys = list(rows[0])
        lines = [",".join(keys)] + [",".join(str(r[k]) for k in keys) for r in rows]
        (out / "bench.csv").write_text("\n".join(lines) + "\n")
        if len(rows) > 1:
            plotting.throughput_figure(rows, out / "throughput.png")
    return 0


def ascii_grid(values: np.ndarray, lo: float, hi: float) -> list[str]:
    span = hi - lo or 1.0
    idx = np.clip(((values - lo) / span * (len(SHADES) - 1)).round().astype(int), 0, len(SHADES) - 1)
    return ["".join(SHADES[i] * 2 for i in row) for row in idx]


def cmd_inspect(args) -> int:
    from . import pipeline, plotting

    model = pipeline.Model.load(args.bundle)
    reports = model.reports
    print(f"bundle: {args.bundle}")
    print(f"classes: {','.join(model.config.class_names)}")
    print(f"geometry: {model.config.dataset.width}x{model.config.dataset.height}")
    csv_rows = ["layer,feature,v,u,channel,weight"]
    for i, (cfg, ae) in enumerate(zip(model.layers, model.encoders)):
        rep = reports.get("layers", [{}] * len(model.layers))[i] if reports else {}
        print(f"\nlayer{i + 1}: radius={cfg.radius} tau_us={cfg.tau:g} strategy={cfg.strategy} "
              f"input_dim={ae.input_dim} code_dim={ae.code_dim} "
              f"activation={ae.activation}/{ae.decoder_activation} "
              f"converged={str(rep.get('converged', 'unknown')).lower()} "
              f"final_error={rep.get('final_error', float('nan')):.6f}")
        side = 2 * cfg.radius + 1
        prev = model.layers[i - 1] if i else None
        if prev is not None and prev.strategy == "raw_pool":
            side = -(-side // prev.pool_window)   # pooled neighbourhood
        n_ch = ae.input_dim // (side * side)
        feats = ae.W_dec.T.reshape(ae.code_dim, side, side, n_ch)
        for j in range(ae.code_dim):
            lo, hi = feats[j].min(), feats[j].max()
            print(f"  feature {j} ({side}x{side}x{n_ch}) range [{lo:+.3f}, {hi:+.3f}]")
            shown = min(n_ch, 2 if i == 0 else 4)
            grids = [ascii_grid(feats[j, :, :, c], lo, hi) for c in range(shown)]
            names = ["OFF", "ON"] if n_ch == 2 else [f"c{c}" for c in range(shown)]
            print("    " + "  ".join(n.ljust(2 * side) for n in names))
            for row in zip(*grids):
                print("    " + "  ".join(row))
            for v in range(side):
                for u in range(side):
                    for c in range(n_ch):
                        csv_rows.append(f"{i + 1},{j},{v},{u},{c},{feats[j, v, u, c]!r}")
    m = model.mlp
    print(f"\nclassifier: {m.input_dim}-{m.hidden_dim}-{m.n_classes} activation={m.activation} "
          f"loss={m.loss} standardized={bool(m.mean.size)}")
    clf = reports.get("classifier", {})
    if clf.get("epoch_accuracy"):
        print(f"  epochs={len(clf['epoch_accuracy'])} final_train_accuracy={clf['epoch_accuracy'][-1]:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "features.csv").write_text("\n".join(csv_rows) + "\n")
        plotting.feature_grid_figure(model.encoders[0], model.layers[0].radius, out / "layer1_features.png")
    return 0


def cmd_synth(args) -> int:
    from .synth import write_surrogate

    root = Path(args.out).resolve()
    text = write_surrogate(args.kind, root, args.train, args.test, args.seed or 0)
    (root / "manifest.ini").write_text(text)
    print(f"manifest={root / 'manifest.ini'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="config file or reference name (nmnist-paper, ncars-paper, nmnist-smoke)")
        sp.add_argument("--manifest", help="dataset manifest overriding the config's [dataset]")
        sp.add_argument("--subsample", type=int, help="first K samples per class")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--seed", type=int, help="master random seed")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")

    t = sub.add_parser("train", help="train all layers and the classifier, write a bundle")
    common(t)
    t.add_argument("--out", required=True, help="bundle directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a bundle, write confusion matrix and rates")
    e.add_argument("--bundle", required=True)
    e.add_argument("--config", help="manifest or pipeline config (default: the bundle's dataset)")
    e.add_argument("--manifest", help="dataset manifest")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--subsample", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--out", help="report directory (default: <bundle>/eval_<split>)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="events/s of layer-1 surfaces + encoding on a synthetic stream")
    common(b)
    b.add_argument("--events", type=int, default=1_000_000)
    b.add_argument("--radius", type=int, action="append", help="radius to measure (repeatable)")
    b.add_argument("--repeat", type=int, default=1, help="runs per radius, best reported")
    b.add_argument("--out", help="directory for bench.csv and figure")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inspect", help="dump dimensions, convergence and learned features")
    i.add_argument("--bundle", required=True)
    i.add_argument("--out", help="directory for features.csv and figure")
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("synth", help="write an offline surrogate dataset")
    s.add_argument("kind", choices=("digits", "shapes"))
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, default=100, help="training samples per class")
    s.add_argument("--test", type=int, default=50, help="test samples per class")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DTNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
