"""Command line entry point: ``vmfloss <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import toml
from filelock import FileLock, Timeout

from .data import SyntheticSpec, class_split, gen_synthetic, load_dataset, save_npz, stratified_split
from .evaluation import evaluate
from .heads import make_head
from .io import dump_config, load_checkpoint, load_config, save_checkpoint, write_log, RunConfig
from .metrics import fit_temperature, map_at_r, nll_from_logits
from .model import MLPEncoder
from .plots import bessel_curves, init_points, norm_histogram
from .seeding import replicate_seed, resolve_seed, stream, streams
from .train import ConfigError, train

log = logging.getLogger("vmfloss")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ train

def _remap(labels):
    classes, inverse = np.unique(labels, return_inverse=True)
    return classes, inverse.astype(np.int64)


def _resolve(base: Path, spec: str) -> str:
    """Resolve a data path (or an ``images:labels`` pair) against ``base``."""
    if ":" in spec and not (base / spec).exists():
        return ":".join(str(base / part) for part in spec.split(":", 1))
    return str(base / spec)


def run_train(cfg: RunConfig, replicates: int = 1, base: Path | None = None) -> list[dict]:
    """Train ``replicates`` runs; returns each run's report summary."""
    cfg.validate()
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    seed, overridden = resolve_seed(cfg.train.seed)
    base = Path(base or ".")
    train_ds = load_dataset(_resolve(base, cfg.train_data))
    test_ds = load_dataset(_resolve(base, cfg.test_data)) if cfg.test_data else None
    out_root = base / cfg.out_dir
    summaries = []
    for rep in range(replicates):
        run_seed = replicate_seed(seed, rep)
        run_dir = out_root if replicates == 1 else out_root / f"rep{rep}"
        run_dir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(run_dir / ".lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise UsageError(f"run directory {run_dir} is in use by another process") from None
        try:
            summaries.append(_train_one(cfg, run_seed, overridden, train_ds, test_ds, run_dir))
        finally:
            lock.release()
    if replicates > 1:
        merged = _merge(summaries)
        (out_root / "summary.json").write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n")
    return summaries


def _train_one(cfg, seed, overridden, train_ds, test_ds, run_dir):
    rngs = streams(seed)
    if cfg.mode == "fixed_set":
        tr_idx, va_idx = stratified_split(train_ds.labels, cfg.val_fraction, rngs["split"])
    else:
        tr_idx, va_idx = class_split(train_ds.labels, cfg.val_fraction, rngs["split"])
    classes, y_train = _remap(train_ds.labels[tr_idx])
    x_train = train_ds.features[tr_idx]
    x_val, y_val_raw = train_ds.features[va_idx], train_ds.labels[va_idx]
    widths = (train_ds.features.shape[1], *cfg.hidden, cfg.dim)
    encoder = MLPEncoder(widths, rngs["init"])
    head = make_head(cfg.variant, cfg.dim, classes.size, rngs["init"], **cfg.head)
    score_fn = None
    if cfg.mode == "fixed_set":
        y_val = np.searchsorted(classes, y_val_raw)
    else:
        y_val = y_val_raw

        def score_fn(enc, hd, rng):
            emb = hd.embedding(enc.embed(x_val))
            return map_at_r(emb, y_val, "cosine")

    result = train(encoder, head, x_train, y_train, x_val, y_val, cfg.train, rngs, score_fn=score_fn,
                   on_epoch=lambda row: log.info("epoch %(epoch)d loss %(train_loss).4f val %(val_accuracy).4f", row))
    resolved = RunConfig(**{**cfg.__dict__})
    resolved.train = type(cfg.train)(**{**cfg.train.__dict__, "seed": seed})
    (run_dir / "config.toml").write_text(dump_config(resolved))
    extra = {"classes": classes.tolist(), "seed": seed, "seed_from_env": overridden,
             "best_epoch": result.best_epoch}
    save_checkpoint(run_dir / "checkpoint.bin", encoder, head, extra)
    write_log(run_dir / "train_log.csv", result.log)
    summary = {"seed": seed, "seed_from_env": overridden, "best_epoch": result.best_epoch,
               "stopped_early": result.stopped_early}
    if test_ds is not None:
        mode = cfg.mode
        labels = test_ds.labels if mode == "open_set" else np.searchsorted(classes, test_ds.labels)
        val = (x_val, y_val) if mode == "fixed_set" else None
        rep = evaluate(encoder, head, test_ds.features, labels, mode, rngs["eval"], val=val)
        rep.extra.update({"seed": seed, "seed_from_env": overridden})
        rep.write(run_dir / "report.json", run_dir / "per_instance.csv")
        summary.update(rep.summary())
    return summary


def _merge(summaries):
    merged = {"replicates": len(summaries), "runs": summaries}
    keys = [k for k, v in summaries[0].items() if isinstance(v, float)]
    for k in keys:
        vals = [s[k] for s in summaries if isinstance(s.get(k), float)]
        if vals:
            merged[f"{k}_mean"] = float(np.mean(vals))
            merged[f"{k}_std"] = float(np.std(vals))
    return merged


# ------------------------------------------------------------------- eval

def run_eval(checkpoint, data, mode: str, cosine_at_test: bool = False, val=None,
             out_dir=None, seed: int = 0):
    ckpt = load_checkpoint(checkpoint)
    encoder, head = ckpt.build()
    ds = load_dataset(data)
    if mode not in ("fixed_set", "open_set"):
        raise UsageError("mode must be fixed or open")
    if cosine_at_test and mode != "open_set":
        raise UsageError("--cosine-at-test only applies to open-set retrieval")
    if ds.features.shape[1] != encoder.widths[0]:
        raise UsageError(f"data has {ds.features.shape[1]} features, encoder expects {encoder.widths[0]}")
    labels = ds.labels
    val_pair = None
    if mode == "fixed_set":
        classes = np.asarray(ckpt.extra.get("classes", range(ckpt.num_classes)))
        if not np.all(np.isin(labels, classes)):
            raise UsageError("fixed-set evaluation needs labels seen in training")
        labels = np.searchsorted(classes, labels)
        if val is not None:
            vds = load_dataset(val)
            val_pair = (vds.features, np.searchsorted(classes, vds.labels))
    rep = evaluate(encoder, head, ds.features, labels, mode, stream(seed, "eval"),
                   val=val_pair, cosine_at_test=cosine_at_test)
    out = Path(out_dir or Path(checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"eval_{mode}{'_cosine' if cosine_at_test else ''}"
    rep.write(out / f"{stem}.json", out / f"{stem}.csv")
    return rep, out / f"{stem}.json"


def run_calibrate(checkpoint, val, seed: int = 0) -> dict:
    ckpt = load_checkpoint(checkpoint)
    encoder, head = ckpt.build()
    ds = load_dataset(val)
    classes = np.asarray(ckpt.extra.get("classes", range(ckpt.num_classes)))
    labels = np.searchsorted(classes, ds.labels)
    scores = head.log_scores(encoder.embed(ds.features), stream(seed, "eval"))
    t = fit_temperature(scores, labels)
    return {"temperature": t, "nll_before": nll_from_logits(scores, labels),
            "nll_after": nll_from_logits(scores, labels, t)}


def run_plot(reports) -> list[Path]:
    if not reports:
        raise UsageError("plot needs at least one report")
    outputs = []
    for path in map(Path, reports):
        summary = json.loads(path.read_text())
        csv_path = path.with_suffix(".csv")
        if not csv_path.exists():
            csv_path = path.parent / "per_instance.csv"
        table = np.genfromtxt(csv_path, delimiter=",", names=True, ndmin=1)
        if summary.get("count", 0) == 0 or table.size == 0:
            raise UsageError(f"report {path} is empty")
        svg = path.with_suffix(".svg")
        norm_histogram(table["norm"], table["correct"].astype(bool), svg,
                       title=f"{summary['variant']} ({summary['mode']})")
        outputs.append(svg)
    return outputs


def run_gen_data(spec_path) -> list[Path]:
    raw = toml.loads(Path(spec_path).read_text())
    out_dir = Path(spec_path).parent / raw.pop("out_dir", "synthetic")
    test_fraction = float(raw.pop("test_fraction", 0.3))
    spec = SyntheticSpec(**raw)
    ds = gen_synthetic(spec)
    tr, te = stratified_split(ds.labels, test_fraction, stream(spec.seed, "split"))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "train.npz", out_dir / "test.npz"]
    save_npz(paths[0], ds.subset(tr, "train"))
    save_npz(paths[1], ds.subset(te, "test"))
    return paths


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vmfloss", description="Train and compare embedding-geometry loss heads.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--replicates", type=int, default=1)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help=".npz file or images.idx:labels.idx")
    e.add_argument("--mode", choices=("fixed", "open"), required=True)
    e.add_argument("--cosine-at-test", action="store_true")
    e.add_argument("--val", help="validation data for temperature scaling (fixed mode)")
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("calibrate", help="fit a temperature on validation data")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--val", required=True)
    c.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="norm histograms for reports")
    pl.add_argument("--report", nargs="+", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic vMF-mixture dataset")
    g.add_argument("--spec", required=True)

    b = sub.add_parser("bessel-curves", help="plot Bessel-ratio curves and initializer points")
    b.add_argument("--dims", default="3,8,64,512")
    b.add_argument("--lam", type=float, default=0.4)
    b.add_argument("--out", default="bessel_curves.svg")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            cfg_path = Path(args.config)
            for s in run_train(load_config(cfg_path), args.replicates, base=cfg_path.parent):
                print(json.dumps(s, sort_keys=True))
        elif args.command == "eval":
            mode = "fixed_set" if args.mode == "fixed" else "open_set"
            rep, path = run_eval(args.checkpoint, args.data, mode, args.cosine_at_test,
                                 args.val, args.out, args.seed)
            print(path)
        elif args.command == "calibrate":
            print(json.dumps(run_calibrate(args.checkpoint, args.val, args.seed), sort_keys=True))
        elif args.command == "plot":
            for path in run_plot(args.report):
                print(path)
        elif args.command == "gen-data":
            for path in run_gen_data(args.spec):
                print(path)
        elif args.command == "bessel-curves":
            dims = [int(d) for d in args.dims.split(",") if d.strip()]
            bessel_curves(dims, args.out, args.lam)
            for n, k, r in init_points(dims, args.lam):
                print(f"n={n:4d}  mean init norm {k:10.4f}  mean ratio {r:.4f}")
            print(args.out)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
