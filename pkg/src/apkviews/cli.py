"""Command-line front end: extract, train, predict, eval."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import report
from .classify import evaluate_slots
from .config import ConfigError, RunConfig, load_config
from .features import FeatureCache, extract_features
from .image import save_png
from .ingest import IngestError, Label, load_manifest
from .tensor import CheckpointError
from .train import EmptyDataset, SingleClassDataset, load_model, predict_proba, save_model, train, write_history

log = logging.getLogger("apkviews")

FAILURE_COLUMNS = ("sample_id", "apk_path", "error", "message")


def _ensure_one(args):
    root, cfg, entry = args
    cache = FeatureCache(root, cfg)
    try:
        feats, computed = cache.ensure(entry)
    except Exception as exc:  # one bad APK must not abort the batch
        return entry, None, False, exc
    return entry, feats, computed, None


def ensure_features(entries, cfg: RunConfig, cache_dir):
    """Feature records for every entry; returns (ok list of (entry, feats), failures, n computed)."""
    jobs = [(cache_dir, cfg, e) for e in entries]
    if cfg.extract_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.extract_workers) as pool:
            results = list(pool.map(_ensure_one, jobs))
    else:
        results = [_ensure_one(j) for j in jobs]
    ok, failures, computed = [], [], 0
    for entry, feats, was_computed, exc in results:
        if exc is not None:
            log.warning("%s: %s: %s", entry.sample_id, type(exc).__name__, exc)
            failures.append((entry, exc))
        else:
            ok.append((entry, feats))
            computed += was_computed
    return ok, failures, computed


def write_failures(path, failures):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FAILURE_COLUMNS)
        for entry, exc in failures:
            w.writerow([entry.sample_id, str(entry.apk_path), type(exc).__name__, str(exc)])


def _config(args) -> RunConfig:
    return load_config(
        getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        window_length=getattr(args, "window_length", None),
        cache_dir=getattr(args, "cache_dir", None),
        freeze_encoders=True if getattr(args, "freeze_encoders", False) else None,
    )


def cmd_extract(args) -> int:
    cfg = _config(args)
    entries = load_manifest(args.manifest)
    cache_dir = Path(cfg.cache_dir)
    ok, failures, computed = ensure_features(entries, cfg, cache_dir)
    write_failures(cache_dir / "failures.csv", failures)
    if args.emit_png:
        png_dir = cache_dir / "png"
        png_dir.mkdir(parents=True, exist_ok=True)
        for entry, feats in ok:
            save_png(feats.image, png_dir / f"{entry.sample_id}.png")
    print(f"extracted={len(ok)} computed={computed} cached={len(ok) - computed} failed={len(failures)}")
    return 0 if ok or not entries else 1


def cmd_train(args) -> int:
    cfg = _config(args)
    cache_dir = Path(cfg.cache_dir)
    ok, failures, _ = ensure_features(load_manifest(args.manifest), cfg, cache_dir)
    val = None
    if args.val_manifest:
        val_ok, val_fail, _ = ensure_features(load_manifest(args.val_manifest), cfg, cache_dir)
        failures += val_fail
        val = ([f for _, f in val_ok], [e.label for e, _ in val_ok])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_failures(out / "failures.csv", failures)
    samples, labels = [f for _, f in ok], [e.label for e, _ in ok]
    res = train(samples, labels, cfg, *(val or (None, None)))
    digest = save_model(out / "model.ckpt", res.model, cfg,
                        {"best_epoch": res.best_epoch, "stopped_epoch": res.stopped_epoch})
    write_history(out / "history.csv", res.history)
    report.plot_history(res.history, out / "loss_curve.png")
    print(f"checkpoint={out / 'model.ckpt'} sha256={digest} best_epoch={res.best_epoch} "
          f"epochs={res.stopped_epoch} skipped={len(failures)}")
    return 0


def cmd_predict(args) -> int:
    model, cfg, _ = load_model(args.checkpoint)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("apk", "label", "p_malicious", "p_benign"))
    status = 0
    for apk in args.apk:
        try:
            feats = extract_features(apk, cfg)
        except Exception as exc:
            log.error("%s: %s: %s", apk, type(exc).__name__, exc)
            status = 1
            continue
        p = predict_proba(model, [feats])[0]
        w.writerow((apk, str(Label(int(np.argmax(p)))), f"{p[0]:.6f}", f"{p[1]:.6f}"))
    return status


def cmd_eval(args) -> int:
    model, cfg, _ = load_model(args.checkpoint)
    if args.cache_dir:
        cfg = cfg.replace(cache_dir=args.cache_dir)
    ok, failures, _ = ensure_features(load_manifest(args.manifest), cfg, Path(cfg.cache_dir))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_failures(out / "failures.csv", failures)
    if not ok:
        raise EmptyDataset("no evaluable samples in manifest")
    probs = predict_proba(model, [f for _, f in ok])
    preds = np.argmax(probs, axis=1).tolist()
    entries = [e for e, _ in ok]
    rep = evaluate_slots([e.timestamp_year for e in entries], [int(e.label) for e in entries], preds)
    rep.extra = {"skipped": len(failures)}
    (out / "report.json").write_text(rep.to_json() + "\n")
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id", "year", "label", "predicted", "p_malicious"))
        for e, pred, p in zip(entries, preds, probs):
            w.writerow((e.sample_id, e.timestamp_year, str(e.label), str(Label(pred)), f"{p[0]:.6f}"))
    report.write_slot_csv(out / "slots.csv", rep.per_slot)
    if rep.aut is not None:
        report.plot_slots(rep.per_slot, rep.aut, out / "slots.png")
    summary = {k: getattr(rep, k) for k in ("precision", "recall", "accuracy", "f1")}
    print(json.dumps({"n": rep.total, **summary, "aut": rep.aut}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apkviews", description="Multi-view Android malware detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        if manifest:
            sp.add_argument("--manifest", required=True, help="CSV: sample_id,apk_path,label,year")
        sp.add_argument("--config", help="key = value file overriding the defaults")
        sp.add_argument("--cache-dir", help="feature cache directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--window-length", type=int)

    sp = sub.add_parser("extract", help="extract and cache per-view features")
    common(sp)
    sp.add_argument("--emit-png", action="store_true", help="also write each sample's image view as PNG")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("train", help="train a detector")
    common(sp)
    sp.add_argument("--val-manifest", help="explicit validation set (default: stratified split)")
    sp.add_argument("--freeze-encoders", action="store_true")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="classify APKs with a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--apk", required=True, nargs="+")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="evaluate a checkpoint, with per-year slots and AUT")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--cache-dir")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestError, CheckpointError, EmptyDataset, SingleClassDataset, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
