"""Command-line entry point.

Exit codes: 0 ok, 2 ingest, 3 encode, 4 index/eval, 5 train, 64 usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .composer import CONFIGURATIONS, ComposeConfig, compose, configuration, normalize_methods, write_png
from .encoders import EncoderConfig, RpConfig
from .errors import EcgFieldError, EncodeError, IndexError_, IngestError, TrainError, UnknownMethod
from .preprocess import NotchConfig, NotchSkippedWarning, preprocess_pipeline
from .retrieval import DEFAULT_K_TEST, evaluate, load_index, save_index, write_report
from .signal_io import DEFAULT_FIXTURE_GAIN, load_entry, load_manifest, write_manifest, write_wfdb_fixture

log = logging.getLogger("ecgfield")

EXIT_OK, EXIT_INGEST, EXIT_ENCODE, EXIT_INDEX, EXIT_TRAIN, EXIT_USAGE = 0, 2, 3, 4, 5, 64
_FAMILY_CODES = ((IngestError, EXIT_INGEST), (EncodeError, EXIT_ENCODE),
                 (IndexError_, EXIT_INDEX), (TrainError, EXIT_TRAIN))


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ks(text: str) -> list:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _has_loss(loss: dict) -> bool:
    return loss.get("initial") is not None


def _print_table(reports) -> None:
    ks = sorted(reports[0].r_at) if reports else []
    print("\t".join(["direction"] + [f"R@{k}" for k in ks]))
    for r in reports:
        print("\t".join([r.direction] + [f"{100.0 * r.r_at[k]:.2f}" for k in ks]))
    if reports:
        print(f"RSUM\t{reports[0].rsum:.2f}")


# --- commands ----------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    from .synthetic import SyntheticConfig, write_corpus
    cfg = SyntheticConfig(n_train=args.n_train, n_test=args.n_test, fs_hz=args.fs,
                          duration_s=args.duration, seed=args.seed)
    path = write_corpus(args.out, cfg)
    print(json.dumps({"manifest": str(path), "train": cfg.n_train, "test": cfg.n_test}, sort_keys=True))
    return EXIT_OK


def cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    (out / "records").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    lines, failures = [], []
    for entry in manifest.entries:
        try:
            rec = load_entry(entry, fs=args.fs)
            write_wfdb_fixture(rec, out / "records", gain=args.gain)
        except IngestError as exc:
            failures.append({"id": entry.record_id, "error": type(exc).__name__, "message": str(exc)})
            log.error("%s: %s", entry.record_id, exc)
            continue
        line = {"id": rec.record_id, "record": f"records/{rec.record_id}.hea", "split": entry.split}
        if rec.report is not None:
            _atomic_text(out / "reports" / f"{rec.record_id}.txt", rec.report.text + "\n")
            line["report"] = f"reports/{rec.record_id}.txt"
        lines.append(line)
    write_manifest(lines, out / "manifest.jsonl")
    summary = {"count": len(lines), "failed": failures,
               "splits": {s: sum(1 for ln in lines if ln["split"] == s) for s in ("train", "test")}}
    _write_json(out / "summary.json", summary)
    print(json.dumps({"count": len(lines), "failed": len(failures)}, sort_keys=True))
    return EXIT_INGEST if failures else EXIT_OK


def cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    (out / "records").mkdir(parents=True, exist_ok=True)
    notch = None if args.no_notch else NotchConfig(fs_hz=1.0, f0_hz=args.notch_f0, q=args.notch_q)
    lines = []
    skipped = 0
    for entry in manifest.entries:
        rec = load_entry(entry)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NotchSkippedWarning)
            clean = preprocess_pipeline(rec, n_points=args.window_points, notch=notch)
        if any(issubclass(w.category, NotchSkippedWarning) for w in caught):
            if not skipped:
                log.warning("%s", caught[0].message)
            skipped += 1
        write_wfdb_fixture(clean, out / "records", gain=args.gain)
        line = {"id": rec.record_id, "record": f"records/{rec.record_id}.hea", "split": entry.split}
        if entry.report_path is not None:
            line["report"] = os.path.relpath(entry.report_path, out)
        lines.append(line)
    write_manifest(lines, out / "manifest.jsonl")
    if skipped > 1:
        log.warning("notch skipped on %d records in total", skipped)
    print(json.dumps({"count": len(lines), "notch_skipped": skipped}, sort_keys=True))
    return EXIT_OK


def _encoder_config(args) -> EncoderConfig:
    rp = RpConfig(dim=args.rp_dim, delay=args.rp_delay, epsilon=args.rp_eps, mode=args.rp_mode)
    return EncoderConfig(q_bins=args.q_bins, rp=rp, rescale_mode=args.rescale, gaf_variant=args.gaf_variant)


def _compose_configs(args) -> list:
    overrides = {"cell_size": args.cell_size, "target_size": args.target_size or None,
                 "window_s": args.window}
    if args.layout or args.methods:
        if not args.layout:
            raise UsageError("--methods needs --layout")
        try:
            methods = normalize_methods(args.methods or "")
        except UnknownMethod as exc:
            raise UnknownMethod(f"--methods: {exc}") from exc
        try:
            cfg = ComposeConfig(args.layout, tuple(methods), **overrides)
        except ValueError as exc:
            raise EncodeError(f"--layout {args.layout}: {exc}") from exc
        return [("custom", cfg)]
    names = list(CONFIGURATIONS) if args.config == "all" else [n.strip() for n in args.config.split(",")]
    try:
        return [(n, configuration(n, **overrides)) for n in names]
    except UnknownMethod as exc:
        raise UnknownMethod(f"--config: {exc}") from exc
    except ValueError as exc:
        raise EncodeError(f"--cell-size/--target-size: {exc}") from exc


def cmd_encode(args) -> int:
    manifest = load_manifest(args.manifest)
    configs = _compose_configs(args)
    try:
        enc = _encoder_config(args)
    except ValueError as exc:
        raise EncodeError(f"--rp-*: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written, listing = [], []
    try:
        for entry in manifest.entries:
            rec = load_entry(entry)
            for name, cfg in configs:
                img = compose(rec, cfg, enc)
                path = out / f"{rec.record_id}__{name}.png"
                write_png(img, path)
                written.append(path)
                listing.append({"id": rec.record_id, "config": name, "file": path.name,
                                "height": img.height, "width": img.width, "channels": img.channels})
        index_path = out / "encode_manifest.json"
        _write_json(index_path, {"configs": {n: asdict(c) for n, c in configs},
                                 "encoder": asdict(enc), "images": listing})
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    print(json.dumps({"images": len(listing), "configs": [n for n, _ in configs]}, sort_keys=True))
    return EXIT_OK


def cmd_embed(args) -> int:
    from .training.toy import ToyModel
    model = ToyModel.load(args.checkpoint)
    manifest = load_manifest(args.manifest)
    entries = manifest.entries if args.split == "all" else manifest.split(args.split)
    pairs = model.load_pairs(entries)
    index = model.index(pairs)
    save_index(index, args.out)
    print(json.dumps({"index": str(args.out), "entries": len(index), "dim": index.dim}, sort_keys=True))
    return EXIT_OK


def _render_figures(reports, fig_dir: Path, history=None, chance=None) -> list:
    from . import plotting
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = [plotting.recall_bars(reports, fig_dir / "recall_at_k.png", chance)]
    if history:
        paths.append(plotting.loss_curves(history, fig_dir / "loss_curves.png"))
    return paths


def cmd_eval(args) -> int:
    index = load_index(args.index)
    reports = evaluate(index, args.k, args.k_test)
    _print_table(reports)
    if args.out:
        write_report(reports, args.out, args.k_test, pairs=len(index.pairing))
    if args.figures:
        n = len(index.pairing)
        _render_figures(reports, Path(args.figures), chance=1.0 / n if n else None)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .training.loop import TrainConfig
    from .training.toy import run_toy
    try:
        cfg = TrainConfig(batch_size=args.batch_size, steps=args.steps, learning_rate=args.lr, alpha=args.alpha,
                          mask_prob=args.mask_prob, seed=args.seed, weight_decay=args.weight_decay,
                          momentum=args.momentum, queue_size=args.queue_size, queue_init=args.queue_init,
                          optimizer=args.optimizer, schedule=args.schedule, warmup_steps=args.warmup_steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = run_toy(args.manifest, cfg, args.config, args.image_size, args.patch_size, args.hidden,
                  args.embed_dim, args.window, ks=args.k, k_test=args.k_test,
                  log_path=out / "train_log.jsonl")
    run.model.save(out / "checkpoint.bin")
    if run.index is not None:
        save_index(run.index, out / "test_index.bin")
    write_report(run.reports, out / "report.json", args.k_test, loss_initial=run.loss["initial"],
                 loss_final=run.loss["final"], steps=cfg.steps, seed=cfg.seed)
    log.info("data %.1fs, training %.1fs", run.seconds["data"], run.seconds["train"])
    _print_table(run.reports)
    if _has_loss(run.loss):
        print(f"loss\t{run.loss['initial']:.4f}\t{run.loss['final']:.4f}")
    if not args.no_figures and run.reports:
        _render_figures(run.reports, out, run.history, chance=1.0 / len(run.index.pairing))
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> Parser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = Parser(prog="ecgfield", description="ECG-to-image encodings and toy image/report retrieval.",
               formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=Parser, metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-synthetic", help="write the seeded synthetic corpus", formatter_class=fmt)
    g.add_argument("out", type=Path, help="output directory")
    g.add_argument("--n-train", type=int, default=256, help="train-split records")
    g.add_argument("--n-test", type=int, default=64, help="test-split records")
    g.add_argument("--fs", type=float, default=100.0, help="sampling rate (Hz)")
    g.add_argument("--duration", type=float, default=10.0, help="record length (s)")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.set_defaults(func=cmd_gen_synthetic, code=EXIT_INGEST)

    i = sub.add_parser("ingest", help="validate a manifest and re-emit records as WFDB fixtures",
                       formatter_class=fmt)
    i.add_argument("manifest", type=Path, help="JSON-lines manifest")
    i.add_argument("out", type=Path, help="output directory")
    i.add_argument("--fs", type=float, default=None, help="sampling rate for CSV records without one")
    i.add_argument("--gain", type=float, default=DEFAULT_FIXTURE_GAIN, help="ADU per mV in the written fixtures")
    i.add_argument("--seed", type=int, default=0, help="unused; the command is deterministic")
    i.set_defaults(func=cmd_ingest, code=EXIT_INGEST)

    pp = sub.add_parser("preprocess", help="moving-average and notch filtering", formatter_class=fmt)
    pp.add_argument("manifest", type=Path, help="JSON-lines manifest")
    pp.add_argument("out", type=Path, help="output directory")
    pp.add_argument("--window-points", type=int, default=1, help="odd moving-average window")
    pp.add_argument("--notch-f0", type=float, default=50.0, help="notch centre (Hz)")
    pp.add_argument("--notch-q", type=float, default=30.0, help="notch quality factor")
    pp.add_argument("--no-notch", action="store_true", help="skip the notch filter")
    pp.add_argument("--gain", type=float, default=DEFAULT_FIXTURE_GAIN, help="ADU per mV in the written fixtures")
    pp.add_argument("--seed", type=int, default=0, help="unused; the command is deterministic")
    pp.set_defaults(func=cmd_preprocess, code=EXIT_ENCODE)

    e = sub.add_parser("encode", help="render field images as PNG", formatter_class=fmt)
    e.add_argument("manifest", type=Path, help="JSON-lines manifest")
    e.add_argument("out", type=Path, help="output directory")
    e.add_argument("--config", default="all",
                   help=f"comma-separated presets or 'all' ({', '.join(CONFIGURATIONS)})")
    e.add_argument("--layout", default=None,
                   help="custom layout, written as <id>__custom.png (overrides --config)")
    e.add_argument("--methods", default=None, help="comma-separated methods for --layout")
    e.add_argument("--cell-size", type=int, default=96, help="per-lead tile size (px)")
    e.add_argument("--target-size", type=int, default=384, help="final square size; 0 keeps the raw size")
    e.add_argument("--window", type=float, default=None, help="seconds of each lead to encode")
    e.add_argument("--q-bins", type=int, default=8, help="MTF quantile bins")
    e.add_argument("--gaf-variant", choices=("GASF", "GADF"), default="GASF", help="field used for 'GAF'")
    e.add_argument("--rescale", choices=("neg1to1", "zeroTo1"), default="neg1to1", help="GAF rescaling")
    e.add_argument("--rp-dim", type=int, default=1, help="RP embedding dimension")
    e.add_argument("--rp-delay", type=int, default=1, help="RP delay")
    e.add_argument("--rp-eps", type=float, default=None, help="RP threshold (default: 0.1 x max distance)")
    e.add_argument("--rp-mode", choices=("binary", "distance"), default="binary", help="RP output")
    e.add_argument("--seed", type=int, default=0, help="unused; the command is deterministic")
    e.set_defaults(func=cmd_encode, code=EXIT_ENCODE)

    m = sub.add_parser("embed", help="embed a manifest split with a trained checkpoint", formatter_class=fmt)
    m.add_argument("checkpoint", type=Path, help="checkpoint written by train-toy")
    m.add_argument("manifest", type=Path, help="JSON-lines manifest")
    m.add_argument("out", type=Path, help="index file to write")
    m.add_argument("--split", choices=("train", "test", "all"), default="test", help="records to embed")
    m.add_argument("--seed", type=int, default=0, help="unused; the command is deterministic")
    m.set_defaults(func=cmd_embed, code=EXIT_INDEX)

    v = sub.add_parser("eval", help="recall@K and RSUM for an embedding index", formatter_class=fmt)
    v.add_argument("index", type=Path, help="index file")
    v.add_argument("--k", type=_ks, default=[1, 5, 10], help="comma-separated K values")
    v.add_argument("--k-test", type=int, default=DEFAULT_K_TEST, help="ranking shortlist size")
    v.add_argument("--out", type=Path, default=None, help="report JSON path")
    v.add_argument("--figures", type=Path, default=None, help="directory for report figures")
    v.add_argument("--seed", type=int, default=0, help="unused; the command is deterministic")
    v.set_defaults(func=cmd_eval, code=EXIT_INDEX)

    t = sub.add_parser("train-toy", help="train and evaluate the toy dual encoder", formatter_class=fmt)
    t.add_argument("manifest", type=Path, help="manifest with train and test splits")
    t.add_argument("out", type=Path, help="output directory")
    t.add_argument("--steps", type=int, default=200, help="optimisation steps")
    t.add_argument("--batch-size", type=int, default=16, help="pairs per step")
    t.add_argument("--lr", type=float, default=0.01, help="learning rate")
    t.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw", help="update rule")
    t.add_argument("--schedule", choices=("constant", "warmup_linear"), default="constant", help="lr schedule")
    t.add_argument("--warmup-steps", type=int, default=20, help="warm-up length for warmup_linear")
    t.add_argument("--alpha", type=float, default=0.4, help="soft-label weight")
    t.add_argument("--mask-prob", type=float, default=0.15, help="token masking probability")
    t.add_argument("--weight-decay", type=float, default=0.05, help="decoupled weight decay")
    t.add_argument("--momentum", type=float, default=0.95, help="momentum-encoder coefficient")
    t.add_argument("--queue-size", type=int, default=256, help="feature queue capacity")
    t.add_argument("--queue-init", choices=("random", "empty"), default="random", help="initial queue contents")
    t.add_argument("--config", choices=sorted(CONFIGURATIONS), default="all_grid_finetune", help="image preset")
    t.add_argument("--image-size", type=int, default=96, help="toy image side (px)")
    t.add_argument("--patch-size", type=int, default=8, help="patch side (px)")
    t.add_argument("--hidden", type=int, default=64, help="pooled feature width")
    t.add_argument("--embed-dim", type=int, default=32, help="joint embedding width")
    t.add_argument("--window", type=float, default=5.0, help="seconds of each lead to encode")
    t.add_argument("--k", type=_ks, default=[1, 5, 10], help="comma-separated K values")
    t.add_argument("--k-test", type=int, default=DEFAULT_K_TEST, help="ranking shortlist size")
    t.add_argument("--seed", type=int, default=0, help="random seed")
    t.add_argument("--no-figures", action="store_true", help="skip the report figures")
    t.set_defaults(func=cmd_train_toy, code=EXIT_TRAIN)
    return p


def _setup_logging() -> None:
    level = os.environ.get("ECG_FIELD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ecgfield {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EcgFieldError as exc:
        code = next((c for fam, c in _FAMILY_CODES if isinstance(exc, fam)), args.code)
        print(f"ecgfield {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except (ValueError, KeyError, OSError) as exc:
        print(f"ecgfield {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return args.code


if __name__ == "__main__":
    sys.exit(main())
