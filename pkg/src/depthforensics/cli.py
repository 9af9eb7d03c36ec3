"""Command line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import fdtn
from .autodiff.fdtn import FormatError
from .config import RunConfig, ValidationError
from .depth import DEFAULT_THRESHOLD, compute_fake_mask, ground_truth_depth, patch_average
from .params import ConfigurationError
from .synthetic import SpecError, load_sequence, read_manifest

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("depthforensics")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        cfg = RunConfig.parse(cfg.to_text() + f"{key.strip()} = {value.strip()}\n")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.deterministic:
        cfg = cfg.replace(deterministic=True)
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands --------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .pipeline import write_dataset

    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(data_seed=args.seed)
    out = _out(args, "data")
    items = write_dataset(cfg, out)
    counts = {s: sum(it.split == s for it in items) for s in ("train", "val", "test")}
    print(f"wrote {len(items)} sequences to {out} ({counts})")
    return EXIT_OK


def _depth_gt_single(args, cfg: RunConfig, out: Path) -> int:
    frame, original, depth = (fdtn.load(p) for p in (args.frame, args.original, args.depth))
    mask = compute_fake_mask(frame, original, args.threshold)
    g = ground_truth_depth(depth, mask, cfg.depth_offset)
    fdtn.save(out / "mask.fdtn", mask.astype(np.float32))
    fdtn.save(out / "gt.fdtn", g.astype(np.float32))
    fdtn.save(out / "patches.fdtn", patch_average(g, (cfg.grid, cfg.grid)))
    print(f"mask pixels {int(mask.sum())}; wrote mask, ground truth and {cfg.grid}x{cfg.grid} patch vector to {out}")
    return EXIT_OK


def cmd_depth_gt(args) -> int:
    """Fake masks, ground-truth depth maps and patch vectors.

    Either one (frame, original, depth) triple of FDTN files, or every item
    of a dataset directory written by ``gen-data``.
    """
    cfg = _config(args)
    out = _out(args, "depth-gt")
    single = (args.frame, args.original, args.depth)
    if any(single):
        if not all(single):
            raise ValidationError("--frame, --original and --depth must be given together")
        return _depth_gt_single(args, cfg, out)
    data = Path(args.data or cfg.data_dir or "")
    if not (data / "manifest.txt").exists():
        raise ValidationError(f"no dataset manifest at {data}; run gen-data first or pass --data")
    items, _ = read_manifest(data / "manifest.txt")
    grid = (cfg.grid, cfg.grid)
    rows = []
    previews = {}
    for it in items:
        seq = load_sequence(data / "items" / it.item_id, it.label)
        originals = seq.originals if seq.originals is not None else seq.frames
        masks = np.stack([compute_fake_mask(seq.frames[:, t], originals[:, t], args.threshold) for t in range(seq.n)])
        g = np.stack([ground_truth_depth(seq.depth[t], masks[t], cfg.depth_offset) for t in range(seq.n)])
        dest = out / it.item_id
        dest.mkdir(parents=True, exist_ok=True)
        fdtn.save(dest / "mask.fdtn", masks.astype(np.float32))
        fdtn.save(dest / "gt.fdtn", g.astype(np.float32))
        fdtn.save(dest / "patches.fdtn", patch_average(g, grid))
        rows.append(
            (it.item_id, it.label, int(masks.sum()), int((g == 0).sum()), int((g == cfg.depth_offset).sum()), int((g > cfg.depth_offset).sum()))
        )
        previews.setdefault(it.label, (seq, g))
    with open(out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("item_id", "label", "mask_pixels", "zero_pixels", "background_pixels", "face_pixels"))
        w.writerows(rows)
    if not args.no_plots and previews:
        from .plotting import plot_depth_examples

        plot_depth_examples(previews, out / "depth_gt.png")
    print(f"wrote ground truth for {len(rows)} sequences to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import read_metrics, train

    cfg = _config(args)
    out = _out(args, "run")
    result = train(cfg, out, progress=lambda r: print(
        f"epoch {r['epoch']:3d} {r['split']:5s} acc={r['acc']:.4f} auc={r['auc']:.4f} total={r['total']:.4f}", flush=True
    ))
    if not args.no_plots and cfg.epochs > 0:
        from .plotting import plot_training_curves

        plot_training_curves(read_metrics(out / "metrics.csv"), out / "training_curves.png")
    print(f"config hash {cfg.hash()}; {result.seconds:.1f}s; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import evaluate_checkpoint

    cfg = _config(args) if (args.config or args.set) else None
    out = _out(args, "eval")
    result = evaluate_checkpoint(args.checkpoint, args.split, out, cfg)
    with open(out / "eval_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("split", "items", "acc", "auc", "l_c", "l_ssim", "l_pmse", "total"))
        w.writerow((args.split, len(result.ids), repr(result.acc), repr(result.auc), *(repr(result.losses[k]) for k in ("l_c", "l_ssim", "l_pmse", "total"))))
    if not args.no_plots and len(set(result.labels.tolist())) == 2:
        from .plotting import plot_roc

        plot_roc(result.scores, result.labels, out / "roc.png", f"{args.split}: AUC {result.auc:.3f}")
    print(f"{args.split}: {len(result.ids)} items, acc={result.acc:.4f}, auc={result.auc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .pipeline import gradcheck_all, write_gradcheck_report

    rows = gradcheck_all(seed=args.seed or 0, max_checks=None if args.full else args.max_checks, fault=args.fault)
    for r in rows:
        print(f"{r.component:14s} max_rel_error={r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}")
    if args.out:
        write_gradcheck_report(_out(args, "gradcheck") / "gradcheck.csv", rows)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_GRADCHECK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (gen-data: dataset seed)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise reproducible")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="depthforensics", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset").set_defaults(fn=cmd_gen_data)
    p = sub.add_parser("depth-gt", parents=[common], help="ground-truth depth and patch targets for a dataset")
    p.add_argument("--data", help="dataset directory (default: config data_dir)")
    p.add_argument("--frame", help="single manipulated frame (FDTN, [3, H, W] or [H, W, 3])")
    p.add_argument("--original", help="matching original frame (FDTN)")
    p.add_argument("--depth", help="raw depth map of the original (FDTN, [H, W])")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="mask threshold on max channel difference")
    p.set_defaults(fn=cmd_depth_gt)
    sub.add_parser("train", parents=[common], help="train a detector").set_defaults(fn=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint or run directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every component")
    p.add_argument("--fault", help="inject a wrong backward into this component")
    p.add_argument("--max-checks", type=int, default=24, help="sampled elements per input")
    p.add_argument("--full", action="store_true", help="check every element")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValidationError, ConfigurationError, SpecError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - surface as a runtime failure exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
