"""Command-line entry point: ``nhk <subcommand> ...``.

Inputs are paired across directories by filename stem and processed in
sorted stem order, so outputs and reductions do not depend on ``--threads``.
Every subcommand exits 0 only when no file failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentSpec, augment
from .blocks import NetworkConfig, ShapeError, check_shapes
from .io import (
    FormatError,
    read_class_png,
    read_float_map,
    read_hover,
    read_instance_classes,
    read_label_png,
    read_probabilities,
    read_rgb_png,
    write_class_png,
    write_hover,
    write_instance_classes,
    write_label_png,
    write_report,
    write_rgb_png,
)
from .losses import LossParams, cross_entropy, dice_loss, gradient_suite, weighted_cross_entropy
from .metrics import evaluate_dataset
from .postprocess import PostprocessParams, classify_instances, extract_instances
from .raster import argmax_channels, one_hot
from .targets import hover_targets

PALETTE = np.array([
    (0, 0, 0), (255, 0, 0), (0, 255, 0), (0, 0, 255),
    (255, 255, 0), (255, 0, 255), (0, 255, 255),
], dtype=np.uint8)


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("NHK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"NHK_THREADS must be an integer, got {env!r}")
    return 1


def _map(fn, items, threads: int):
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stems(directory: Path, suffix: str) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.glob(f"*{suffix}")) if p.is_file()}


def _write_manifest(out: Path, command: str, params: dict, entries: list, errors: list) -> None:
    manifest = {
        "tool": "nhk",
        "version": __version__,
        "command": command,
        "params": params,
        "entries": entries,
        "errors": errors,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _report_errors(errors: list) -> int:
    for e in errors:
        print(f"error: {e['file']}: {e['error']}", file=sys.stderr)
    return 1 if errors else 0


def _require_dir(path: Path, what: str) -> None:
    if not path.is_dir():
        raise SystemExit(f"{what} directory not found: {path}")


# gen-targets

def cmd_gen_targets(args) -> int:
    labels_dir, out = Path(args.labels), Path(args.out)
    _require_dir(labels_dir, "labels")
    out.mkdir(parents=True, exist_ok=True)
    sources = _stems(labels_dir, ".png")

    def work(item):
        stem, path = item
        try:
            m = read_label_png(path)
        except FormatError as exc:
            return None, {"file": path.name, "error": str(exc)}
        target = out / f"{stem}.f32m"
        write_hover(target, hover_targets(m))
        return {"input": path.name, "input_sha256": _sha256(path), "output": target.name,
                "instances": int(len(np.unique(m[m > 0])))}, None

    results = _map(work, list(sources.items()), _threads(args.threads))
    entries = [r for r, _ in results if r]
    errors = [e for _, e in results if e]
    _write_manifest(out, "gen-targets", {}, entries, errors)
    print(f"wrote {len(entries)} hover maps to {out}")
    return _report_errors(errors)


# postprocess

def _overlay(m: np.ndarray, classes: dict[int, int]) -> np.ndarray:
    """Instance boundaries painted in their class colour on black."""
    edge = np.zeros(m.shape, dtype=bool)
    edge[:, 1:] |= m[:, 1:] != m[:, :-1]
    edge[:, :-1] |= m[:, 1:] != m[:, :-1]
    edge[1:, :] |= m[1:, :] != m[:-1, :]
    edge[:-1, :] |= m[1:, :] != m[:-1, :]
    edge &= m > 0
    lut = np.zeros(int(m.max()) + 1, dtype=np.uint8)
    for i, k in classes.items():
        lut[i] = k
    return PALETTE[np.where(edge, lut[m], 0)]


def _params_from(args) -> PostprocessParams:
    return PostprocessParams(
        fg_threshold=args.fg_threshold,
        marker_threshold=args.marker_threshold,
        sobel_ksize=args.sobel_ksize,
        min_instance_size=args.min_size,
    )


def cmd_postprocess(args) -> int:
    dirs = {"fg": Path(args.fg), "hover": Path(args.hover), "classes": Path(args.classes)}
    for name, d in dirs.items():
        _require_dir(d, name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        params = _params_from(args)
    except ValueError as exc:
        raise SystemExit(str(exc))
    found = {name: _stems(d, ".f32m") for name, d in dirs.items()}
    stems = sorted(set().union(*found.values()))

    def work(stem):
        missing = [name for name in dirs if stem not in found[name]]
        if missing:
            return None, {"file": stem, "error": f"missing counterpart in {', '.join(missing)}"}
        try:
            fg = read_float_map(found["fg"][stem])
            hv = read_hover(found["hover"][stem])
            probs = read_probabilities(found["classes"][stem])
        except FormatError as exc:
            return None, {"file": stem, "error": str(exc)}
        fg = fg[1] if fg.shape[0] == 2 else fg[0]
        if fg.shape != hv.shape or probs.shape[:2] != hv.shape:
            return None, {"file": stem, "error": "raster shapes disagree"}
        if probs.shape[2] != 7:
            return None, {"file": stem, "error": f"class stack has {probs.shape[2]} channels, expected 7"}
        m = extract_instances(fg, hv, params)
        result = classify_instances(m, argmax_channels(probs))
        sizes = {i: int(v.sum()) for i, v in result.votes.items()}
        write_label_png(out / f"{stem}.png", m)
        write_instance_classes(out / f"{stem}.csv", result.classes, sizes)
        if args.overlay:
            write_rgb_png(out / f"{stem}_overlay.png", _overlay(m, result.classes))
        inputs = {name: _sha256(found[name][stem]) for name in dirs}
        return {"stem": stem, "instances": len(result), "input_sha256": inputs}, None

    results = _map(work, stems, _threads(args.threads))
    entries = [r for r, _ in results if r]
    errors = [e for _, e in results if e]
    _write_manifest(out, "postprocess", asdict(params), entries, errors)
    print(f"post-processed {len(entries)} images into {out}")
    return _report_errors(errors)


# evaluate

def _load_pair(directory: Path, stem: str):
    m = read_label_png(directory / f"{stem}.png")
    classes = read_instance_classes(directory / f"{stem}.csv")
    present = set(np.unique(m[m > 0]).tolist())
    if set(classes) != present:
        raise FormatError(f"{directory / stem}: class table ids do not match the instance map")
    return m, classes


def cmd_evaluate(args) -> int:
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    _require_dir(gt_dir, "gt")
    _require_dir(pred_dir, "pred")
    # an item is a class table plus its instance PNG; overlays have no table
    gt_stems, pred_stems = set(_stems(gt_dir, ".csv")), set(_stems(pred_dir, ".csv"))
    unpaired = sorted(gt_stems ^ pred_stems)
    if unpaired:
        print(f"error: unpaired stems: {', '.join(unpaired)}", file=sys.stderr)
        return 1
    stems = sorted(gt_stems)

    def work(stem):
        try:
            gt, gt_cls = _load_pair(gt_dir, stem)
            pred, pred_cls = _load_pair(pred_dir, stem)
        except (FormatError, OSError) as exc:
            return None, {"file": stem, "error": str(exc)}
        if gt.shape != pred.shape:
            return None, {"file": stem, "error": f"shape mismatch {gt.shape} vs {pred.shape}"}
        return (stem, gt, gt_cls, pred, pred_cls), None

    results = _map(work, stems, _threads(args.threads))
    errors = [e for _, e in results if e]
    if errors:
        return _report_errors(errors)
    report = evaluate_dataset([r for r, _ in results], params={"gt": gt_dir.name, "pred": pred_dir.name})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = write_report(out, report, args.method)
    r2 = "n/a" if report.r2_mean is None else f"{report.r2_mean:.5f}"
    print(f"mPQ+ {report.mpq_plus:.5f}  R2 {r2}  ({len(stems)} images) -> {out}, {csv_path}")
    return 0


# loss-check

def cmd_loss_check(args) -> int:
    params = LossParams(epsilon=args.epsilon, clip_floor=args.clip_floor)
    checks = gradient_suite(cases=args.cases, seed=args.seed, params=params)
    rows = [(c.name, f"{c.cases}", f"{c.worst_rel_error:.2e}", "PASS" if c.passed else "FAIL") for c in checks]

    rng = np.random.default_rng(args.seed)
    labels = rng.integers(0, 7, size=(8, 8))
    y = one_hot(labels)
    p = rng.dirichlet(np.ones(7), size=(8, 8))
    same = weighted_cross_entropy(y, p, np.ones(7), params)[0] == cross_entropy(y, p, params)[0]
    rows.append(("wce(ones) == ce", "1", "bitwise", "PASS" if same else "FAIL"))
    big = one_hot(np.repeat(np.arange(7), 64).reshape(28, 16))
    dice = dice_loss(big, big, params)[0]
    rows.append(("dice perfect ~ -1", "1", f"{abs(dice + 1):.2e}", "PASS" if abs(dice + 1) <= 1e-3 else "FAIL"))

    width = max(len(r[0]) for r in rows)
    print(f"{'check':<{width}}  cases  worst_err  result")
    for name, cases, err, result in rows:
        print(f"{name:<{width}}  {cases:>5}  {err:>9}  {result}")
    return 0 if all(r[3] == "PASS" for r in rows) else 1


# shapes

def cmd_shapes(args) -> int:
    cfg = NetworkConfig()
    if args.config:
        try:
            cfg = NetworkConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            print(f"error: {args.config}: {exc}", file=sys.stderr)
            return 1
    if args.size:
        cfg.input_size = (args.size[0], args.size[1])
    try:
        trace = check_shapes(cfg)
    except ShapeError as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return 1
    for stage in trace:
        print(stage)
    return 0


# augment

def _spec_from(args) -> AugmentSpec:
    return AugmentSpec(
        seed=args.seed,
        hflip_prob=args.hflip_prob,
        vflip_prob=args.vflip_prob,
        rot90=not args.no_rot90,
        rescale=None if args.no_rescale else tuple(args.rescale),
        rotation=None if args.no_rotation else tuple(args.rotation),
        crop_size=tuple(args.crop) if args.crop else None,
        hue_shift=None if args.no_hsv else tuple(args.hue),
        saturation=None if args.no_hsv else tuple(args.saturation),
        value=None if args.no_hsv else tuple(args.value),
    )


def cmd_augment(args) -> int:
    dirs = {"images": Path(args.images), "labels": Path(args.labels), "classes": Path(args.classes)}
    for name, d in dirs.items():
        _require_dir(d, name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec = _spec_from(args)
    except ValueError as exc:
        raise SystemExit(str(exc))
    found = {name: _stems(d, ".png") for name, d in dirs.items()}
    stems = sorted(set().union(*found.values()))

    def work(job):
        draw, stem = job
        missing = [name for name in dirs if stem not in found[name]]
        if missing:
            return None, {"file": stem, "error": f"missing counterpart in {', '.join(missing)}"}
        try:
            img = read_rgb_png(found["images"][stem])
            m = read_label_png(found["labels"][stem])
            c = read_class_png(found["classes"][stem])
            result, hv = augment(img, m, c, spec, draw)
        except (FormatError, ValueError) as exc:
            return None, {"file": stem, "error": str(exc)}
        write_rgb_png(out / f"{stem}_image.png", result.image)
        write_label_png(out / f"{stem}_labels.png", result.labels)
        write_class_png(out / f"{stem}_classes.png", result.classes)
        write_hover(out / f"{stem}_hover.f32m", hv)
        (out / f"{stem}_params.json").write_text(json.dumps(result.params, indent=2, sort_keys=True) + "\n")
        return {"stem": stem, "draw": draw, "params": result.params,
                "input_sha256": {name: _sha256(found[name][stem]) for name in dirs}}, None

    results = _map(work, list(enumerate(stems)), _threads(args.threads))
    entries = [r for r, _ in results if r]
    errors = [e for _, e in results if e]
    _write_manifest(out, "augment", spec.to_dict(), entries, errors)
    print(f"augmented {len(entries)} images into {out}")
    return _report_errors(errors)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhk", description="Nucleus HoVer toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def threaded(p):
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $NHK_THREADS or 1)")
        return p

    p = threaded(sub.add_parser("gen-targets", help="HoVer maps from instance label PNGs"))
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_targets)

    p = threaded(sub.add_parser("postprocess", help="instances and classes from head outputs"))
    p.add_argument("--fg", required=True, help="foreground probability maps (.f32m)")
    p.add_argument("--hover", required=True, help="HoVer maps (.f32m, 2 channels)")
    p.add_argument("--classes", required=True, help="class probability stacks (.f32m, 7 channels)")
    p.add_argument("--out", required=True)
    defaults = PostprocessParams()
    p.add_argument("--fg-threshold", type=float, default=defaults.fg_threshold)
    p.add_argument("--marker-threshold", type=float, default=defaults.marker_threshold)
    p.add_argument("--sobel-ksize", type=int, default=defaults.sobel_ksize)
    p.add_argument("--min-size", type=int, default=defaults.min_instance_size)
    p.add_argument("--overlay", action="store_true", help="also write boundary overlays")
    p.set_defaults(func=cmd_postprocess)

    p = threaded(sub.add_parser("evaluate", help="mPQ+ and R2 of predictions against ground truth"))
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True, help="report JSON path; a CSV is written alongside")
    p.add_argument("--method", default="ours", help="method name for the CSV row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loss-check", help="finite-difference check of every loss gradient")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=LossParams.epsilon)
    p.add_argument("--clip-floor", type=float, default=LossParams.clip_floor)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("shapes", help="print the network shape trace")
    p.add_argument("--config", help="JSON network config")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.set_defaults(func=cmd_shapes)

    p = threaded(sub.add_parser("augment", help="seeded augmentation of image/label/class triples"))
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--out", required=True)
    spec = AugmentSpec()
    p.add_argument("--seed", type=int, default=spec.seed)
    p.add_argument("--hflip-prob", type=float, default=spec.hflip_prob)
    p.add_argument("--vflip-prob", type=float, default=spec.vflip_prob)
    p.add_argument("--no-rot90", action="store_true")
    p.add_argument("--rescale", type=float, nargs=2, default=spec.rescale)
    p.add_argument("--no-rescale", action="store_true")
    p.add_argument("--rotation", type=float, nargs=2, default=spec.rotation)
    p.add_argument("--no-rotation", action="store_true")
    p.add_argument("--crop", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--hue", type=float, nargs=2, default=spec.hue_shift)
    p.add_argument("--saturation", type=float, nargs=2, default=spec.saturation)
    p.add_argument("--value", type=float, nargs=2, default=spec.value)
    p.add_argument("--no-hsv", action="store_true")
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
