"""Command-line entry point: ``wamitrack <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure. Failures
also print one ``error code=<n> kind=<kind> message=<json string>`` line on
stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config, write_config
from .detector import (
    Detector,
    NetworkClassifier,
    NetworkRegressor,
    OracleClassifier,
    OracleRegressor,
    calibrate_phi,
    estimate_homographies,
    extract_classifier_set,
    extract_regression_set,
    read_detections,
    write_detections,
)
from .evalmetrics import evaluate_detections, filter_stationary, format_report, match_detections, prf, track_metrics
from .frameio import load_video, save_video
from .gmphd import read_tracks, run_tracker, write_tracks
from .nn.architectures import classification_net, regression_net
from .nn.serialize import WeightsFormatError, read_weights, write_weights
from .nn.train import TrainConfig, accuracy, train, write_training_log
from .registration import RegistrationError, read_homographies, write_homographies
from .synth import PRESETS, SpecError, load_spec, preset, read_ground_truth, render_video, write_ground_truth

log = logging.getLogger("wamitrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _meta_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def _homography_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".homographies.txt")


def _read_meta(csv_path) -> dict | None:
    p = _meta_path(csv_path)
    return json.loads(p.read_text()) if p.is_file() else None


def _frames(video_dir):
    video = load_video(video_dir)
    idx = [f.index for f in video]
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise ValueError(f"{video_dir}: frame numbers are not consecutive")
    return video


def _load_config(args) -> PipelineConfig:
    return load_config(getattr(args, "config", None), getattr(args, "profile", None),
                       getattr(args, "registration", None))


def _homographies(args, frames, cfg: PipelineConfig, threads: int = 1):
    if getattr(args, "homographies", None):
        hs = read_homographies(args.homographies)
        if len(hs) != len(frames):
            raise ValueError(f"{args.homographies}: {len(hs)} homographies for {len(frames)} frames")
        return hs
    return estimate_homographies([f.pixels for f in frames], cfg.registration, threads, cfg.seed)


def _positions(det_by_frame: dict) -> dict:
    return {f: np.array([(d.x, d.y) for d in v], dtype=np.float64).reshape(-1, 2) for f, v in det_by_frame.items()}


def _shift(rows, first: int):
    """Ground-truth rows renumbered to positions within the loaded video."""
    return [r.__class__(r.frame - first, *[getattr(r, k) for k in ("id", "x", "y", "world_x", "world_y",
                                                                     "displacement_m")]) for r in rows]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.preset:
        spec = preset(args.preset, **({"seed": args.seed} if args.seed is not None else {}))
    elif args.spec:
        spec = load_spec(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    else:
        raise UsageError("give a spec file or --preset")
    out = render_video(spec)
    d = Path(args.out_dir)
    save_video(d / "frames", out.frames, args.format)
    write_ground_truth(d / "ground_truth.csv", out.ground_truth)
    write_homographies(d / "homographies.txt", out.homographies)
    (d / "scene.json").write_text(json.dumps(out.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"frames={len(out.frames)} objects={len({r.id for r in out.ground_truth})} out={d}")
    return EXIT_OK


def _train_common(args, kind: str) -> int:
    cfg = _load_config(args)
    frames = _frames(args.video_dir)
    first = frames[0].index
    gt = _shift(read_ground_truth(args.gt), first)
    hs = _homographies(args, frames, cfg, args.threads)
    pix = [f.pixels for f in frames]
    if kind == "classifier":
        x, y, info = extract_classifier_set(pix, gt, hs, cfg.subtraction, cfg.detector, seed=cfg.seed)
        net = classification_net(seed=cfg.seed)
        # last quarter of the frames is held out
        cut = info[:, 0].min() + int(0.75 * (info[:, 0].max() - info[:, 0].min() + 1))
        held = info[:, 0] >= cut
    else:
        x, y = extract_regression_set(pix, gt, hs, seed=cfg.seed)
        net = regression_net(seed=cfg.seed)
        held = np.zeros(len(x), dtype=bool)
        held[int(0.8 * len(x)):] = True
    if held.all() or not held.any():
        held[:] = False
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=cfg.seed)
    history = train(net, x[~held], y[~held], tcfg,
                    callback=lambda e, l, a: log.info("epoch %d loss %.5f accuracy %.4f", e, l, a))
    write_weights(args.out_weights, net)
    write_training_log(Path(args.out_weights).with_suffix(".log.csv"), history)
    report = {"samples": int((~held).sum()), "held_out": int(held.sum())}
    if held.any():
        report["held_out_accuracy"] = accuracy(net, net.predict(x[held]), y[held])
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    return _train_common(args, "classifier")


def cmd_train_regressor(args) -> int:
    return _train_common(args, "regressor")


def _detector(args, cfg: PipelineConfig, gt_rows=None) -> Detector:
    if args.oracle_classifier:
        gt = gt_rows if gt_rows is not None else read_ground_truth(args.oracle_classifier)
        cls, reg = OracleClassifier(gt), OracleRegressor(gt)
    else:
        if not args.classifier or not args.regressor:
            raise UsageError("--classifier and --regressor weights are required without --oracle-classifier")
        cls = NetworkClassifier(read_weights(args.classifier), args.threads)
        reg = NetworkRegressor(read_weights(args.regressor), args.threads)
    return Detector(cls, reg, cfg.detector, cfg.subtraction, args.threads)


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    frames = _frames(args.video_dir)
    gt = _shift(read_ground_truth(args.gt), frames[0].index)
    det = _detector(args, cfg, gt if args.oracle_classifier else None)
    hs = _homographies(args, frames, cfg, args.threads)
    phi, table = calibrate_phi(det, [f.pixels for f in frames], gt, hs)
    cfg.detector = replace(cfg.detector, phi=phi)
    write_config(args.out_config, cfg)
    with open(Path(args.out_config).with_suffix(".sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phi", "tp", "fp", "fn", "precision", "recall", "f1"])
        for p in sorted(table):
            m = table[p]
            w.writerow([f"{p:.2f}", m["tp"], m["fp"], m["fn"]] + [f"{m[k]:.6f}" for k in ("precision", "recall", "f1")])
    if args.plot:
        from .plotting import plot_phi_sweep
        plot_phi_sweep(table, phi, args.plot)
    sys.stdout.write(format_report({"phi": phi, **{f"f1@{p:.2f}": table[p]["f1"] for p in sorted(table)}}))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    frames = _frames(args.video_dir)
    first = frames[0].index
    gt = _shift(read_ground_truth(args.oracle_classifier), first) if args.oracle_classifier else None
    det = _detector(args, cfg, gt)
    hs = _homographies(args, frames, cfg, args.threads)
    res, hs = det.run([f.pixels for f in frames], hs, dump_dir=args.dump_intermediates)
    res = {first + t: v for t, v in res.items()}
    write_detections(args.out_csv, res)
    write_homographies(_homography_path(args.out_csv), hs)
    h, w = frames[0].pixels.shape
    meta = {"first_frame": first + det.warmup, "last_frame": first + len(frames) - 1, "video_first_frame": first,
            "width": w, "height": h, "profile": cfg.profile, "registration": cfg.registration,
            "phi": cfg.detector.phi, "kappa": cfg.detector.kappa}
    _meta_path(args.out_csv).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if args.render_overlays:
        from .plotting import render_overlay
        gt_by = {}
        if gt is not None:
            for r in gt:
                gt_by.setdefault(r.frame + first, []).append((r.x, r.y))
        for f in frames[det.warmup:]:
            render_overlay(f.pixels, res.get(f.index, []), Path(args.render_overlays) / f"overlay_{f.index:05d}.png",
                           gt_by.get(f.index))
    n = sum(len(v) for v in res.values())
    print(f"frames={len(res)} detections={n} out={args.out_csv}")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _load_config(args)
    dets = read_detections(args.detections)
    meta = _read_meta(args.detections) or {}
    hs = read_homographies(args.homographies)
    base = meta.get("video_first_frame", 0)
    h_by_frame = {base + k: h for k, h in enumerate(hs)}
    if "first_frame" in meta:
        frames = range(meta["first_frame"], meta["last_frame"] + 1)
    elif dets:
        frames = range(min(dets), max(dets) + 1)
    else:
        frames = range(0)
    missing = [t for t in frames if t not in h_by_frame]
    if missing:
        raise ValueError(f"{args.homographies}: no homography for frames {missing[:5]}")
    shape = (meta["height"], meta["width"]) if "width" in meta else None
    if args.width and args.height:
        shape = (args.height, args.width)
    rows = run_tracker(_positions(dets), h_by_frame, frames, cfg.tracker, shape)
    write_tracks(args.out_csv, rows)
    print(f"frames={len(frames)} track_points={len(rows)} tracks={len({r[1] for r in rows})} out={args.out_csv}")
    return EXIT_OK


def _eval_frames(csv_path, keys) -> list[int]:
    meta = _read_meta(csv_path)
    if meta and "first_frame" in meta:
        return list(range(meta["first_frame"], meta["last_frame"] + 1))
    return sorted(keys)


def evaluate_files(mode: str, csv_path, gt_path) -> dict:
    gt = read_ground_truth(gt_path)
    if mode == "detection":
        dets = read_detections(csv_path)
        return evaluate_detections(_positions(dets), gt, _eval_frames(csv_path, dets))
    rows = read_tracks(csv_path)
    meta = _read_meta(csv_path)
    traj = filter_stationary(gt)
    if meta and "first_frame" in meta:
        lo, hi = meta["first_frame"], meta["last_frame"]
        traj = [r for r in traj if lo <= r.frame <= hi]
    scores = track_metrics([(f, i, x, y) for f, i, x, y, _ in rows], [(r.frame, r.id, r.x, r.y) for r in traj])
    return scores.as_dict()


def cmd_eval(args) -> int:
    report = evaluate_files(args.mode, args.csv, args.gt)
    text = format_report(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_report(args) -> int:
    """Metrics as delimited text plus figures in ``out_dir``."""
    from .plotting import plot_frame_scores, plot_track_timeline

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = read_ground_truth(args.gt)
    rows_out = []
    if args.detections:
        dets = read_detections(args.detections)
        frames = _eval_frames(args.detections, dets)
        pos = _positions(dets)
        moving = filter_stationary(gt)
        per_frame = []
        for f in frames:
            g = np.array([(r.x, r.y) for r in moving if r.frame == f]).reshape(-1, 2)
            m = match_detections(pos.get(f, np.zeros((0, 2))), g)
            p, r, f1 = prf(m.tp, m.fp, m.fn)
            per_frame.append({"frame": f, "tp": m.tp, "fp": m.fp, "fn": m.fn, "precision": p, "recall": r, "f1": f1})
        with open(out / "detection_frames.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(per_frame[0]) if per_frame else ["frame"])
            w.writeheader()
            for r in per_frame:
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
        plot_frame_scores(per_frame, out / "detection_frames.png")
        rows_out += [("detection", k, v) for k, v in evaluate_files("detection", args.detections, args.gt).items()]
    if args.tracks:
        plot_track_timeline(read_tracks(args.tracks), out / "track_timeline.png")
        rows_out += [("tracking", k, v) for k, v in evaluate_files("tracking", args.tracks, args.gt).items()]
    if not rows_out:
        raise UsageError("report needs --detections and/or --tracks")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "metric", "value"])
        for sec, k, v in rows_out:
            w.writerow([sec, k, f"{v:.6f}" if isinstance(v, float) else v])
    sys.stdout.write((out / "summary.csv").read_text())
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_pipeline_opts(p, detector=False):
    p.add_argument("--config", help="INI file with [pipeline], [full]/[aoi] and [tracker] sections")
    p.add_argument("--profile", choices=["full", "aoi"], help="parameter profile (default from config, else full)")
    p.add_argument("--registration", choices=["feature", "direct"], help="override the profile's registration mode")
    p.add_argument("--homographies", help="use this homography sidecar instead of registering frames")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    if detector:
        p.add_argument("--classifier", help="classification network weights (.wtz)")
        p.add_argument("--regressor", help="regression network weights (.wtz)")
        p.add_argument("--oracle-classifier", metavar="GT_CSV",
                       help="score windows from ground truth instead of the networks")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="wamitrack", description="Moving-vehicle detection and tracking for aerial video.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("spec", nargs="?", help="scene spec JSON")
    p.add_argument("out_dir")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["pgm", "png"], default="pgm")
    p.set_defaults(func=cmd_synth)

    for name, func, epochs in (("train-classifier", cmd_train_classifier, 12),
                               ("train-regressor", cmd_train_regressor, 20)):
        p = sub.add_parser(name, help=f"train the {name.split('-')[1]} network")
        p.add_argument("video_dir")
        p.add_argument("gt")
        p.add_argument("out_weights")
        p.add_argument("--epochs", type=int, default=epochs)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--lr", type=float, default=0.01)
        _add_pipeline_opts(p)
        p.set_defaults(func=func)

    p = sub.add_parser("calibrate", help="choose the classifier threshold on a validation video")
    p.add_argument("video_dir")
    p.add_argument("gt")
    p.add_argument("out_config")
    p.add_argument("--plot", help="write the threshold sweep figure here")
    _add_pipeline_opts(p, detector=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="detect moving vehicles")
    p.add_argument("video_dir")
    p.add_argument("out_csv")
    p.add_argument("--dump-intermediates", metavar="DIR", help="write background and mask PGMs")
    p.add_argument("--render-overlays", metavar="DIR", help="write detection overlay PNGs")
    _add_pipeline_opts(p, detector=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("track", help="run the GM-PHD tracker over detections")
    p.add_argument("detections")
    p.add_argument("homographies", help="sidecar with one homography per frame")
    p.add_argument("out_csv")
    p.add_argument("--config")
    p.add_argument("--profile", choices=["full", "aoi"])
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score detections or tracks against ground truth")
    p.add_argument("mode", choices=["detection", "tracking"])
    p.add_argument("csv")
    p.add_argument("gt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="metrics tables and figures")
    p.add_argument("gt")
    p.add_argument("out_dir")
    p.add_argument("--detections")
    p.add_argument("--tracks")
    p.set_defaults(func=cmd_report)
    return ap


def _fail(code: int, kind: str, message: str) -> int:
    print(f"error code={code} kind={kind} message={json.dumps(message)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (RegistrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    except (FileNotFoundError, ConfigError, SpecError, WeightsFormatError, ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))


if __name__ == "__main__":
    sys.exit(main())
