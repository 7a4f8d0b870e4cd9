"""``memosort`` command line: track, train, synth, eval, selftest, config."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import formats, selftest
from .metrics import evaluate
from .mekf import MeKF
from .nnet import WeightFileError, load_weights, save_weights
from .pipeline import run_sequence
from .synthgen import REGIMES, NON_MARKOVIAN, ScenarioConfig, generate, occlusion_suite
from .trainer import TrainingDiverged, NonFiniteLoss, build_dataset, train

log = logging.getLogger("memosort")


def _load_cfg(args) -> formats.RunConfig:
    cfg = formats.load_config(args.config)
    if getattr(args, "seed", None) is not None and not os.environ.get(formats.SEED_ENV):
        cfg.seed = args.seed
    return cfg


def _filter(cfg: formats.RunConfig, weights_path) -> MeKF:
    path = weights_path or cfg.weights
    weights = None
    if path is None:
        log.warning("no weight file given: running the plain Kalman filter (no learned compensation)")
    elif not Path(path).exists():
        log.warning("WARNING: weight file %s not found: falling back to the plain Kalman filter", path)
    else:
        weights = load_weights(path, hidden=cfg.hidden)
    return MeKF(weights, cfg.noise, cfg.normalizer())


def cmd_track(args) -> int:
    cfg = _load_cfg(args)
    if args.frame_size:
        cfg.frame_width, cfg.frame_height = args.frame_size
    dets = formats.parse_detections(args.dets)
    kf = _filter(cfg, args.weights)
    last = max(dets) if dets else 0
    results = run_sequence(dets, cfg.tracker, kf, frames=range(1, last + 1))
    formats.write_results(results, args.out)
    print(f"{len({tid for _, tid in results})} tracks, {len(results)} boxes -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.scenarios:
        scenarios = [formats.load_scenario(d) for d in args.scenarios]
    else:
        scfg = ScenarioConfig(frames=args.frames, n_targets=args.targets,
                              regime_mix=((args.regime, 1.0),), noise_sigma=args.noise, miss_rate=args.miss_rate)
        scenarios = [generate(scfg, cfg.seed + k) for k in range(args.count)]
    tc = replace(cfg.train, seed=cfg.seed)
    data = build_dataset(scenarios, tc.window, tc.stride, tc.min_coverage)
    if len(data) == 0:
        print("error: no training windows (check coverage and window length)", file=sys.stderr)
        return 1
    print(f"{len(data)} windows, training {tc.epochs} epochs", file=sys.stderr)
    progress = None
    if args.verbose:
        def progress(e, tr, va):
            print(f"epoch {e}: train {tr:.6f} val {va:.6f}", file=sys.stderr)
    result = train(data, tc, noise=cfg.noise, vel_gain=cfg.vel_gain, hidden=cfg.hidden, progress=progress)
    save_weights(result.weights, args.out)
    log_path = args.log or str(Path(args.out).with_suffix(".loss.txt"))
    Path(log_path).write_text(result.loss_log(), encoding="utf-8")
    print(f"best epoch {result.best_epoch}: val {min(v for _, _, v in result.history):.6f}"
          f" (baseline {result.baseline_val:.6f}) -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    if args.suite:
        for scn in occlusion_suite():
            formats.save_scenario(scn, out / scn.name)
            print(out / scn.name)
        return 0
    mix = ((args.regime, 1.0),) if args.regime else ScenarioConfig().regime_mix
    scfg = ScenarioConfig(frames=args.frames, n_targets=args.targets, regime_mix=mix, noise_sigma=args.noise,
                          miss_rate=args.miss_rate, name=out.name)
    for k in range(args.count):
        folder = out if args.count == 1 else out / f"{out.name}_{k:03d}"
        formats.save_scenario(generate(scfg, cfg.seed + k), folder)
        print(folder)
    return 0


def cmd_eval(args) -> int:
    truth = formats.parse_tracks(args.truth)
    results = formats.parse_tracks(args.results)
    report = evaluate(truth, results, args.iou, name=args.name or Path(args.results).stem)
    print(report.summary())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest.run() else 1


def cmd_config(args) -> int:
    sys.stdout.write(_load_cfg(args).to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memosort", description="Memory-assisted Kalman tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config (unknown keys are rejected)")
        sp.add_argument("--seed", type=int, help=f"seed (overridden by ${formats.SEED_ENV})")

    def scenario_opts(sp):
        sp.add_argument("--frames", type=int, default=100)
        sp.add_argument("--targets", type=int, default=4)
        sp.add_argument("--noise", type=float, default=0.02, help="box noise std as a fraction of box size")
        sp.add_argument("--miss-rate", type=float, default=0.0)

    sp = sub.add_parser("track", help="track a detection file")
    common(sp)
    sp.add_argument("--dets", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", help="gate weight file (overrides the config)")
    sp.add_argument("--frame-size", type=float, nargs=2, metavar=("W", "H"))
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("train", help="train gate weights")
    common(sp)
    sp.add_argument("--out", required=True, help="weight file to write")
    sp.add_argument("--log", help="loss-curve file (default: <out>.loss.txt)")
    sp.add_argument("--scenarios", nargs="*", help="scenario folders; default: generate synthetic ones")
    sp.add_argument("--count", type=int, default=20, help="synthetic scenarios to generate")
    sp.add_argument("--regime", choices=NON_MARKOVIAN, default="figure_spin")
    scenario_opts(sp)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("synth", help="write synthetic scenario folders")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--suite", action="store_true", help="write the fixed occlusion suite")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--regime", choices=REGIMES)
    scenario_opts(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="score results against ground truth")
    sp.add_argument("--truth", required=True)
    sp.add_argument("--results", required=True)
    sp.add_argument("--iou", type=float, default=0.5, help="match threshold")
    sp.add_argument("--json", help="also write the report as JSON")
    sp.add_argument("--name")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("selftest", help="run the built-in consistency checks")
    sp.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("config", help="print the effective config as JSON")
    common(sp)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (formats.ConfigError, formats.MotFormatError, WeightFileError, OSError, ValueError,
            TrainingDiverged, NonFiniteLoss) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
