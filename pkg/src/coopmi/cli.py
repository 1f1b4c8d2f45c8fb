"""Command line entry point: ``coopmi {pretrain,train,evaluate,render,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import MODES, ConfigError, resolve_config


def _config(args, **overrides):
    return resolve_config(args.config, **overrides)


def cmd_pretrain(args):
    from .env.commons import resolve_map
    from .sensors import pretrain_sensors

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sensors, report = pretrain_sensors(resolve_map(args.map), args.steps, args.agents, args.seed,
                                       epochs=args.epochs, spectral_radius_target=args.spectral_radius)
    sensors.save(out / "sensors.bin")
    summary = {
        "frames": report["frames"],
        "val_accuracy_x": [h.val_accuracy for h in report["history_x"]],
        "val_accuracy_y": [h.val_accuracy for h in report["history_y"]],
    }
    (out / "pretrain.json").write_text(json.dumps(summary, indent=1))
    print(f"sensors written to {out / 'sensors.bin'}")
    print(f"E_x validation accuracy per epoch: {[round(a, 4) for a in summary['val_accuracy_x']]}")
    print(f"E_y validation accuracy per epoch: {[round(a, 4) for a in summary['val_accuracy_y']]}")
    return 0


def cmd_train(args):
    from .sensors import Sensors
    from .trainer import Experiment

    out = Path(args.out)
    if args.resume:
        exp = Experiment.load(args.resume)
    else:
        cfg = _config(args, mode=args.mode, seed=args.seed, t_max=args.t_max)
        sensors = Sensors.load(args.sensors) if args.sensors else None
        exp = Experiment(cfg, sensors=sensors, cache_dir=args.cache)
    out.mkdir(parents=True, exist_ok=True)
    exp.cfg.save(out / "config.cfg")
    exp.run(out)
    last = exp.records[-1] if exp.records else None
    print(f"{exp.iteration} iterations, metrics in {out / 'metrics.csv'}")
    if last is not None:
        print(f"final: U={last.U:.3f} E={last.E:.3f} P={last.P:.3f} S={last.S:.0f} psi={last.psi:.4f}")
    return 0


def cmd_evaluate(args):
    from .trainer import Experiment

    exp = Experiment.load(args.checkpoint)
    rec = exp.evaluate(args.steps)
    row = {k: v for k, v in rec.row().items() if not k.startswith("I_") or k in ("I_raw", "I_shifted")}
    for k, v in row.items():
        print(f"{k:>12s}  {v}")
    return 0


def cmd_render(args):
    from .env import render
    from .trainer import Experiment

    exp = Experiment.load(args.checkpoint)
    out = Path(args.out) if args.out else None
    frames = []

    def grab(state, rewards, log):
        k = len(frames)
        if args.format == "ansi":
            frames.append(render.to_ansi(state))
        else:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"frame_{k:05d}.png"
            render.save_png(state, path)
            frames.append(str(path))

    if args.format == "png" and out is None:
        raise SystemExit("--out is required for png frames")
    exp.evaluate(args.frames, on_step=grab)
    if args.format == "ansi":
        sep = "\n" + "-" * 20 + "\n"
        text = sep.join(frames)
        if out is not None:
            out.write_text(text)
        else:
            print(text)
    else:
        print(f"{len(frames)} frames written to {out}")
    return 0


def cmd_sweep(args):
    from .sweep import parse_seeds, run_sweep

    cfg = _config(args, t_max=args.t_max)
    modes = MODES if args.mode == "both" else (args.mode,)
    summary, runs = run_sweep(cfg, parse_seeds(args.seeds), modes, args.out, jobs=args.jobs,
                              cache_dir=args.cache, plots=not args.no_plots)
    last = len(summary.iterations) - 1
    for mode in modes:
        vals = ", ".join(f"{k}={summary.mean[(mode, k)][last]:.4g}" for k in ("U", "E", "P", "S", "psi", "I_shifted"))
        print(f"{mode:>8s} final: {vals}")
    print(f"sweep summary in {Path(args.out) / 'sweep.csv'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="coopmi", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="sample frames and train the sensors")
    s.add_argument("--map", default="desk_15x9", help="built-in map name or map file")
    s.add_argument("--steps", type=int, default=20000, help="environment steps with random agents")
    s.add_argument("--agents", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--spectral-radius", type=float, default=0.95)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="run one experiment")
    s.add_argument("--config", default="desk", help="config file or built-in name (desk, full, smoke)")
    s.add_argument("--mode", choices=MODES, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--t-max", type=int, default=None, help="override t_max")
    s.add_argument("--sensors", default=None, help="pretrained sensors file (default: cached pretraining)")
    s.add_argument("--cache", default=None, help="sensor cache directory")
    s.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="run a checkpoint without learning and print the indices")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--steps", type=int, default=1000)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render", help="render frames of a checkpoint's policies")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--format", choices=("ansi", "png"), default="ansi")
    s.add_argument("--out", default=None, help="text file (ansi) or directory (png)")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("sweep", help="paired runs over seeds, with CSV and plots")
    s.add_argument("--config", default="desk")
    s.add_argument("--seeds", default="1..5", help='e.g. "1..5" or "1,3,7"')
    s.add_argument("--mode", choices=MODES + ("both",), default="both")
    s.add_argument("--t-max", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1, help="parallel processes")
    s.add_argument("--cache", default=None, help="sensor cache directory")
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    np.set_printoptions(precision=4, suppress=True)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
