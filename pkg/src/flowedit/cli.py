"""Command-line entry point.

    flowedit collect-demos --task pointinsert --episodes 200 --out demos.cfrb
    flowedit sft --config configs/pointinsert.yaml --demos demos.cfrb
    flowedit train --config configs/pointinsert.yaml --demos demos.cfrb --sft-checkpoint runs/sft/sft_flow.cfk
    flowedit eval --config configs/pointinsert.yaml --checkpoint runs/train/checkpoint
    flowedit export-replay --in runs/train/checkpoint/replay.cfrb --out replay.jsonl
    flowedit plot --metrics runs/train/metrics.jsonl --out runs/train/plots
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .replay import export_jsonl
from .service.plots import emit_plots
from .service.session import SessionConfig, collect_demos, prepare_run_dir, run_eval, run_sft, run_train


def _load_config(args) -> SessionConfig:
    cfg = SessionConfig.from_yaml(args.config) if args.config else SessionConfig()
    if getattr(args, "task", None):
        cfg.task = args.task
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.steps = args.steps
    if getattr(args, "demos", None):
        cfg.demos = args.demos
    if getattr(args, "ui_port", None) is not None:
        cfg.ui_port = args.ui_port
    if getattr(args, "algo", None):
        cfg.algo = args.algo
    if getattr(args, "run_dir", None):
        cfg.run_dir = args.run_dir
    return cfg.validate()


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="session config YAML")
    p.add_argument("--task", type=str, default=None, choices=["pointinsert", "pickplace", "billiards"])
    p.add_argument("--mode", type=str, default=None, choices=["sync", "async"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="environment step budget")
    p.add_argument("--demos", type=str, default=None, help="demo container path")
    p.add_argument("--ui-port", type=int, default=None)
    p.add_argument("--algo", type=str, default=None, choices=["exft", "hgdagger", "rlpd", "dsrl", "sft"])
    p.add_argument("--run-dir", type=str, default=None)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowedit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect-demos", help="run the scripted expert and store trajectories")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("sft", help="imitation-pretrain the base policy on demos")
    _add_common(p)

    p = sub.add_parser("train", help="online RL with scripted or console interventions")
    _add_common(p)
    p.add_argument("--sft-checkpoint", type=str, default=None)

    p = sub.add_parser("eval", help="30-episode evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("export-replay", help="dump a replay/demo container to JSON lines")
    p.add_argument("--in", dest="in_path", type=str, required=True)
    p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("plot", help="emit SVG curves from a metrics file")
    p.add_argument("--metrics", type=str, required=True)
    p.add_argument("--out", type=str, required=True)

    args = parser.parse_args(argv)

    if args.command == "collect-demos":
        cfg = _load_config(args)
        info = collect_demos(cfg, episodes=args.episodes, out_path=args.out)
        print(json.dumps(info))
        return 0

    if args.command == "sft":
        cfg = _load_config(args)
        info = run_sft(cfg)
        print(json.dumps(info))
        return 0

    if args.command == "train":
        cfg = _load_config(args)
        ui_bus = None
        ui_server = None
        if cfg.ui_port:
            from .service.ui import UiBus, run_ui_server

            ui_bus = UiBus()
            static = Path(__file__).resolve().parents[2] / "frontend" / "dist"
            ui_server = run_ui_server(ui_bus, cfg.ui_port, static_dir=static if static.is_dir() else None)
            cfg.intervention = "ui"
        result = run_train(cfg, sft_checkpoint=args.sft_checkpoint, ui_bus=ui_bus)
        print(json.dumps(result.__dict__))
        if ui_server is not None:
            ui_server.should_exit = True
        return 0

    if args.command == "eval":
        cfg = _load_config(args)
        if args.episodes:
            cfg.eval_episodes = args.episodes
        info = run_eval(cfg, checkpoint_dir=args.checkpoint)
        print(json.dumps(info))
        return 0

    if args.command == "export-replay":
        n = export_jsonl(args.in_path, args.out)
        print(json.dumps({"records": n, "out": args.out}))
        return 0

    if args.command == "plot":
        paths = emit_plots(args.metrics, args.out)
        print(json.dumps({"plots": [str(p) for p in paths]}))
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
