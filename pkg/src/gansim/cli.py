"""Command-line entry points: dataset generation, training, evaluation,
reports, and the interactive play service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ACTIONS, COUNTERPARTS, LossWeights, TrainConfig, desk_config


def _cmd_gen_data(args) -> int:
    from .data import write_dataset
    from .env import generate_maze, rollout

    episodes = []
    for i in range(args.episodes):
        world = generate_maze(args.seed + i, args.grid_size)
        episodes.append(rollout(world, "random", args.length, seed=args.seed + i))
    write_dataset(episodes, args.out, ACTIONS, COUNTERPARTS)
    print(f"wrote {len(episodes)} episodes ({args.length} frames each) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .data import read_dataset
    from .training import Trainer

    episodes, header = read_dataset(args.data)
    config = desk_config(use_memory=not args.no_memory,
                         use_disentangled_renderer=not (args.simple_renderer or args.no_memory))
    epochs = args.epochs
    if epochs is None:
        # --iterations caps the run, so let the epoch loop supply enough steps
        epochs = 1_000_000 if args.iterations else 1
    tc = TrainConfig(sequence_length=args.seq_len, batch_size=args.batch_size,
                     epochs=epochs, lr=args.lr, seed=args.seed,
                     checkpoint_interval=args.checkpoint_interval,
                     max_iterations=args.iterations)
    out_dir = Path(args.out)
    trainer = Trainer(config, tc, weights=LossWeights(), out_dir=out_dir)
    log_path = out_dir / "metrics.jsonl"

    def report(metrics):
        if metrics.step % args.print_every == 0:
            print(f"step {metrics.step}: g={metrics.g.total:.3f} d={metrics.d.total:.3f}",
                  flush=True)

    history = trainer.train(episodes, log_path=log_path, on_step=report)
    print(f"trained {len(history)} steps on {len(episodes)} episodes; "
          f"checkpoints in {out_dir}")
    return 0


def _cmd_eval_cbh(args) -> int:
    from .evaluation import random_pair_baseline, run_cbh_model, run_cbh_real_env
    from .service import load_simulator

    if not (args.real_env or args.ckpt or args.baseline_data):
        print("nothing to evaluate: pass --ckpt, --real-env and/or --baseline-data",
              file=sys.stderr)
        return 2
    report = {"k_values": args.k, "trials": args.trials, "seed": args.seed, "runs": {}}
    sim = load_simulator(args.ckpt) if args.ckpt else None
    for k in args.k:
        entry = {}
        if args.real_env:
            entry["real_env"] = run_cbh_real_env(k, args.trials, args.seed,
                                                 grid_size=args.grid_size).to_dict()
        if sim is not None:
            entry["model"] = run_cbh_model(sim, k, args.trials, args.seed,
                                           grid_size=args.grid_size).to_dict()
        report["runs"][str(k)] = entry
        for name, r in entry.items():
            print(f"K={k} {name}: d = {r['mean']:.4f} +/- {r['std']:.4f} "
                  f"(quartiles {r['quartiles']})")
    if args.baseline_data:
        from .data import read_dataset

        episodes, _ = read_dataset(args.baseline_data)
        r = random_pair_baseline(episodes, trials=args.trials, seed=args.seed).to_dict()
        report["random_pair_baseline"] = r
        print(f"random-pair baseline: d = {r['mean']:.4f} +/- {r['std']:.4f}")
    Path(args.out).write_text(json.dumps(report, indent=2))
    print(f"report written to {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .data import read_dataset
    from .evaluation import disentanglement_report
    from .service import load_simulator

    sim = load_simulator(args.ckpt)
    episodes, _ = read_dataset(args.data)
    stats = disentanglement_report(sim, episodes[args.episode], args.out, seed=args.seed)
    print(json.dumps({k: v for k, v in stats.items() if k != "dynamic_mask_area"}, indent=2))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.ckpt, port=args.port, seed=args.seed, data_path=args.data,
          static_dir=args.static, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gansim",
                                     description="adversarially trained interactive game simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a maze-gridworld episode dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=64)
    p.add_argument("--grid-size", type=int, default=15)
    p.add_argument("--length", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train the simulator on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-interval", type=int, default=200)
    p.add_argument("--print-every", type=int, default=10)
    p.add_argument("--no-memory", action="store_true")
    p.add_argument("--simple-renderer", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval-cbh", help="come-back-home consistency evaluation")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--k", type=int, nargs="+", default=[5, 10, 20],
                   help="walk lengths to sweep")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=15)
    p.add_argument("--out", default="cbh_report.json")
    p.add_argument("--real-env", action="store_true",
                   help="also run the protocol against the real environment (d = 0)")
    p.add_argument("--baseline-data", default=None,
                   help="dataset for the random-pair baseline")
    p.set_defaults(fn=_cmd_eval_cbh)

    p = sub.add_parser("report", help="disentanglement report for one episode")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--episode", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("serve", help="interactive play service (WebSocket + static client)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default=None, help="dataset supplying initial frames")
    p.add_argument("--static", default=None, help="directory with the built browser client")
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
