"""Train / evaluate entry points for the fusion stage."""

from __future__ import annotations

import argparse
import json
import sys

from .evaluate import evaluate
from .model import FusionConfig
from .train import load_checkpoint, train


def cmd_train(args) -> int:
    config = None
    if args.views or args.image_size:
        config = FusionConfig(
            n_views=args.views or 8,
            image_size=args.image_size or 64,
            hidden=args.hidden,
            heads=args.heads,
            depth=args.depth,
            upsample_factor=args.upsample_factor,
        )
    result = train(
        args.data,
        config=config,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        alpha_perc=args.alpha_perc,
        seed=args.seed,
        checkpoint_dir=args.out,
        checkpoint_every=args.checkpoint_every,
        resume=args.resume,
        log_every=args.log_every,
    )
    summary = {
        "epochs": len(result.loss_history),
        "initial_loss": result.loss_history[0],
        "final_loss": result.loss_history[-1],
        "checkpoint": result.checkpoint_path,
    }
    print(json.dumps(summary))
    return 0


def cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    report = evaluate(model, args.data)
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosfusion",
        description="learned fusion of migration fragments into speed-of-sound images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the fusion network on a dataset directory")
    p.add_argument("--data", required=True, help="dataset root (slice directories)")
    p.add_argument("--out", default="checkpoints")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--alpha-perc", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--upsample-factor", type=int, default=1)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # surface everything as machine-readable JSON
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
