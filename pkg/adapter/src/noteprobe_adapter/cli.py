"""Command line for the serving shim; flags mirror AdapterConfig."""

from __future__ import annotations

import argparse
import sys

from .server import AdapterConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noteprobe-adapter",
        description="Serve a transformer outcome-prediction checkpoint over the "
        "noteprobe wire protocol.",
    )
    parser.add_argument("--checkpoint", required=True,
                        help="checkpoint directory or hub identifier")
    parser.add_argument("--task", choices=("multilabel", "binary"), default="multilabel")
    parser.add_argument("--max-seq-len", dest="max_seq_len", type=int, default=512)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--port", type=int, default=8800)
    parser.add_argument("--max-batch", dest="max_batch", type=int, default=128)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = AdapterConfig(
            checkpoint=args.checkpoint,
            task=args.task,
            max_seq_len=args.max_seq_len,
            device=args.device,
            port=args.port,
            max_batch=args.max_batch,
        )
        serve(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
