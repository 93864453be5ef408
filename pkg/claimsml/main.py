"""claimsml: Command Line

Flag parsing and error reporting only; the stages live in
``claimsml.services.pipeline``. Results go to stdout, logs to stderr, and a
failure prints one line ``error kind=<Class> exit=<n> message="<text>"``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from claimsml import __version__
from claimsml.config import MODEL_KINDS, load_pipeline_config
from claimsml.errors import ClaimsMLError
from claimsml.services import pipeline
from claimsml.services.export_service import to_json
from claimsml.utils import setup_env, setup_logging

logger = logging.getLogger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="pipeline config JSON (defaults built in)")
    common.add_argument("--seed", type=int, metavar="N", help="global seed; overrides every module seed")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads for numba and torch")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="bit-reproducible kernels (config value when omitted)")
    common.add_argument("--out", metavar="PATH", help="override the subcommand's output path")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="claimsml", description="Claims-based hospitalization prediction pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate synthetic pretraining and cohort corpora")
    sub.add_parser("build-vocab", parents=[common], help="build the token vocabulary")
    sub.add_parser("train-embeddings", parents=[common], help="train CBOW code embeddings")
    sub.add_parser("pretrain-mlm", parents=[common], help="pretrain the masked-LM encoder")
    train = sub.add_parser("train", parents=[common], help="train one classifier")
    train.add_argument("--model", required=True, choices=MODEL_KINDS)
    sub.add_parser("evaluate", parents=[common], help="test-set metrics for all four models")
    sub.add_parser("stability", parents=[common], help="nearest-embedding perturbation stability")
    explain = sub.add_parser("explain", parents=[common], help="LIME explanations for a prediction sample")
    explain.add_argument("--model", required=True, choices=MODEL_KINDS)
    nearest = sub.add_parser("nearest", parents=[common], help="closest same-kind codes for a token")
    nearest.add_argument("token", help="vocabulary token, e.g. DX_R062")
    nearest.add_argument("-k", type=int, default=1, help="number of neighbours")
    sub.add_parser("sanity", parents=[common], help="high-risk input sanity check")
    return parser


def run(args: argparse.Namespace) -> None:
    cfg = load_pipeline_config(args.config, args.seed, args.threads, args.deterministic)
    setup_env(cfg.threads, cfg.deterministic)
    command = args.command
    if command == "nearest":
        for surface, score in pipeline.nearest(cfg, args.token, args.k):
            print(f"{surface}\t{score:.6f}")
        return
    if command == "gen-data":
        result = pipeline.gen_data(cfg, args.out)
    elif command == "build-vocab":
        result = pipeline.build_vocabulary(cfg, args.out)
    elif command == "train-embeddings":
        result = pipeline.train_embeddings(cfg, args.out)
    elif command == "pretrain-mlm":
        result = pipeline.pretrain_encoder(cfg, args.out)
    elif command == "train":
        result = pipeline.train(cfg, args.model, args.out)
    elif command == "evaluate":
        result = pipeline.evaluate(cfg, args.out)
    elif command == "stability":
        result = pipeline.stability(cfg, args.out)
    elif command == "explain":
        result = pipeline.explain(cfg, args.model, args.out)
    else:
        result = pipeline.sanity(cfg, args.out)
    sys.stdout.write(to_json(result))


def _one_line(text: str) -> str:
    return " ".join(str(text).split()).replace('"', "'")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        run(args)
    except ClaimsMLError as e:
        print(f'error kind={type(e).__name__} exit={e.exit_code} message="{_one_line(e)}"', file=sys.stderr)
        return e.exit_code
    except (ValueError, KeyError) as e:
        print(f'error kind={type(e).__name__} exit=1 message="{_one_line(e)}"', file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
