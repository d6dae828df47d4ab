"""Command-line entry point: ``safin {train,stylize,verify,wavelet-roundtrip,gen-corpus}``.

Exit status is 0 on success, 1 on runtime failure and 2 on bad arguments.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .data import CorpusError, generate_corpus, load_image, save_image
from .network import stylize
from .tensor import Tensor
from .trainer import CheckpointError, NonFiniteLossError, TrainConfig, load_checkpoint, train
from .verify import SUITES, grad_suite, run_suites, wavelet_suite
from .wavelet import wavelet_pool, wavelet_unpool

logger = logging.getLogger("safin")


def _existing_dir(parser: argparse.ArgumentParser, flag: str, value: str) -> str:
    if not Path(value).is_dir():
        parser.error(f"{flag}: directory not found: {value}")
    return value


def _existing_file(parser: argparse.ArgumentParser, flag: str, value: str) -> str:
    if not Path(value).is_file():
        parser.error(f"{flag}: file not found: {value}")
    return value


def cmd_train(args, parser) -> int:
    _existing_dir(parser, "--content", args.content)
    _existing_dir(parser, "--style", args.style)
    try:
        cfg = TrainConfig(
            steps=args.steps,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            lambda_s=args.lambda_s,
            seed=args.seed,
            image_size=args.image_size,
            content_dir=args.content,
            style_dir=args.style,
            checkpoint_path=args.out,
            attention_enabled=not args.no_attention,
        )
    except ValueError as exc:
        parser.error(str(exc))

    def log(step, report):
        print(report.tsv(step), flush=True)

    try:
        train(cfg, log=log)
    except (CorpusError, NonFiniteLossError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_stylize(args, parser) -> int:
    try:
        state = load_checkpoint(args.ckpt)
        size = args.size or state.cfg.image_size
        content = load_image(args.content, size)
        style = load_image(args.style, size)
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = stylize(Tensor(content[None]), Tensor(style[None]), state.net).data[0]
    try:
        save_image(args.out, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"reconstruction_error\t{float(np.abs(out - content).mean()):.6g}")
    return 0


def cmd_verify(args, parser) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if args.no_attention:
        results = {n: (grad_suite(attention=False) if n == "grad" else SUITES[n]()) for n in names}
    else:
        results = run_suites(names)
    ok = True
    for name, checks in results.items():
        suite_ok = all(c.passed for c in checks)
        ok &= suite_ok
        print(f"[{'PASS' if suite_ok else 'FAIL'}] suite {name}")
        for c in checks:
            print(f"  {c.line()}")
    return 0 if ok else 1


def cmd_wavelet_roundtrip(args, parser) -> int:
    if args.image:
        _existing_file(parser, "--image", args.image)
        try:
            x = load_image(args.image, args.size)[None]
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        err = float(np.abs(wavelet_unpool(wavelet_pool(Tensor(x))).data - x).max())
        print(f"max_roundtrip_error\t{err:.3e}")
        return 0 if err < 1e-12 else 1
    checks = wavelet_suite(args.seed)
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 1


def cmd_gen_corpus(args, parser) -> int:
    if args.count < 1 or args.size < 2:
        parser.error("--count must be >= 1 and --size >= 2")
    try:
        paths = generate_corpus(args.out, args.count, args.size, args.seed)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train decoder and SAFIN weights")
    p.add_argument("--content", required=True, metavar="DIR")
    p.add_argument("--style", required=True, metavar="DIR")
    p.add_argument("--steps", required=True, type=int)
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--lambda-s", type=float, default=10.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--no-attention", action="store_true", help="FIN ablation: no self-attention")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stylize", help="stylize one content image with one style image")
    p.add_argument("--content", required=True, metavar="IMG")
    p.add_argument("--style", required=True, metavar="IMG")
    p.add_argument("--ckpt", required=True, metavar="CKPT")
    p.add_argument("--out", required=True, metavar="IMG")
    p.add_argument("--size", type=int, default=None, help="working size (default: checkpoint's)")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("verify", help="run invariant suites")
    p.add_argument("--suite", default="all", choices=["all", *SUITES])
    p.add_argument("--no-attention", action="store_true", help="gradient suite on the FIN ablation")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("wavelet-roundtrip", help="check pool/unpool perfect reconstruction")
    p.add_argument("--image", default=None, metavar="IMG")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_wavelet_roundtrip)

    p = sub.add_parser("gen-corpus", help="write the procedural training corpus")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
