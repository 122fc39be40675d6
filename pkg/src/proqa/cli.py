"""Command-line entry points.

Exit codes: 0 success, 1 validation problem (bad config, unknown task,
missing input), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import (
    CapacityError,
    ConfigError,
    FileFormatError,
    ProqaError,
    ResolutionError,
    SamplingError,
    SchemaError,
    VocabError,
)
from .harness import (
    RunConfig,
    cmd_continual,
    cmd_eval,
    cmd_fewshot,
    cmd_finetune,
    cmd_pretrain,
    cmd_report,
    cmd_synthesize,
    cmd_zeroshot,
)

VALIDATION_ERRORS = (
    ConfigError,
    SchemaError,
    VocabError,
    SamplingError,
    CapacityError,
    ResolutionError,
    FileFormatError,
    FileNotFoundError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proqa")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("synthesize", help="build one format's synthetic corpus")
    common(p)
    p.add_argument("--format", required=True, dest="fmt",
                   choices=["extractive", "abstractive", "multichoice", "yesno"])
    p.add_argument("--generator-ckpt", default=None)
    p.add_argument("--filter-ckpt", default=None)

    p = sub.add_parser("pretrain", help="joint multi-format pre-training")
    common(p)

    p = sub.add_parser("finetune", help="full-data adaptation to one task")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--bank", default=None)

    p = sub.add_parser("fewshot", help="k-instance adaptation to one task")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--bank", default=None)

    p = sub.add_parser("zeroshot", help="evaluation with format-level prompt fallback")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--bank", default=None)

    p = sub.add_parser("continual", help="two-task sequence with prompt restoration")
    common(p)
    p.add_argument("--task-a", required=True)
    p.add_argument("--task-b", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task's dev split")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bank", required=True)

    p = sub.add_parser("report", help="aggregate eval/continual/curve outputs")
    common(p)
    p.add_argument("--inputs", nargs="+", required=True)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    os.makedirs(args.out, exist_ok=True)

    if args.command == "synthesize":
        corpus, stats = cmd_synthesize(
            cfg, args.out, args.fmt, gen_ckpt=args.generator_ckpt, filter_ckpt=args.filter_ckpt
        )
        print(f"wrote {corpus} and {stats}")
    elif args.command == "pretrain":
        ckpt, bank, losses = cmd_pretrain(cfg, args.out)
        print(f"wrote {ckpt} and {bank} (final loss {losses[-1]:.4f})")
    elif args.command == "finetune":
        ckpt, bank, report = cmd_finetune(cfg, args.out, args.task, args.ckpt, args.bank)
        print(f"{args.task} {report.metric}={report.value:.4f} -> {ckpt}")
    elif args.command == "fewshot":
        ckpt, bank, report = cmd_fewshot(
            cfg, args.out, args.task, k=args.k, ckpt_path=args.ckpt, bank_path=args.bank
        )
        print(f"{args.task} {report.metric}={report.value:.4f} -> {ckpt}")
    elif args.command == "zeroshot":
        report = cmd_zeroshot(cfg, args.out, args.task, args.ckpt, args.bank)
        print(f"{args.task} {report.metric}={report.value:.4f} ({report.n_examples} examples)")
    elif args.command == "continual":
        report = cmd_continual(cfg, args.out, args.task_a, args.task_b)
        d = report.to_dict()
        print(
            f"{args.task_a}->{args.task_b}: drop_direct={d['drop_direct_pct']}% "
            f"drop_restored={d['drop_restored_pct']}%"
        )
    elif args.command == "eval":
        report = cmd_eval(cfg, args.out, args.task, args.ckpt, args.bank)
        print(f"{args.task} {report.metric}={report.value:.4f}")
    elif args.command == "report":
        outputs = cmd_report(args.inputs, args.out)
        for name, path in outputs.items():
            print(f"wrote {path}")
    return 0


def main() -> None:
    try:
        sys.exit(run())
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
    except ProqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)


if __name__ == "__main__":
    main()
