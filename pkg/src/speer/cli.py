"""Subcommand front-end over the pipeline stages.

Every configuration field can come from a JSON config file (--config) or be
overridden by the flag of the same name. Exit codes: 0 success, 2 usage or
configuration error, 3 data error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .errors import ConfigError, DataFormatError, InvariantViolation, SpeerError
from .guide import MODES, NON_GUIDED

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

SUBCOMMANDS = (
    "ingest",
    "extract",
    "esg",
    "label",
    "train-select",
    "select",
    "pr-curve",
    "filter",
    "tag",
    "prompt",
    "oracle-target",
    "mockgen",
    "parse",
    "eval",
)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--corpus", help="admissions JSONL path")
    common.add_argument("--gazetteer", help="gazetteer TSV path")
    common.add_argument("--embeddings", help="precomputed embedding JSONL path")
    common.add_argument("--model", help="salience model JSON path")
    common.add_argument("--outputs", help="artifact output directory")
    common.add_argument("--synonym-threshold", type=float, dest="synonym_threshold")
    common.add_argument("--salience-threshold", type=float, dest="salience_threshold")
    common.add_argument("--budget", type=int)
    common.add_argument("--esg-cap", type=int, dest="esg_cap")
    common.add_argument("--seed", type=int)
    common.add_argument("--tokenizer", help="'whitespace' or 'vocab:<path>'")
    common.add_argument("--parse-mode", dest="parse_mode", choices=["strict", "lenient"])
    common.add_argument("--jobs", type=int, default=1, help="parallel workers per stage")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="speer", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    for name in ("ingest", "extract", "esg", "label", "train-select", "select", "pr-curve"):
        sub.add_parser(name, parents=[common])
    sub.choices["train-select"].add_argument("--epochs", type=int, default=None)
    sub.choices["train-select"].add_argument(
        "--learning-rate", type=float, dest="learning_rate", default=None
    )

    filter_parser = sub.add_parser("filter", parents=[common])
    filter_parser.add_argument("--scorer", choices=["oracle", "heuristic"], default="oracle")
    filter_parser.add_argument("--keep-headers", dest="keep_headers")
    filter_parser.add_argument("--drop-headers", dest="drop_headers")

    for name in ("tag", "oracle-target", "mockgen", "eval"):
        stage_parser = sub.add_parser(name, parents=[common])
        stage_parser.add_argument(
            "--salience-source",
            dest="salience_source",
            choices=["oracle", "predicted"],
            default="oracle",
        )
    sub.choices["eval"].add_argument("--with-rouge", dest="with_rouge", action="store_true")

    prompt_parser = sub.add_parser("prompt", parents=[common])
    prompt_parser.add_argument("--mode", choices=list(MODES), default=NON_GUIDED)
    prompt_parser.add_argument("--template", dest="template_path")
    prompt_parser.add_argument(
        "--salience-source",
        dest="salience_source",
        choices=["oracle", "predicted"],
        default="oracle",
    )
    prompt_parser.add_argument("--shuffle-guidance", dest="shuffle_guidance", action="store_true")

    parse_parser = sub.add_parser("parse", parents=[common])
    parse_parser.add_argument("--model-outputs", dest="model_outputs")
    return parser


def _build_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    config = (
        pipeline.PipelineConfig.from_file(args.config)
        if args.config
        else pipeline.PipelineConfig()
    )
    return config.with_overrides(
        corpus=args.corpus,
        gazetteer=args.gazetteer,
        embeddings=args.embeddings,
        model=args.model,
        outputs=args.outputs,
        synonym_threshold=args.synonym_threshold,
        salience_threshold=args.salience_threshold,
        budget=args.budget,
        esg_cap=args.esg_cap,
        seed=args.seed,
        tokenizer=args.tokenizer,
        parse_mode=args.parse_mode,
    )


def _dispatch(args: argparse.Namespace, config: pipeline.PipelineConfig) -> None:
    jobs = args.jobs
    name = args.subcommand
    if name == "ingest":
        pipeline.stage_ingest(config, jobs)
    elif name == "extract":
        pipeline.stage_extract(config, jobs)
    elif name == "esg":
        pipeline.stage_esg(config, jobs)
    elif name == "label":
        pipeline.stage_label(config, jobs)
    elif name == "train-select":
        kwargs = {}
        if args.epochs is not None:
            kwargs["epochs"] = args.epochs
        if args.learning_rate is not None:
            kwargs["learning_rate"] = args.learning_rate
        pipeline.stage_train_select(config, jobs, **kwargs)
    elif name == "select":
        pipeline.stage_select(config, jobs)
    elif name == "pr-curve":
        pipeline.stage_pr_curve(config, jobs)
    elif name == "filter":
        pipeline.stage_filter(
            config,
            jobs,
            scorer=args.scorer,
            keep_headers=args.keep_headers,
            drop_headers=args.drop_headers,
        )
    elif name == "tag":
        pipeline.stage_tag(config, jobs, salience_source=args.salience_source)
    elif name == "prompt":
        pipeline.stage_prompt(
            config,
            jobs,
            mode=args.mode,
            template_path=args.template_path,
            salience_source=args.salience_source,
            shuffle_guidance=args.shuffle_guidance,
        )
    elif name == "oracle-target":
        pipeline.stage_oracle_target(config, jobs, salience_source=args.salience_source)
    elif name == "mockgen":
        pipeline.stage_mockgen(config, jobs, salience_source=args.salience_source)
    elif name == "parse":
        pipeline.stage_parse(config, jobs, model_outputs=args.model_outputs)
    elif name == "eval":
        pipeline.stage_eval(
            config, jobs, salience_source=args.salience_source, with_rouge=args.with_rouge
        )
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown subcommand {name!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _build_config(args)
        _dispatch(args, config)
    except ConfigError as exc:
        print(f"speer {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"speer {args.subcommand}: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataFormatError, SpeerError) as exc:
        print(f"speer {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"speer {args.subcommand}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
