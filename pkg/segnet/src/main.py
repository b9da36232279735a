"""Command-line entry point for the keyphrase pipeline.

Subcommands: preprocess, train-selector, train-extgen, score-sentences,
predict, evaluate, stats.  Every command prints one summary line of
``key=value`` pairs and exits with a code naming the failure family.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .arraycore import ArrayError, set_precision
from .checkpoint import CheckpointError, read_checkpoint, restore_parameters
from .config import (
    ConfigError,
    ModelConfig,
    build_config,
    load_config,
    parse_overrides,
    save_config,
)
from .corpus import (
    SPECIAL_TOKENS,
    Document,
    IngestionError,
    Vocab,
    build_vocab,
    dataset_stats,
    load_documents,
    preprocess,
    read_raw_examples,
    select_tokens,
    write_documents,
)
from .decode import predict_corpus, read_predictions, write_predictions
from .evalkit import EvaluationError, evaluate, load_gold, parse_cutoffs, write_report
from .extgen import ExtGenModel
from .neural import ConfigurationError, CoverageStateError
from .objective import ExtGenTask, SelectorTask, TrainingAborted, train
from .selector import (
    SelectorModel,
    oracle_sentences,
    score_document,
    select_sentences,
    selection_report,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_CHECKPOINT = 6

CONFIG_ERROR = "CONFIG_ERROR"
DATA_ERROR = "DATA_ERROR"
NUMERIC_ERROR = "NUMERIC_ERROR"
CHECKPOINT_ERROR = "CHECKPOINT_ERROR"

DEFAULT_SEED = 13

# config fields a prediction run may change without retraining
DECODE_FIELDS = ("threshold", "extract_threshold", "max_decode_len")

# Checked in order; the first matching family decides the exit code.
ERROR_FAMILIES: Tuple[Tuple[Tuple[type, ...], int, str], ...] = (
    ((ConfigError, ConfigurationError), EXIT_CONFIG, CONFIG_ERROR),
    ((CheckpointError,), EXIT_CHECKPOINT, CHECKPOINT_ERROR),
    ((IngestionError, EvaluationError, OSError), EXIT_DATA, DATA_ERROR),
    ((TrainingAborted, ArrayError, CoverageStateError), EXIT_NUMERIC, NUMERIC_ERROR),
)


class CliError(Exception):
    """Raised for invalid flag combinations that argparse cannot express."""


# ── Shared helpers ──────────────────────────────────────────────────


def resolve_seed(flag: Optional[int]) -> int:
    """``--seed`` first, then ``SEGNET_SEED``, then the built-in default."""
    if flag is not None:
        return flag
    env = os.getenv("SEGNET_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"Invalid value for 'seed': SEGNET_SEED={env!r}", "seed") from exc
    return DEFAULT_SEED


def effective_config(args: argparse.Namespace) -> ModelConfig:
    config = load_config(args.config, args.set, profile=args.profile)
    seed = resolve_seed(args.seed)
    if seed != config.seed:
        config = config.replace(seed=seed)
    set_precision(config.precision)
    return config


def vocab_path_for(checkpoint: Path) -> Path:
    return Path(checkpoint).with_suffix(".vocab.txt")


def config_path_for(output: Path) -> Path:
    return Path(str(output) + ".config.txt")


def load_selector(path: Path) -> SelectorModel:
    checkpoint = read_checkpoint(path)
    config = build_config(checkpoint.config)
    model = SelectorModel(config, _load_vocab(path))
    restore_parameters(model, checkpoint)
    model.eval()
    return model


def load_extgen(path: Path) -> ExtGenModel:
    checkpoint = read_checkpoint(path)
    config = build_config(checkpoint.config)
    model = ExtGenModel(config, _load_vocab(path))
    restore_parameters(model, checkpoint)
    model.eval()
    return model


def decode_config(args: argparse.Namespace, model_config: ModelConfig, precision: str) -> ModelConfig:
    """The checkpoint's config with the prediction-time settings applied.

    Only ``DECODE_FIELDS`` can be overridden; the rest is fixed by training.
    """
    requested = parse_overrides(args.set)
    changes: Dict[str, object] = {k: v for k, v in requested.items() if k in DECODE_FIELDS}
    ignored = sorted(set(requested) - set(changes) - {"precision", "seed"})
    if ignored:
        logger.warning("Ignoring %s at prediction time (fixed by the checkpoint)", ", ".join(ignored))
    if args.threshold is not None:
        changes["threshold"] = args.threshold
    if args.max_len is not None:
        changes["max_decode_len"] = args.max_len
    changes["precision"] = precision
    return model_config.replace(**changes)


def oracle_input_length(doc: Document, max_src_len: int) -> int:
    """Tokens in the gold-salient training input before it is cut to ``max_src_len``."""
    if not doc.sentences:
        return 0
    return len(select_tokens(doc, oracle_sentences(doc, max_src_len) or [0]))


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _load_vocab(checkpoint: Path) -> Vocab:
    path = vocab_path_for(checkpoint)
    try:
        return Vocab.load(path)
    except IngestionError as exc:
        raise CheckpointError(f"No vocabulary next to {checkpoint}: {exc}") from exc


def summary(command: str, **fields: object) -> str:
    parts = [command] + [f"{key}={_fmt(value)}" for key, value in fields.items()]
    return " ".join(parts)


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _labels(bits: Sequence[int]) -> str:
    return " ".join(str(bit) for bit in bits)


# ── Commands ────────────────────────────────────────────────────────


def cmd_preprocess(args: argparse.Namespace) -> int:
    docs = [preprocess(raw) for raw in read_raw_examples(args.input)]
    for doc in docs:
        print(f"{doc.doc_id}\t{_labels(doc.salience_labels)}")
    count = write_documents(args.output, docs)
    vocab = build_vocab(docs, max(args.vocab_size - len(SPECIAL_TOKENS), 0))
    vocab.save(vocab_path_for(args.output))
    truncated = sum(1 for doc in docs if oracle_input_length(doc, args.max_src_len) > args.max_src_len)
    if truncated:
        logger.info("%d of %d training inputs exceed %d tokens", truncated, count, args.max_src_len)
    present = sum(len(doc.present_phrases) for doc in docs)
    absent = sum(len(doc.absent_phrases) for doc in docs)
    print(
        summary(
            "preprocess",
            documents=count,
            present=present,
            absent=absent,
            vocab=len(vocab),
            truncated=truncated,
            output=args.output,
        )
    )
    return EXIT_OK


def _training_data(args: argparse.Namespace) -> Tuple[List[Document], Optional[List[Document]]]:
    docs = load_documents(args.data)
    if not docs:
        raise IngestionError(f"{args.data}: no documents")
    validation = load_documents(args.valid) if args.valid else None
    return docs, validation


def _training_vocab(args: argparse.Namespace, config: ModelConfig, docs: List[Document]) -> Vocab:
    if args.vocab:
        return Vocab.load(args.vocab)
    return build_vocab(docs, max(config.vocab_size - len(SPECIAL_TOKENS), 0))


def _run_training(args: argparse.Namespace, kind: str) -> int:
    config = effective_config(args)
    docs, validation = _training_data(args)
    vocab = _training_vocab(args, config, docs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "selector":
        model = SelectorModel(config, vocab)
        task = SelectorTask(model, config.loss, budget=config.max_src_len)
    else:
        model = ExtGenModel(config, vocab)
        task = ExtGenTask(model, config.loss)
    logger.info(
        "Training %s on %d documents (%d parameters, vocabulary %d)",
        kind,
        len(docs),
        sum(p.size for p in model.parameters()),
        len(vocab),
    )
    result = train(
        model,
        docs,
        config.optim,
        task,
        validation,
        config=config,
        out_dir=out_dir,
        seed=config.seed,
        stop_below=args.stop_below,
    )
    vocab.save(vocab_path_for(result.checkpoint))
    save_config(config, config_path_for(result.checkpoint))
    last = result.history[-1]
    print(
        summary(
            f"train-{kind}",
            epochs=result.epochs,
            loss=last.loss,
            val=last.val_metric,
            checkpoint=result.checkpoint,
        )
    )
    return EXIT_OK


def cmd_train_selector(args: argparse.Namespace) -> int:
    return _run_training(args, "selector")


def cmd_train_extgen(args: argparse.Namespace) -> int:
    return _run_training(args, "extgen")


def cmd_score_sentences(args: argparse.Namespace) -> int:
    config = effective_config(args)
    model = load_selector(args.selector_ckpt)
    docs = load_documents(args.input)
    budget = args.budget if args.budget is not None else model.config.max_src_len
    threshold = args.threshold if args.threshold is not None else model.config.threshold
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    with output.open("w", encoding="utf-8") as handle:
        for doc in docs:
            probs = score_document(model, doc)
            chosen = select_sentences(doc, probs, budget, threshold) if probs else []
            record = {"doc_id": doc.doc_id, "probs": probs, "selected": chosen}
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    save_config(config, config_path_for(output))
    report = selection_report(model, docs, budget, threshold)
    print(
        summary(
            "score-sentences",
            documents=len(docs),
            model_f1=report["model"].f1,
            lead_f1=report["lead"].f1,
            output=output,
        )
    )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    config = effective_config(args)
    if args.selection == "model" and not args.selector_ckpt:
        raise CliError("--selector-ckpt is required with --selection model")
    selector = load_selector(args.selector_ckpt) if args.selector_ckpt else None
    extgen = load_extgen(args.extgen_ckpt)
    used = decode_config(args, extgen.config, config.precision)
    docs = load_documents(args.input)
    predictions = predict_corpus(
        docs,
        selector,
        extgen,
        used,
        threads=args.threads,
        selection=args.selection,
        budget=args.budget,
        filter_cross_duplicates=not args.keep_cross_duplicates,
    )
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    count = write_predictions(output, predictions)
    save_config(used, config_path_for(output))
    print(
        summary(
            "predict",
            documents=count,
            present=sum(len(p.present) for p in predictions),
            absent=sum(len(p.absent) for p in predictions),
            output=output,
        )
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    splits = ("present", "absent") if args.split == "both" else (args.split,)
    report = evaluate(
        list(read_predictions(args.pred)),
        load_gold(args.gold),
        splits=splits,
        cutoffs=parse_cutoffs(args.k),
        recall_at_most_k=args.recall_at_most_k,
        threads=args.threads,
    )
    print(report.format_table(include_details=args.details))
    if args.report:
        write_report(args.report, report, include_details=args.details)
    fields: Dict[str, object] = {}
    for name, split in report.splits.items():
        if not split.documents:
            continue
        for label, value in split.f1.items():
            key = f"F1@{label}" if len(splits) == 1 else f"{name}_F1@{label}"
            fields[key] = value
    fields["MAE"] = report.mae
    print(summary("evaluate", documents=report.documents, **fields))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    docs = load_documents(args.data)
    stats = dataset_stats(docs)
    print(json.dumps(stats.as_dict(), indent=2, sort_keys=True))
    print(
        summary(
            "stats",
            documents=stats.documents,
            present_pct=stats.present_pct,
            absent_pct=stats.absent_pct,
        )
    )
    return EXIT_OK


# ── Parser ──────────────────────────────────────────────────────────


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: $SEGNET_SEED or 13)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument(
        "--profile",
        default=os.getenv("SEGNET_PROFILE", "full"),
        help="built-in configuration profile (full or desk)",
    )
    common.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value"
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging level",
    )
    return common


def _selection_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--budget", type=int, default=None, help="word budget for selected sentences")
    parser.add_argument("--threshold", type=float, default=None, help="probability threshold")


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="segnet", description="Keyphrase extraction and generation")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("preprocess", parents=[common], help="label raw JSON-lines examples")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument(
        "--max-src-len", type=_positive_int, default=200, help="token limit of the training input"
    )
    p.add_argument(
        "--vocab-size", type=_positive_int, default=50000, help="vocabulary size including specials"
    )
    p.set_defaults(handler=cmd_preprocess)

    for name, handler in (("train-selector", cmd_train_selector), ("train-extgen", cmd_train_extgen)):
        p = commands.add_parser(name, parents=[common], help=f"train the {name[6:]} model")
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--valid", type=Path, default=None)
        p.add_argument("--vocab", type=Path, default=None, help="reuse an existing vocabulary")
        p.add_argument("--out", type=Path, default=Path("runs"))
        p.add_argument("--stop-below", type=float, default=None, help="stop once epoch loss is lower")
        p.set_defaults(handler=handler)

    p = commands.add_parser("score-sentences", parents=[common], help="sentence salience scores")
    p.add_argument("--selector-ckpt", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    _selection_options(p)
    p.set_defaults(handler=cmd_score_sentences)

    p = commands.add_parser("predict", parents=[common], help="predict keyphrases")
    p.add_argument("--selector-ckpt", type=Path, default=None)
    p.add_argument("--extgen-ckpt", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--selection", choices=["model", "lead", "oracle"], default="model")
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument(
        "--keep-cross-duplicates",
        action="store_true",
        help="keep absent phrases that repeat a present phrase",
    )
    _selection_options(p)
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("evaluate", parents=[common], help="score predictions against gold")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--split", choices=["present", "absent", "both"], default="both")
    p.add_argument("--k", default="m,5", help="comma separated cutoffs")
    p.add_argument("--recall-at-most-k", action="store_true", help="recall over min(|gold|, k)")
    p.add_argument("--details", action="store_true", help="per-document table")
    p.add_argument("--report", type=Path, default=None, help="write the report as JSON")
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("stats", parents=[common], help="corpus statistics")
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(handler=cmd_stats)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except CliError as exc:
        parser.print_usage(sys.stderr)
        print(f"segnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        for family, code, tag in ERROR_FAMILIES:
            if isinstance(exc, family):
                logger.error("[%s] %s", tag, exc)
                return code
        raise


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
