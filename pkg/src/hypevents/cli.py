"""Command line front door for the pipeline and the analysis tools.

Every subcommand reads one RunConfig (config file plus flag overrides)
and writes its artifacts under the output root, chosen by --out, then
the HYPEVENTS_OUT environment variable, then the config's out_dir.
Stage subcommands run once per configured seed.  Failures print one
machine-readable JSON record to stderr and exit nonzero; the exit code
states the failure family.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .agreement import AnnotationTable, cohen_kappa, krippendorff_alpha_ordinal
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, config_to_text, load_config
from .data import DataError
from .experiment import (
    StageOrderError,
    file_logger,
    run_experiment,
    stage_corpus,
    stage_evaluate,
    stage_generate,
    stage_predict,
    stage_select,
    stage_train_lm,
    stage_train_mtl,
    summary_table,
)

ENV_OUT = "HYPEVENTS_OUT"

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_STAGE_ORDER = 4
EXIT_CHECKPOINT = 5
EXIT_DATA = 6
EXIT_INTERNAL = 1

_COMMANDS = (
    ("gen-corpus", "write stories, instances, and the vocabulary"),
    ("train-lm", "train the infilling language model"),
    ("generate", "decode a hypothetical next event per hypothesis"),
    ("select", "pick hypotheses by similarity of their generated events"),
    ("train-mtl", "train the two-head classifier on generated events"),
    ("predict", "classify the eval split with a trained classifier"),
    ("evaluate", "score both the classifier and the unsupervised selector"),
    ("agreement", "inter-annotator agreement statistics over annotations"),
    ("experiment", "run every seed end to end and aggregate a report"),
)


def _emit_error(kind: str, message, **extra) -> None:
    record = {"error": kind, "message": str(message), **extra}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    # argparse prints free-form usage text; keep stderr machine-readable
    def error(self, message):
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="hypevents",
                     description="hypothetical-event pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser)
    sub.required = True
    for name, text in _COMMANDS:
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", metavar="PATH",
                       help="flat key = value run configuration file")
        p.add_argument("--out", metavar="DIR",
                       help=f"output root (overrides ${ENV_OUT} and the "
                            f"config's out_dir)")
        seeds = p.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, metavar="N",
                           help="run this single seed")
        seeds.add_argument("--seeds", type=int, metavar="N",
                           help="run seeds 1 through N")
        p.add_argument("--epochs", type=int, metavar="N",
                       help="training epochs for the stage being trained")
        p.add_argument("--lr", type=float, metavar="X",
                       help="learning rate for the stage being trained")
        p.add_argument("--batch", type=int, metavar="N",
                       help="batch size for the stage being trained")
        p.add_argument("--decode", choices=("greedy", "topk"),
                       help="decoding strategy")
        p.add_argument("--k", type=int, metavar="N",
                       help="candidate pool size for topk decoding")
        p.add_argument("--aux-label", dest="aux_label",
                       choices=("gold", "bertscore"),
                       help="auxiliary-task label source")
        p.add_argument("--provider", choices=("encoder", "lm", "static"),
                       help="embedding provider for similarity scoring")
    return parser


def _train_fields(command: str, suffix: str) -> tuple[str, ...]:
    # --epochs/--lr/--batch touch only the model the subcommand trains;
    # experiment (and everything else) treats them as run-wide
    if command == "train-lm":
        return (f"lm_{suffix}",)
    if command == "train-mtl":
        return (f"mtl_{suffix}",)
    return (f"lm_{suffix}", f"mtl_{suffix}")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.seeds is not None:
        overrides["seeds"] = tuple(range(1, args.seeds + 1))
    if args.epochs is not None:
        for name in _train_fields(args.command, "epochs"):
            overrides[name] = args.epochs
    if args.lr is not None:
        for name in _train_fields(args.command, "learning_rate"):
            overrides[name] = args.lr
    if args.batch is not None:
        for name in _train_fields(args.command, "batch_size"):
            overrides[name] = args.batch
    if args.decode is not None:
        overrides["decode_strategy"] = args.decode
    if args.k is not None:
        overrides["decode_k"] = args.k
    if args.aux_label is not None:
        overrides["aux_label_mode"] = args.aux_label
    if args.provider is not None:
        overrides["provider"] = args.provider
    if args.out is not None:
        overrides["out_dir"] = args.out
    elif os.environ.get(ENV_OUT):
        overrides["out_dir"] = os.environ[ENV_OUT]
    config = replace(config, **overrides)
    config.validate()
    return config


def _print(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _count_lines(path: Path) -> int:
    with path.open(encoding="utf-8") as handle:
        return sum(1 for line in handle if line.strip())


def _run_gen_corpus(config: RunConfig, log) -> None:
    for seed in config.seeds:
        out = stage_corpus(config, seed, config.out_dir, log)
        _print({"stage": "corpus", "seed": seed, "out": str(out),
                "stories": _count_lines(out / "stories.jsonl"),
                "instances": _count_lines(out / "instances.jsonl")})


def _run_train_lm(config: RunConfig, log) -> None:
    for seed in config.seeds:
        report = stage_train_lm(config, seed, config.out_dir, log)
        final = report.epoch_losses[-1] if report.epoch_losses else None
        _print({"stage": "train-lm", "seed": seed, "steps": report.steps,
                "final_loss": final,
                "skipped_overlong": report.skipped_overlong})


def _run_generate(config: RunConfig, log) -> None:
    for seed in config.seeds:
        filled = stage_generate(config, seed, config.out_dir, log)
        empty = sum((not i.gen1) + (not i.gen2) for i in filled)
        _print({"stage": "generate", "seed": seed,
                "events": 2 * len(filled), "empty": empty})


def _run_select(config: RunConfig, log) -> None:
    for seed in config.seeds:
        metrics = stage_select(config, seed, config.out_dir, log)
        _print({"stage": "select", "seed": seed, **metrics})


def _run_train_mtl(config: RunConfig, log) -> None:
    for seed in config.seeds:
        report = stage_train_mtl(config, seed, config.out_dir, log)
        final = report.epochs[-1].weight if report.epochs else 1.0
        _print({"stage": "train-mtl", "seed": seed, "steps": report.steps,
                "final_weight": final})


def _run_predict(config: RunConfig, log) -> None:
    for seed in config.seeds:
        metrics = stage_predict(config, seed, config.out_dir, log)
        _print({"stage": "predict", "seed": seed, **metrics})


def _run_evaluate(config: RunConfig, log) -> None:
    for seed in config.seeds:
        metrics = stage_evaluate(config, seed, config.out_dir, log)
        _print({"stage": "evaluate", "seed": seed, **metrics})


def _load_annotations(path: Path) -> dict[str, dict[tuple[str, str], str]]:
    """Aspect -> (item id, annotator id) -> value, as text."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise DataError(f"cannot read annotations {path}: {error}")
    by_aspect: dict[str, dict[tuple[str, str], str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as error:
            raise DataError(f"{path}:{lineno}: not a JSON record: {error}")
        missing = [k for k in ("item_id", "annotator_id", "aspect", "value")
                   if k not in record]
        if missing:
            raise DataError(f"{path}:{lineno}: record misses {missing}")
        aspect = str(record["aspect"])
        key = (str(record["item_id"]), str(record["annotator_id"]))
        cells = by_aspect.setdefault(aspect, {})
        if key in cells:
            raise DataError(f"{path}:{lineno}: duplicate annotation for "
                            f"item {key[0]!r} by annotator {key[1]!r} "
                            f"on aspect {aspect!r}")
        cells[key] = str(record["value"])
    if not by_aspect:
        raise DataError(f"{path}: no annotation records")
    return by_aspect


def _run_agreement(config: RunConfig, log) -> None:
    if config.annotations_path is None:
        raise DataError("annotations_path is not set; agreement reads "
                        "line-delimited records with item_id, annotator_id, "
                        "aspect, and value fields")
    by_aspect = _load_annotations(Path(config.annotations_path))
    order = tuple(part.strip() for part in config.agreement_order.split(",")
                  if part.strip()) or None
    out = Path(config.out_dir) / "agreement"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    records = []
    for aspect in sorted(by_aspect):
        cells = by_aspect[aspect]
        items = sorted({item for item, _ in cells})
        annotators = sorted({annotator for _, annotator in cells})
        values = [[cells.get((item, annotator)) for annotator in annotators]
                  for item in items]
        table = AnnotationTable(values, scale=config.agreement_scale,
                                order=order)
        reports = []
        if len(annotators) == 2:
            pairs = [(row[0], row[1]) for row in values
                     if row[0] is not None and row[1] is not None]
            if pairs:
                reports.append(cohen_kappa([p[0] for p in pairs],
                                           [p[1] for p in pairs]))
        if config.agreement_scale == "ordinal":
            reports.append(krippendorff_alpha_ordinal(table))
        if not reports:
            raise DataError(
                f"aspect {aspect!r}: no applicable statistic; kappa needs "
                f"exactly 2 annotators with complete pairs, alpha needs an "
                f"ordinal scale declaration")
        for report in reports:
            records.append({"aspect": aspect, **asdict(report)})
    with (out / "report.jsonl").open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    for record in records:
        _print(record)
    log(f"agreement: {len(records)} statistic(s) over "
        f"{len(by_aspect)} aspect(s)")


def _run_experiment(config: RunConfig) -> int:
    report = run_experiment(config, out_root=config.out_dir)
    sys.stdout.write(summary_table(report))
    if report.partial:
        _emit_error("partial", "one or more seeds failed; see report.jsonl",
                    failed_seeds=[f.seed for f in report.failures])
        return EXIT_INTERNAL
    return 0


_RUNNERS = {
    "gen-corpus": _run_gen_corpus,
    "train-lm": _run_train_lm,
    "generate": _run_generate,
    "select": _run_select,
    "train-mtl": _run_train_mtl,
    "predict": _run_predict,
    "evaluate": _run_evaluate,
    "agreement": _run_agreement,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "experiment":
            return _run_experiment(config)
        log = file_logger(Path(config.out_dir) / "log.txt")
        _RUNNERS[args.command](config, log)
        return 0
    except ConfigError as error:
        _emit_error("config", error)
        return EXIT_CONFIG
    except StageOrderError as error:
        _emit_error("stage-order", error, stage=error.stage)
        return EXIT_STAGE_ORDER
    except CheckpointError as error:
        _emit_error("checkpoint", error)
        return EXIT_CHECKPOINT
    except DataError as error:
        _emit_error("data", error)
        return EXIT_DATA
    except Exception as error:  # anything else is a bug, not bad input
        _emit_error("internal", f"{type(error).__name__}: {error}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
