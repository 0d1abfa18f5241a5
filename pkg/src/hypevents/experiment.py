"""Seeded pipeline runner: corpus, LM training, generation, MTL, evaluation.

Every stage reads its inputs from files written by the previous stage and
writes its own artifacts, so stages are independently runnable and a seed
can be resumed where it stopped.  Each artifact directory carries the run
configuration that produced it.  All stage outputs are pure functions of
config and seed; wall-clock timestamps appear only in log.txt.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .checkpoint import load_lm, load_mtl, save_checkpoint
from .config import RunConfig, config_to_text
from .data import (AbductiveInstance, DataError, Vocab, load_instances,
                   load_stories, write_instances, write_stories)
from .infill import LmModel, LmTrainReport, generate_for_instances, train_lm
from .mtl import (MtlEpoch, MtlModel, MtlTrainReport, evaluate_mtl,
                  predict_batch, train_mtl)
from .simscore import (ContextualEmbeddings, StaticEmbeddings,
                       evaluate_selector, select_unsupervised)
from .synthetic import gen_synthetic

STAGES = ("corpus", "train-lm", "generate", "train-mtl", "evaluate")

# Table 4 numbers for the summary report; accuracies in percent.  These
# come from runs with pretrained GPT-2/BERT on the real corpora and are
# printed beside our results purely for orientation.
PAPER_REFERENCE = {
    "label": "paper reference (not reproduced)",
    "unsupervised_dev": 62.27,
    "unsupervised_test": 60.08,
    "mtl_dev": 72.9,
    "mtl_dev_spread": 0.5,
    "mtl_test": 72.2,
    "mtl_test_spread": 0.6,
    "majority_test": 50.8,
    "bert_large_dev": 69.1,
    "bert_large_test": 68.9,
    "human_test": 91.4,
}


class StageOrderError(Exception):
    """A stage was asked to run before the stage it depends on."""

    def __init__(self, message: str, stage: str):
        super().__init__(message)
        self.stage = stage


def _silent(message: str) -> None:
    pass


def file_logger(path) -> Callable[[str], None]:
    """Appends timestamped lines; the only place wall-clock time is written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def log(message: str) -> None:
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        with path.open("a", encoding="utf-8") as handle:
            handle.write(f"{stamp} {message}\n")

    return log


def seed_dir(out_root, seed: int) -> Path:
    return Path(out_root) / f"seed-{seed}"


def _prepare_dir(path: Path, config: RunConfig) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    return path


def _require(path: Path, stage: str, what: str) -> Path:
    if not path.exists():
        raise StageOrderError(
            f"missing {what} at {path}: run the {stage} stage first", stage)
    return path


def split_instances(items: Sequence, config: RunConfig) -> tuple[list, list, list]:
    """Front-of-corpus split into train / dev / test, in corpus order."""
    total = config.n_train + config.n_dev + config.n_test
    if len(items) < total:
        raise DataError(f"need {total} records for the requested splits, "
                        f"corpus has {len(items)}")
    train = list(items[:config.n_train])
    dev = list(items[config.n_train:config.n_train + config.n_dev])
    test = list(items[config.n_train + config.n_dev:total])
    return train, dev, test


# ---------------------------------------------------------------------------
# stages; each writes artifacts under <out_root>/seed-<seed>/<stage>/


def stage_corpus(config: RunConfig, seed: int, out_root,
                 log: Callable[[str], None] = _silent) -> Path:
    """Write stories, instances, and the train-split vocabulary."""
    out = _prepare_dir(seed_dir(out_root, seed) / "corpus", config)
    if config.corpus_path is None:
        stories, instances = gen_synthetic(config.synthetic_spec(seed))
    else:
        stories = load_stories(config.corpus_path)
        instances = load_instances(config.instances_path)
    train_stories, _, _ = split_instances(stories, config)
    split_instances(instances, config)  # fail now if the splits cannot fit
    vocab = Vocab.build((text for story in train_stories
                         for text in story.all_texts()), config.min_count)
    write_stories(out / "stories.jsonl", stories)
    write_instances(out / "instances.jsonl", instances)
    vocab.save(out / "vocab.txt")
    log(f"seed {seed} corpus: {len(stories)} stories, "
        f"{len(instances)} instances, vocab {len(vocab)}")
    return out


def stage_train_lm(config: RunConfig, seed: int, out_root,
                   log: Callable[[str], None] = _silent) -> LmTrainReport:
    """Train the infilling LM on the train-split stories."""
    corpus = seed_dir(out_root, seed) / "corpus"
    _require(corpus / "stories.jsonl", "corpus", "the story corpus")
    stories = load_stories(corpus / "stories.jsonl")
    vocab = Vocab.load(corpus / "vocab.txt")
    train_stories, _, _ = split_instances(stories, config)
    out = _prepare_dir(seed_dir(out_root, seed) / "lm", config)
    model = LmModel(config.lm_config(seed), vocab)
    report = train_lm(model, train_stories, model.config, log=log)
    save_checkpoint(model, out / "lm.ckpt")
    with (out / "history.jsonl").open("w", encoding="utf-8") as handle:
        for epoch, loss in enumerate(report.epoch_losses, start=1):
            handle.write(json.dumps({"epoch": epoch, "loss": loss},
                                    sort_keys=True) + "\n")
        handle.write(json.dumps({"skipped_overlong": report.skipped_overlong,
                                 "steps": report.steps}, sort_keys=True) + "\n")
    log(f"seed {seed} train-lm: {report.steps} steps, final loss "
        f"{report.epoch_losses[-1]:.4f}" if report.epoch_losses else
        f"seed {seed} train-lm: 0 epochs")
    return report


def stage_generate(config: RunConfig, seed: int, out_root,
                   log: Callable[[str], None] = _silent) -> list[AbductiveInstance]:
    """Decode a hypothetical next event per hypothesis for every split
    instance, replacing any generations already present."""
    base = seed_dir(out_root, seed)
    _require(base / "lm" / "lm.ckpt", "train-lm", "the LM checkpoint")
    _require(base / "corpus" / "instances.jsonl", "corpus", "the instances")
    model = load_lm(base / "lm" / "lm.ckpt")
    instances = load_instances(base / "corpus" / "instances.jsonl")
    train, dev, test = split_instances(instances, config)
    used = train + dev + test
    filled = generate_for_instances(model, used, config.decode_spec(seed))
    out = _prepare_dir(base / "gen", config)
    write_instances(out / "instances.jsonl", filled)
    n_empty = sum((not inst.gen1) + (not inst.gen2) for inst in filled)
    log(f"seed {seed} generate: {2 * len(filled)} events, {n_empty} empty")
    return filled


def stage_train_mtl(config: RunConfig, seed: int, out_root,
                    log: Callable[[str], None] = _silent) -> MtlTrainReport:
    """Train the two-head classifier on train-split generated instances."""
    base = seed_dir(out_root, seed)
    _require(base / "gen" / "instances.jsonl", "generate",
             "the generated events")
    _require(base / "corpus" / "vocab.txt", "corpus", "the vocabulary")
    instances = load_instances(base / "gen" / "instances.jsonl")
    vocab = Vocab.load(base / "corpus" / "vocab.txt")
    train, dev, test = split_instances(instances, config)
    out = _prepare_dir(base / "mtl", config)
    model = MtlModel(config.mtl_config(seed), vocab)
    provider = None
    if config.aux_label_mode == "bertscore" and config.provider != "encoder":
        provider = _make_provider(config, seed, base, mtl_model=None)
    report = train_mtl(model, train, model.config,
                       dev_instances=dev or None, provider=provider, log=log)
    save_checkpoint(model, out / "mtl.ckpt")
    with (out / "history.jsonl").open("w", encoding="utf-8") as handle:
        for epoch in report.epochs:
            handle.write(json.dumps(asdict(epoch), sort_keys=True) + "\n")
        handle.write(json.dumps({"steps": report.steps}, sort_keys=True) + "\n")
    log(f"seed {seed} train-mtl: {report.steps} steps, final weight "
        f"{report.epochs[-1].weight:.4f}" if report.epochs else
        f"seed {seed} train-mtl: 0 epochs")
    return report


def _make_provider(config: RunConfig, seed: int, base: Path,
                   mtl_model: Optional[MtlModel]):
    if config.provider == "static":
        return StaticEmbeddings(config.provider_dim, seed)
    if config.provider == "lm":
        path = _require(base / "lm" / "lm.ckpt", "train-lm",
                        "the LM checkpoint")
        return ContextualEmbeddings(load_lm(path))
    if mtl_model is None:
        path = _require(base / "mtl" / "mtl.ckpt", "train-mtl",
                        "the classifier checkpoint")
        mtl_model = load_mtl(path)
    return ContextualEmbeddings(mtl_model)


def _eval_split(config: RunConfig, instances) -> list[AbductiveInstance]:
    train, dev, test = split_instances(instances, config)
    eval_set = dev if config.eval_split == "dev" else test
    if not eval_set:
        raise DataError(f"eval split {config.eval_split!r} is empty")
    return eval_set


def stage_select(config: RunConfig, seed: int, out_root,
                 log: Callable[[str], None] = _silent) -> dict:
    """Unsupervised selection over the eval split's generated events."""
    base = seed_dir(out_root, seed)
    _require(base / "gen" / "instances.jsonl", "generate",
             "the generated events")
    instances = load_instances(base / "gen" / "instances.jsonl")
    eval_set = _eval_split(config, instances)
    provider = _make_provider(config, seed, base, mtl_model=None)
    labeled = all(inst.label is not None for inst in eval_set)
    if labeled:
        evaluation = evaluate_selector(eval_set, provider)
        records = evaluation.records
    else:
        records = [select_unsupervised(inst, provider) for inst in eval_set]
    out = _prepare_dir(base / "select", config)
    with (out / "selection.jsonl").open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    metrics = {
        "split": config.eval_split,
        "n": len(records),
        "unsupervised_accuracy": evaluation.accuracy if labeled else None,
        "unsupervised_n_ties": sum(1 for r in records if r.tie),
        "unsupervised_n_abstained": sum(1 for r in records if r.abstained),
    }
    (out / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    log(f"seed {seed} select: {len(records)} instances, accuracy "
        f"{metrics['unsupervised_accuracy']}")
    return metrics


def stage_predict(config: RunConfig, seed: int, out_root,
                  log: Callable[[str], None] = _silent) -> dict:
    """Classifier predictions over the eval split's generated events."""
    base = seed_dir(out_root, seed)
    _require(base / "gen" / "instances.jsonl", "generate",
             "the generated events")
    _require(base / "mtl" / "mtl.ckpt", "train-mtl",
             "the classifier checkpoint")
    instances = load_instances(base / "gen" / "instances.jsonl")
    eval_set = _eval_split(config, instances)
    model = load_mtl(base / "mtl" / "mtl.ckpt")
    records = predict_batch(model, eval_set)
    labeled = all(r.gold is not None for r in records)
    out = _prepare_dir(base / "predict", config)
    with (out / "predictions.jsonl").open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    metrics = {
        "split": config.eval_split,
        "n": len(records),
        "mtl_accuracy": (sum(1 for r in records if r.correct) / len(records)
                         if labeled else None),
        "mtl_n_ties": sum(1 for r in records if r.tie),
    }
    (out / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    log(f"seed {seed} predict: {len(records)} instances, accuracy "
        f"{metrics['mtl_accuracy']}")
    return metrics


def stage_evaluate(config: RunConfig, seed: int, out_root,
                   log: Callable[[str], None] = _silent) -> dict:
    """Score the classifier and the unsupervised selector on the eval split."""
    base = seed_dir(out_root, seed)
    _require(base / "gen" / "instances.jsonl", "generate",
             "the generated events")
    _require(base / "mtl" / "mtl.ckpt", "train-mtl",
             "the classifier checkpoint")
    instances = load_instances(base / "gen" / "instances.jsonl")
    eval_set = _eval_split(config, instances)
    model = load_mtl(base / "mtl" / "mtl.ckpt")
    provider = _make_provider(config, seed, base, mtl_model=model)

    selector = evaluate_selector(eval_set, provider)
    classifier = evaluate_mtl(model, eval_set)
    out = _prepare_dir(base / "eval", config)
    with (out / "selection.jsonl").open("w", encoding="utf-8") as handle:
        for record in selector.records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    with (out / "predictions.jsonl").open("w", encoding="utf-8") as handle:
        for record in classifier.records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    metrics = {
        "split": config.eval_split,
        "n": classifier.n,
        "mtl_accuracy": classifier.accuracy,
        "mtl_n_correct": classifier.n_correct,
        "mtl_n_ties": classifier.n_ties,
        "unsupervised_accuracy": selector.accuracy,
        "unsupervised_n_correct": selector.n_correct,
        "unsupervised_n_ties": selector.n_ties,
        "unsupervised_n_abstained": selector.n_abstained,
        "unsupervised_n_degenerate": selector.n_degenerate,
    }
    (out / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    log(f"seed {seed} evaluate: mtl {classifier.accuracy:.4f}, "
        f"unsupervised {selector.accuracy:.4f} on {classifier.n} "
        f"{config.eval_split} instances")
    return metrics


# ---------------------------------------------------------------------------
# the 5-seed protocol


@dataclass(frozen=True)
class SeedResult:
    seed: int
    lm_epoch_losses: tuple[float, ...]
    lm_skipped_overlong: int
    mtl_epochs: tuple[MtlEpoch, ...]
    metrics: dict

    @property
    def weight_trajectory(self) -> tuple[float, ...]:
        return tuple(e.weight for e in self.mtl_epochs)

    @property
    def mtl_accuracy(self) -> float:
        return self.metrics["mtl_accuracy"]

    @property
    def unsupervised_accuracy(self) -> float:
        return self.metrics["unsupervised_accuracy"]

    def to_dict(self) -> dict:
        return {
            "record": "seed",
            "seed": self.seed,
            "lm_epoch_losses": list(self.lm_epoch_losses),
            "lm_skipped_overlong": self.lm_skipped_overlong,
            "mtl_epochs": [asdict(e) for e in self.mtl_epochs],
            "weight_trajectory": list(self.weight_trajectory),
            **self.metrics,
        }


@dataclass(frozen=True)
class SeedFailure:
    seed: int
    stage: str
    error: str

    def to_dict(self) -> dict:
        return {"record": "failure", "seed": self.seed, "stage": self.stage,
                "error": self.error}


def _mean(values: Sequence[float]) -> Optional[float]:
    return statistics.fmean(values) if values else None


def _sample_variance(values: Sequence[float]) -> Optional[float]:
    # undefined for fewer than two observations
    return statistics.variance(values) if len(values) >= 2 else None


@dataclass(frozen=True)
class ExperimentReport:
    config: RunConfig
    results: tuple[SeedResult, ...]
    failures: tuple[SeedFailure, ...] = ()

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    @property
    def mtl_accuracies(self) -> tuple[float, ...]:
        return tuple(r.mtl_accuracy for r in self.results)

    @property
    def unsupervised_accuracies(self) -> tuple[float, ...]:
        return tuple(r.unsupervised_accuracy for r in self.results)

    def aggregate(self) -> dict:
        mtl = self.mtl_accuracies
        unsup = self.unsupervised_accuracies
        return {
            "record": "aggregate",
            "n_seeds": len(self.results),
            "partial": self.partial,
            "mtl_mean": _mean(mtl),
            "mtl_variance": _sample_variance(mtl),
            "unsupervised_mean": _mean(unsup),
            "unsupervised_variance": _sample_variance(unsup),
        }


def report_lines(report: ExperimentReport) -> list[str]:
    """One JSON record per line: seeds, failures, aggregate, reference."""
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in report.results]
    lines += [json.dumps(f.to_dict(), sort_keys=True)
              for f in report.failures]
    lines.append(json.dumps(report.aggregate(), sort_keys=True))
    lines.append(json.dumps({"record": "paper_reference", **PAPER_REFERENCE},
                            sort_keys=True))
    return lines


def _fmt(value: Optional[float]) -> str:
    return "absent" if value is None else f"{value:.4f}"


def summary_table(report: ExperimentReport) -> str:
    """Human-readable results next to the paper's reference numbers."""
    agg = report.aggregate()
    split = report.config.eval_split
    ref_unsup = PAPER_REFERENCE[f"unsupervised_{split}"]
    ref_mtl = PAPER_REFERENCE[f"mtl_{split}"]
    ref_spread = PAPER_REFERENCE[f"mtl_{split}_spread"]
    lines = [
        f"results on the {split} split, {len(report.results)} seed(s) "
        f"{list(r.seed for r in report.results)}",
        "",
        f"{'seed':>6}  {'unsupervised':>12}  {'mtl':>8}  {'final w':>8}",
    ]
    for r in report.results:
        w = r.weight_trajectory[-1] if r.weight_trajectory else 1.0
        lines.append(f"{r.seed:>6}  {r.unsupervised_accuracy:>12.4f}  "
                     f"{r.mtl_accuracy:>8.4f}  {w:>8.4f}")
    for f in report.failures:
        lines.append(f"{f.seed:>6}  failed at {f.stage}: {f.error}")
    lines += [
        "",
        f"unsupervised mean {_fmt(agg['unsupervised_mean'])}, "
        f"variance {_fmt(agg['unsupervised_variance'])}",
        f"mtl mean {_fmt(agg['mtl_mean'])}, "
        f"variance {_fmt(agg['mtl_variance'])}",
        "",
        "paper reference (not reproduced), full-scale models and data:",
        f"  unsupervised {split}: {ref_unsup}%",
        f"  mtl {split}: {ref_mtl}% +/- {ref_spread}",
        f"  majority baseline test: {PAPER_REFERENCE['majority_test']}%",
        f"  bert-large {split}: {PAPER_REFERENCE[f'bert_large_{split}']}%",
        f"  human test: {PAPER_REFERENCE['human_test']}%",
    ]
    if report.partial:
        lines.append("")
        lines.append("PARTIAL: one or more seeds failed; aggregates cover "
                     "the completed seeds only")
    return "\n".join(lines) + "\n"


def run_experiment(config: RunConfig, out_root=None,
                   log: Optional[Callable[[str], None]] = None) -> ExperimentReport:
    """Run every seed end to end; a failing seed is recorded, not fatal."""
    config.validate()
    out = Path(out_root if out_root is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    if log is None:
        log = file_logger(out / "log.txt")
    results: list[SeedResult] = []
    failures: list[SeedFailure] = []
    for seed in config.seeds:
        stage = "corpus"
        try:
            stage_corpus(config, seed, out, log)
            stage = "train-lm"
            lm_report = stage_train_lm(config, seed, out, log)
            stage = "generate"
            stage_generate(config, seed, out, log)
            stage = "train-mtl"
            mtl_report = stage_train_mtl(config, seed, out, log)
            stage = "evaluate"
            metrics = stage_evaluate(config, seed, out, log)
        except Exception as error:
            log(f"seed {seed} failed at {stage}: {error}")
            failures.append(SeedFailure(seed=seed, stage=stage,
                                        error=str(error)))
            continue
        results.append(SeedResult(
            seed=seed,
            lm_epoch_losses=tuple(lm_report.epoch_losses),
            lm_skipped_overlong=lm_report.skipped_overlong,
            mtl_epochs=tuple(mtl_report.epochs),
            metrics=metrics))
    report = ExperimentReport(config=config, results=tuple(results),
                              failures=tuple(failures))
    (out / "report.jsonl").write_text(
        "\n".join(report_lines(report)) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(summary_table(report), encoding="utf-8")
    log(f"experiment done: {len(results)} seed(s) completed, "
        f"{len(failures)} failed")
    return report
