"""Abductive hypothesis selection via generated hypothetical next events."""

from .agreement import (
    AnnotationTable,
    accuracy,
    breakdown_report,
    cohen_kappa,
    krippendorff_alpha_ordinal,
    majority_vote,
)
from .checkpoint import CheckpointError, load_checkpoint, load_lm, load_mtl, save_checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config_text
from .data import (
    AbductiveInstance,
    DataError,
    Story,
    Vocab,
    load_instances,
    load_stories,
    write_instances,
    write_stories,
)
from .estimators import ABSTAIN, HypothesisSelector, InfillingLm, MtlClassifier
from .experiment import (
    ExperimentReport,
    StageOrderError,
    run_experiment,
    stage_corpus,
    stage_evaluate,
    stage_generate,
    stage_predict,
    stage_select,
    stage_train_lm,
    stage_train_mtl,
)
from .infill import (
    DecodeSpec,
    LmConfig,
    LmModel,
    generate_for_instances,
    generate_next_event,
    train_lm,
)
from .mtl import MtlConfig, MtlModel, evaluate_mtl, predict_batch, train_mtl
from .simscore import (
    ContextualEmbeddings,
    StaticEmbeddings,
    bertscore,
    evaluate_selector,
    select_unsupervised,
)
from .synthetic import TEMPLATE_SETS, SyntheticSpec, gen_synthetic

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "AbductiveInstance",
    "AnnotationTable",
    "CheckpointError",
    "ConfigError",
    "ContextualEmbeddings",
    "DataError",
    "DecodeSpec",
    "ExperimentReport",
    "HypothesisSelector",
    "InfillingLm",
    "LmConfig",
    "LmModel",
    "MtlClassifier",
    "MtlConfig",
    "MtlModel",
    "RunConfig",
    "StageOrderError",
    "StaticEmbeddings",
    "Story",
    "SyntheticSpec",
    "TEMPLATE_SETS",
    "Vocab",
    "accuracy",
    "bertscore",
    "breakdown_report",
    "cohen_kappa",
    "evaluate_mtl",
    "evaluate_selector",
    "gen_synthetic",
    "generate_for_instances",
    "generate_next_event",
    "krippendorff_alpha_ordinal",
    "load_checkpoint",
    "load_config",
    "load_instances",
    "load_lm",
    "load_mtl",
    "load_stories",
    "majority_vote",
    "parse_config_text",
    "predict_batch",
    "run_experiment",
    "save_checkpoint",
    "select_unsupervised",
    "stage_corpus",
    "stage_evaluate",
    "stage_generate",
    "stage_predict",
    "stage_select",
    "stage_train_lm",
    "stage_train_mtl",
    "train_lm",
    "train_mtl",
    "write_instances",
    "write_stories",
]
