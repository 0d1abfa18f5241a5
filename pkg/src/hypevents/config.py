"""Flat key = value run configuration shared by the CLI and experiments.

One document describes a whole pipeline run: corpus source, vocabulary,
LM and classifier hyperparameters, decoding, provider choice, seeds and
output directory.  Parsing is strict: unknown keys and malformed values
are errors, and validation reports every violation at once rather than
stopping at the first.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .infill import DecodeSpec, LmConfig
from .mtl import AUX_LABEL_MODES, MtlConfig
from .synthetic import TEMPLATE_SETS, SyntheticSpec

PROVIDERS = ("encoder", "lm", "static")
SPLITS = ("dev", "test")


class ConfigError(Exception):
    """Invalid run configuration; the message lists every violation."""


@dataclass(frozen=True)
class RunConfig:
    # corpus: either a stories + instances file pair or the synthetic
    # generator (both paths empty)
    corpus_path: Optional[str] = None
    instances_path: Optional[str] = None
    synthetic_n_stories: int = 250
    synthetic_rho: float = 1.0
    synthetic_template_set: str = "v1"
    synthetic_vocab_budget: int = 200
    # splits over stories (and their instances), in corpus order
    n_train: int = 200
    n_dev: int = 50
    n_test: int = 0
    min_count: int = 1
    # infilling LM
    lm_d_model: int = 64
    lm_n_layers: int = 2
    lm_n_heads: int = 2
    lm_max_seq_len: int = 128
    lm_dropout: float = 0.1
    lm_learning_rate: float = 5e-4
    lm_batch_size: int = 12
    lm_epochs: int = 30
    # decoding
    decode_strategy: str = "greedy"
    decode_k: int = 5
    # one full outcome sentence in the v1 synthetic templates; a next
    # event is a single sentence, so the budget cuts anything beyond it
    decode_max_new_tokens: int = 19
    # classifier
    mtl_d_model: int = 64
    mtl_n_layers: int = 2
    mtl_n_heads: int = 4
    mtl_max_seq_len: int = 96
    mtl_dropout: float = 0.1
    mtl_learning_rate: float = 2e-3
    mtl_batch_size: int = 32
    mtl_epochs: int = 30
    aux_label_mode: str = "gold"
    # similarity scoring
    provider: str = "encoder"
    provider_dim: int = 64
    # annotation analysis; the order lists ordinal values separated by
    # commas, smallest first
    annotations_path: Optional[str] = None
    agreement_scale: str = "nominal"
    agreement_order: str = ""
    # evaluation and orchestration
    eval_split: str = "dev"
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "out"

    def validate(self) -> None:
        problems = []

        def positive(name):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive, got "
                                f"{getattr(self, name)}")

        for name in ("synthetic_n_stories", "synthetic_vocab_budget",
                     "n_train", "min_count", "lm_d_model", "lm_n_layers",
                     "lm_n_heads", "lm_max_seq_len", "lm_batch_size",
                     "decode_k", "mtl_d_model", "mtl_n_layers", "mtl_n_heads",
                     "mtl_max_seq_len", "mtl_batch_size", "provider_dim"):
            positive(name)
        for name in ("n_dev", "n_test", "lm_epochs", "mtl_epochs",
                     "decode_max_new_tokens"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got "
                                f"{getattr(self, name)}")
        if not 0.0 <= self.synthetic_rho <= 1.0:
            problems.append(f"synthetic_rho must lie in [0, 1], got "
                            f"{self.synthetic_rho}")
        if self.synthetic_template_set not in TEMPLATE_SETS:
            problems.append(f"synthetic_template_set must be one of "
                            f"{sorted(TEMPLATE_SETS)}, got "
                            f"{self.synthetic_template_set!r}")
        for name in ("lm_dropout", "mtl_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                problems.append(f"{name} must lie in [0, 1), got "
                                f"{getattr(self, name)}")
        for name in ("lm_learning_rate", "mtl_learning_rate"):
            if getattr(self, name) <= 0.0:
                problems.append(f"{name} must be positive, got "
                                f"{getattr(self, name)}")
        if self.lm_d_model % self.lm_n_heads != 0:
            problems.append(f"lm_d_model {self.lm_d_model} not divisible by "
                            f"lm_n_heads {self.lm_n_heads}")
        if self.mtl_d_model % self.mtl_n_heads != 0:
            problems.append(f"mtl_d_model {self.mtl_d_model} not divisible "
                            f"by mtl_n_heads {self.mtl_n_heads}")
        if self.mtl_max_seq_len < 8:
            problems.append("mtl_max_seq_len must be at least 8")
        if self.decode_strategy not in ("greedy", "topk"):
            problems.append(f"decode_strategy must be greedy or topk, got "
                            f"{self.decode_strategy!r}")
        if self.aux_label_mode not in AUX_LABEL_MODES:
            problems.append(f"aux_label_mode must be one of "
                            f"{AUX_LABEL_MODES}, got {self.aux_label_mode!r}")
        if self.provider not in PROVIDERS:
            problems.append(f"provider must be one of {PROVIDERS}, got "
                            f"{self.provider!r}")
        if self.eval_split not in SPLITS:
            problems.append(f"eval_split must be one of {SPLITS}, got "
                            f"{self.eval_split!r}")
        if self.eval_split == "dev" and self.n_dev == 0:
            problems.append("eval_split is dev but n_dev is 0")
        if self.eval_split == "test" and self.n_test == 0:
            problems.append("eval_split is test but n_test is 0")
        if (self.corpus_path is None) != (self.instances_path is None):
            problems.append("corpus_path and instances_path must be set "
                            "together (or both left empty for synthetic)")
        if self.agreement_scale not in ("nominal", "ordinal"):
            problems.append(f"agreement_scale must be nominal or ordinal, "
                            f"got {self.agreement_scale!r}")
        if self.agreement_scale == "ordinal" and not self.agreement_order:
            problems.append("agreement_scale is ordinal but agreement_order "
                            "declares no values")
        if not self.seeds:
            problems.append("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            problems.append(f"seeds contain duplicates: {list(self.seeds)}")
        if not self.out_dir:
            problems.append("out_dir must not be empty")
        if problems:
            raise ConfigError("invalid configuration:\n  " +
                              "\n  ".join(problems))

    # bridges into the per-stage configs, with the per-run seed injected
    def lm_config(self, seed: int) -> LmConfig:
        return LmConfig(d_model=self.lm_d_model, n_layers=self.lm_n_layers,
                        n_heads=self.lm_n_heads,
                        max_seq_len=self.lm_max_seq_len,
                        dropout=self.lm_dropout,
                        learning_rate=self.lm_learning_rate,
                        batch_size=self.lm_batch_size, epochs=self.lm_epochs,
                        seed=seed)

    def mtl_config(self, seed: int) -> MtlConfig:
        return MtlConfig(d_model=self.mtl_d_model, n_layers=self.mtl_n_layers,
                         n_heads=self.mtl_n_heads,
                         max_seq_len=self.mtl_max_seq_len,
                         dropout=self.mtl_dropout,
                         learning_rate=self.mtl_learning_rate,
                         batch_size=self.mtl_batch_size,
                         epochs=self.mtl_epochs, seed=seed,
                         aux_label_mode=self.aux_label_mode)

    def decode_spec(self, seed: int) -> DecodeSpec:
        return DecodeSpec(strategy=self.decode_strategy, k=self.decode_k,
                          max_new_tokens=self.decode_max_new_tokens,
                          seed=seed)

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(n_stories=self.synthetic_n_stories,
                             vocab_size=self.synthetic_vocab_budget,
                             template_set=self.synthetic_template_set,
                             seed=seed, rho=self.synthetic_rho)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    if key == "seeds":
        try:
            return tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        except ValueError:
            raise ConfigError(f"seeds must be comma-separated integers, "
                              f"got {raw!r}")
    if f.type in ("Optional[str]",):
        return raw or None
    if f.type == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}")
    if f.type == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {raw!r}")
    return raw


def parse_config_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse `key = value` lines; # starts a comment, blank lines ignored."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, "
                              f"got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[key] = _parse_value(key, raw)
    return replace(base or RunConfig(), **overrides)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}")
    try:
        return parse_config_text(text)
    except ConfigError as e:
        raise ConfigError(f"{p}: {e}")


def config_to_text(config: RunConfig) -> str:
    """Deterministic serialization: one sorted `key = value` line each."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(config, name)
        if value is None:
            value = ""
        elif name == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
