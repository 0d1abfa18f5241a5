"""Greedy cosine-matching similarity and the unsupervised selector.

Each candidate token is matched to its best reference token by cosine
similarity and vice versa; averaging the two directions gives precision
and recall, combined into F1.  No IDF weighting and no baseline
rescaling.  The selector scores each hypothesis's generated next event
against obs2 independently and predicts the argmax of F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .data import AbductiveInstance, split_tokens
from .rng import RngStream


class EmbeddingProvider(Protocol):
    def embed(self, text: str) -> tuple[list[str], np.ndarray]:
        """Tokens of the normalized text and one embedding row per token."""
        ...


class StaticEmbeddings:
    """A deterministic random unit vector per surface token.

    Needs no trained model and no vocabulary: vectors are derived from the
    token string itself, so any text can be scored, and distinct tokens
    get (almost surely) distinct directions.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            raw = RngStream(f"static-emb/{token}", self.seed).normal((self.dim,))
            v = raw / np.linalg.norm(raw)
            self._cache[token] = v
        return v

    def embed(self, text: str) -> tuple[list[str], np.ndarray]:
        tokens = split_tokens(text)
        if not tokens:
            return [], np.zeros((0, self.dim))
        return tokens, np.stack([self._vector(t) for t in tokens])


class ContextualEmbeddings:
    """Token states from a trained model (infilling LM or MTL encoder).

    The model must expose vocab and token_states(ids) -> (n, d) states.
    """

    def __init__(self, model):
        self.model = model

    def embed(self, text: str) -> tuple[list[str], np.ndarray]:
        tokens = split_tokens(text)
        if not tokens:
            d = self.model.params["token_emb"].shape[1]
            return [], np.zeros((0, d))
        ids = self.model.vocab.encode(tokens)
        return tokens, self.model.token_states(ids)


@dataclass(frozen=True, eq=False)
class SimilarityReport:
    precision: float
    recall: float
    f1: float
    matrix: np.ndarray  # candidate x reference cosines


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms < 1e-12, 1.0, norms)  # zero rows stay zero
    return x / safe


def bertscore(candidate: np.ndarray, reference: np.ndarray) -> SimilarityReport:
    """Greedy-match similarity between two (tokens, dim) embedding arrays."""
    candidate = np.asarray(candidate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if candidate.ndim != 2 or reference.ndim != 2:
        raise ValueError("embeddings must be 2D (tokens, dim) arrays")
    if candidate.shape[0] == 0 or reference.shape[0] == 0:
        raise ValueError("cannot score an empty token sequence")
    if candidate.shape[1] != reference.shape[1]:
        raise ValueError(
            f"dimension mismatch: {candidate.shape[1]} vs {reference.shape[1]}")
    matrix = _unit_rows(candidate) @ _unit_rows(reference).T
    precision = float(matrix.max(axis=1).mean())  # best match per candidate token
    recall = float(matrix.max(axis=0).mean())     # best match per reference token
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return SimilarityReport(precision=precision, recall=recall, f1=f1,
                            matrix=matrix)


@dataclass
class SelectionRecord:
    prediction: Optional[int]  # 1, 2, or None when abstaining
    f1: tuple[Optional[float], Optional[float]]
    tie: bool = False
    degenerate: tuple[bool, bool] = (False, False)
    abstained: bool = False
    gold: Optional[int] = None
    instance_id: Optional[str] = None
    reports: tuple[Optional[SimilarityReport], Optional[SimilarityReport]] = (None, None)

    @property
    def correct(self) -> Optional[bool]:
        if self.gold is None:
            return None
        return self.prediction == self.gold  # abstention counts as incorrect

    def to_dict(self) -> dict:
        out = {"prediction": self.prediction, "f1_1": self.f1[0],
               "f1_2": self.f1[1], "tie": self.tie,
               "degenerate_1": self.degenerate[0],
               "degenerate_2": self.degenerate[1], "abstained": self.abstained}
        if self.gold is not None:
            out["gold"] = self.gold
            out["correct"] = self.correct
        if self.instance_id is not None:
            out["instance_id"] = self.instance_id
        return out


def select_unsupervised(instance: AbductiveInstance,
                        provider: EmbeddingProvider) -> SelectionRecord:
    """Predict the hypothesis whose generated next event best matches obs2.

    A degenerate (empty) generation loses by default: if one side is
    degenerate the other is predicted, if both are the record abstains and
    is scored as incorrect downstream.
    """
    if not instance.has_generations:
        raise ValueError("instance has no generated next events; "
                         "run generation first")
    _, ref = provider.embed(instance.obs2)
    if ref.shape[0] == 0:
        raise ValueError("obs2 produced no tokens")
    sides = []
    for j in (1, 2):
        _, cand = provider.embed(instance.generation(j))
        if cand.shape[0] == 0:
            sides.append(None)
        else:
            sides.append(bertscore(cand, ref))
    degenerate = (sides[0] is None, sides[1] is None)
    common = dict(degenerate=degenerate, gold=instance.label,
                  instance_id=instance.instance_id,
                  reports=(sides[0], sides[1]))
    if degenerate[0] and degenerate[1]:
        return SelectionRecord(prediction=None, f1=(None, None),
                               abstained=True, **common)
    if degenerate[0]:
        return SelectionRecord(prediction=2, f1=(None, sides[1].f1), **common)
    if degenerate[1]:
        return SelectionRecord(prediction=1, f1=(sides[0].f1, None), **common)
    f1_1, f1_2 = sides[0].f1, sides[1].f1
    tie = f1_1 == f1_2
    prediction = 1 if f1_1 >= f1_2 else 2
    return SelectionRecord(prediction=prediction, f1=(f1_1, f1_2), tie=tie,
                           **common)


@dataclass
class SelectorEvaluation:
    accuracy: float
    n: int
    n_correct: int
    n_ties: int
    n_abstained: int
    n_degenerate: int
    records: list[SelectionRecord] = field(repr=False, default_factory=list)


def evaluate_selector(instances: Sequence[AbductiveInstance],
                      provider: EmbeddingProvider) -> SelectorEvaluation:
    if not instances:
        raise ValueError("cannot evaluate an empty instance set")
    if any(inst.label is None for inst in instances):
        raise ValueError("every instance must be labeled")
    records = [select_unsupervised(inst, provider) for inst in instances]
    n_correct = sum(1 for r in records if r.correct)
    return SelectorEvaluation(
        accuracy=n_correct / len(records),
        n=len(records),
        n_correct=n_correct,
        n_ties=sum(1 for r in records if r.tie),
        n_abstained=sum(1 for r in records if r.abstained),
        n_degenerate=sum(1 for r in records if any(r.degenerate)),
        records=records)
