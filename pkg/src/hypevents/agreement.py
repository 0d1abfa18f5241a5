"""Accuracy and annotation-agreement statistics.

Cohen's kappa for two complete annotators, Krippendorff's alpha for
ordinal scales with missing values, strict majority-vote aggregation,
and per-category accuracy breakdowns.

Ordinal alpha follows the coincidence-matrix formulation: values from
the same item contribute in pairs weighted 1/(m_u - 1), and the distance
between categories c <= k (in the declared order) is

    delta2(c, k) = (sum_{g=c..k} n_g - (n_c + n_k) / 2) ** 2

with n_g the coincidence marginal of category g.  Then
alpha = 1 - D_o / D_e where D_o is the observed disagreement and D_e the
disagreement expected from the marginals alone.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

from .data import DataError


@dataclass(frozen=True)
class AgreementReport:
    statistic: str
    value: float
    n_items: int
    n_annotators: int
    scale: str
    degenerate: bool = False


class AnnotationTable:
    """items x annotators category values; None marks a missing annotation."""

    def __init__(self, values, scale: str = "nominal", order=None):
        rows = tuple(tuple(row) for row in values)
        if not rows:
            raise DataError("annotation table has no items")
        width = len(rows[0])
        if width < 2:
            raise DataError("annotation table needs at least 2 annotators")
        for n, row in enumerate(rows):
            if len(row) != width:
                raise DataError(f"item {n} has {len(row)} annotations, "
                                f"expected {width}")
        if scale not in ("nominal", "ordinal"):
            raise DataError(f"unknown scale {scale!r}")
        if scale == "ordinal":
            if order is None:
                raise DataError("ordinal scale needs a declared value order")
            order = tuple(order)
            if len(set(order)) != len(order):
                raise DataError("declared order contains duplicates")
            allowed = set(order)
            for n, row in enumerate(rows):
                for v in row:
                    if v is not None and v not in allowed:
                        raise DataError(
                            f"item {n} value {v!r} not in the declared order")
        self.values = rows
        self.scale = scale
        self.order = order

    @property
    def n_items(self) -> int:
        return len(self.values)

    @property
    def n_annotators(self) -> int:
        return len(self.values[0])

    def __repr__(self) -> str:
        return (f"AnnotationTable(n_items={self.n_items}, "
                f"n_annotators={self.n_annotators}, scale={self.scale!r})")


def accuracy(predictions: Sequence, golds: Sequence) -> float:
    if len(predictions) != len(golds):
        raise DataError(f"length mismatch: {len(predictions)} predictions "
                        f"vs {len(golds)} golds")
    if not predictions:
        raise DataError("cannot compute accuracy of an empty set")
    correct = sum(1 for p, g in zip(predictions, golds) if p == g)
    return correct / len(predictions)


def cohen_kappa(annotator_a: Sequence[Hashable],
                annotator_b: Sequence[Hashable]) -> AgreementReport:
    """Chance-corrected two-annotator agreement.

    Computed from integer counts as (n*sum_diag - sum_c row_c*col_c) over
    (n^2 - sum_c row_c*col_c), so rational results like 0.4 are exact.
    Two constant identical annotators make the denominator zero; that is
    perfect agreement with no room for chance, reported as 1.0 flagged
    degenerate.
    """
    if len(annotator_a) != len(annotator_b):
        raise DataError(f"length mismatch: {len(annotator_a)} vs "
                        f"{len(annotator_b)}")
    if not annotator_a:
        raise DataError("cannot compute kappa of an empty set")
    if any(v is None for v in annotator_a) or any(v is None for v in annotator_b):
        raise DataError("kappa needs complete annotations (no missing values)")
    n = len(annotator_a)
    agree = sum(1 for a, b in zip(annotator_a, annotator_b) if a == b)
    row = Counter(annotator_a)
    col = Counter(annotator_b)
    chance = sum(row[c] * col.get(c, 0) for c in row)
    numerator = n * agree - chance
    denominator = n * n - chance
    if denominator == 0:
        return AgreementReport(statistic="cohen_kappa", value=1.0,
                               n_items=n, n_annotators=2, scale="nominal",
                               degenerate=True)
    return AgreementReport(statistic="cohen_kappa",
                           value=numerator / denominator, n_items=n,
                           n_annotators=2, scale="nominal")


def _coincidence(table: AnnotationTable, ranks: dict) -> tuple[dict, int]:
    """Coincidence counts o[(c, k)] over pairable values, and the unit count."""
    o: dict[tuple[int, int], float] = {}
    pairable_units = 0
    for row in table.values:
        present = [ranks[v] for v in row if v is not None]
        m = len(present)
        if m < 2:
            continue
        pairable_units += 1
        weight = 1.0 / (m - 1)
        for i, c in enumerate(present):
            for j, k in enumerate(present):
                if i != j:
                    o[(c, k)] = o.get((c, k), 0.0) + weight
    return o, pairable_units


def krippendorff_alpha_ordinal(table: AnnotationTable) -> AgreementReport:
    if table.scale != "ordinal":
        raise DataError("this statistic is defined for ordinal tables")
    ranks = {v: i for i, v in enumerate(table.order)}
    o, pairable_units = _coincidence(table, ranks)
    if pairable_units == 0:
        raise DataError("no item has two pairable values")
    n_categories = len(table.order)
    marginal = [0.0] * n_categories
    for (c, _k), w in o.items():
        marginal[c] += w
    total = sum(marginal)

    def delta2(c: int, k: int) -> float:
        lo, hi = min(c, k), max(c, k)
        between = sum(marginal[g] for g in range(lo, hi + 1))
        return (between - (marginal[lo] + marginal[hi]) / 2.0) ** 2

    d_observed = sum(w * delta2(c, k) for (c, k), w in o.items() if c != k)
    d_expected = sum(marginal[c] * marginal[k] * delta2(c, k)
                     for c in range(n_categories)
                     for k in range(n_categories) if c != k) / (total - 1.0)
    if d_expected == 0.0:
        # a single observed category: agreement is perfect by construction
        return AgreementReport(statistic="krippendorff_alpha", value=1.0,
                               n_items=table.n_items,
                               n_annotators=table.n_annotators,
                               scale="ordinal", degenerate=True)
    return AgreementReport(statistic="krippendorff_alpha",
                           value=1.0 - d_observed / d_expected,
                           n_items=table.n_items,
                           n_annotators=table.n_annotators, scale="ordinal")


def majority_vote(table: AnnotationTable) -> tuple[list[Optional[Hashable]], list[int]]:
    """Strict-majority label per item, plus the indices with no majority."""
    if table.n_annotators < 3:
        raise DataError("majority vote needs at least 3 annotators")
    labels: list[Optional[Hashable]] = []
    excluded: list[int] = []
    for n, row in enumerate(table.values):
        votes = Counter(v for v in row if v is not None)
        if votes:
            winner, count = votes.most_common(1)[0]
            if count * 2 > sum(votes.values()):
                labels.append(winner)
                continue
        labels.append(None)
        excluded.append(n)
    return labels, excluded


@dataclass(frozen=True)
class CategoryRow:
    category: str
    n: int
    n_correct: int
    accuracy: float

    def to_dict(self) -> dict:
        return {"category": self.category, "n": self.n,
                "n_correct": self.n_correct, "accuracy": self.accuracy}


def breakdown_report(categories: Sequence[Optional[str]],
                     predictions: Sequence, golds: Sequence,
                     known_categories: Optional[Sequence[str]] = None
                     ) -> list[CategoryRow]:
    """Per-category accuracy; unknown or missing categories pool as "other"."""
    if not (len(categories) == len(predictions) == len(golds)):
        raise DataError("categories, predictions and golds must align")
    if not categories:
        raise DataError("cannot break down an empty set")
    known = None if known_categories is None else set(known_categories)

    def bucket(c):
        if c is None or (known is not None and c not in known):
            return "other"
        return c

    totals: Counter = Counter()
    correct: Counter = Counter()
    for c, p, g in zip(categories, predictions, golds):
        b = bucket(c)
        totals[b] += 1
        if p == g:
            correct[b] += 1
    return [CategoryRow(category=c, n=totals[c], n_correct=correct[c],
                        accuracy=correct[c] / totals[c])
            for c in sorted(totals)]
