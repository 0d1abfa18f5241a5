"""Text normalization, the word-level vocabulary, and the dataset types.

Two record shapes flow through the package: five-sentence stories (with an
optional counterfactual branch) used to train the infilling model, and
two-hypothesis abduction instances used for selection.  Both live in JSONL
files; loaders here validate eagerly and report the offending line.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

SPECIAL_TOKENS = ("[S]", "[E]", "[M]", "[CLS]", "[SEP]", "[PAD]", "[UNK]")
S_ID, E_ID, M_ID, CLS_ID, SEP_ID, PAD_ID, UNK_ID = range(len(SPECIAL_TOKENS))

_SPECIAL_RE = re.compile(r"\[(?:s|e|m|cls|sep|pad|unk)\]", re.IGNORECASE)
# specials first so "[CLS]" never splits into brackets; then word runs;
# then any single non-space char (punctuation, underscore, stray symbols)
_TOKEN_RE = re.compile(r"\[(?:S|E|M|CLS|SEP|PAD|UNK)\]|[^\W_]+|[^\w\s]|_")


class DataError(ValueError):
    """A dataset record violated the schema; carries file and line when known."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}:{line}: " if line is not None else f"{self.path}: "
        super().__init__(where + message)


class VocabFormatError(DataError):
    pass


def normalize(text: str) -> str:
    """NFC, lowercase, collapsed whitespace; special literals kept canonical."""
    text = unicodedata.normalize("NFC", text)
    parts = []
    pos = 0
    for m in _SPECIAL_RE.finditer(text):
        parts.append(text[pos:m.start()].lower())
        parts.append(m.group(0).upper())
        pos = m.end()
    parts.append(text[pos:].lower())
    return " ".join("".join(parts).split())


def split_tokens(text: str) -> list[str]:
    """Normalize and split into word / punctuation / special-literal tokens."""
    return _TOKEN_RE.findall(normalize(text))


class Vocab:
    """Token ids with the seven special tokens pinned to ids 0..6."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabFormatError(
                f"vocabulary must start with the special tokens {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise VocabFormatError(f"duplicate tokens in vocabulary: {dupes[:5]}")
        self._id_to_token = tokens
        self._token_to_id = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocab":
        """Count tokens over normalized texts; frequent first, ties lexicographic."""
        counts: Counter = Counter()
        for text in texts:
            counts.update(split_tokens(text))
        for special in SPECIAL_TOKENS:
            counts.pop(special, None)
        if not counts:
            raise DataError("cannot build a vocabulary from an empty corpus")
        kept = [t for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(list(SPECIAL_TOKENS) + kept)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._id_to_token):
            raise DataError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self._id_to_token[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token_of(int(i)) for i in ids]

    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    HEADER = "HYPEVENTS-VOCAB v1"

    def to_text(self) -> str:
        lines = [self.HEADER]
        lines += [f"{t}\t{i}" for i, t in enumerate(self._id_to_token)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, path=None) -> "Vocab":
        raw = text.splitlines()
        if not raw or raw[0] != cls.HEADER:
            got = raw[0] if raw else "<empty file>"
            raise VocabFormatError(
                f"expected header {cls.HEADER!r}, got {got!r}", path=path, line=1)
        tokens = []
        for n, line in enumerate(raw[1:], start=2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise VocabFormatError("expected 'token<TAB>id'", path=path, line=n)
            token, idx = parts
            try:
                idx = int(idx)
            except ValueError:
                raise VocabFormatError(f"bad id {parts[1]!r}", path=path, line=n)
            if idx != len(tokens):
                raise VocabFormatError(
                    f"id {idx} out of order, expected {len(tokens)}", path=path, line=n)
            tokens.append(token)
        try:
            return cls(tokens)
        except VocabFormatError as e:
            raise VocabFormatError(str(e), path=path)

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), path=path)


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return vocab.encode(split_tokens(text))


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    return " ".join(vocab.decode(ids))


# ---------------------------------------------------------------------------
# dataset records


def _require_text(value, name: str) -> str:
    if not isinstance(value, str) or not normalize(value):
        raise DataError(f"{name} must be a non-empty sentence, got {value!r}")
    return value


def _require_ending(value, name: str) -> tuple[str, str, str]:
    if not isinstance(value, (tuple, list)) or len(value) != 3:
        raise DataError(f"{name} must hold exactly 3 sentences, got {value!r}")
    return tuple(_require_text(s, name) for s in value)


@dataclass(frozen=True)
class Story:
    """Five sentences s1..s5, plus an optional counterfactual branch.

    The branch replaces s2 with `counterfactual` and s3..s5 with
    `edited_ending`; it shares s1 with the factual telling.
    """

    premise: str
    initial: str
    ending: tuple[str, str, str]
    counterfactual: Optional[str] = None
    edited_ending: Optional[tuple[str, str, str]] = None
    story_id: Optional[str] = None

    def __post_init__(self):
        _require_text(self.premise, "premise")
        _require_text(self.initial, "initial")
        object.__setattr__(self, "ending", _require_ending(self.ending, "ending"))
        if (self.counterfactual is None) != (self.edited_ending is None):
            raise DataError(
                "counterfactual and edited_ending must be given together")
        if self.counterfactual is not None:
            _require_text(self.counterfactual, "counterfactual")
            object.__setattr__(
                self, "edited_ending",
                _require_ending(self.edited_ending, "edited_ending"))

    @property
    def has_counterfactual(self) -> bool:
        return self.counterfactual is not None

    def sentences(self, branch: str = "factual") -> tuple[str, str, str, str, str]:
        """The five sentences of one telling of the story."""
        if branch == "factual":
            return (self.premise, self.initial) + self.ending
        if branch == "counterfactual":
            if not self.has_counterfactual:
                raise DataError("story has no counterfactual branch")
            return (self.premise, self.counterfactual) + self.edited_ending
        raise ValueError(f"unknown branch {branch!r}")

    def all_texts(self) -> list[str]:
        texts = list(self.sentences("factual"))
        if self.has_counterfactual:
            texts += [self.counterfactual, *self.edited_ending]
        return texts


@dataclass(frozen=True)
class AbductiveInstance:
    """Two observations, two candidate hypotheses, optional gold label.

    gen1/gen2 hold the hypothetical next event generated for each
    hypothesis once the generation stage has run; label is 1 or 2.
    """

    obs1: str
    obs2: str
    hyp1: str
    hyp2: str
    label: Optional[int] = None
    gen1: Optional[str] = None
    gen2: Optional[str] = None
    category: Optional[str] = None
    instance_id: Optional[str] = None

    def __post_init__(self):
        for name in ("obs1", "obs2", "hyp1", "hyp2"):
            _require_text(getattr(self, name), name)
        if self.label is not None and self.label not in (1, 2):
            raise DataError(f"label must be 1 or 2, got {self.label!r}")

    @property
    def has_generations(self) -> bool:
        return self.gen1 is not None and self.gen2 is not None

    def hypothesis(self, j: int) -> str:
        return (self.hyp1, self.hyp2)[j - 1]

    def generation(self, j: int) -> Optional[str]:
        return (self.gen1, self.gen2)[j - 1]

    def with_generations(self, gen1: str, gen2: str) -> "AbductiveInstance":
        return replace(self, gen1=gen1, gen2=gen2)

    def to_dict(self) -> dict:
        out = {"obs1": self.obs1, "obs2": self.obs2,
               "hyp1": self.hyp1, "hyp2": self.hyp2}
        for key in ("label", "gen1", "gen2", "category", "instance_id"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


# ---------------------------------------------------------------------------
# JSONL IO

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def _split_ending(value, name: str, path, line: int) -> tuple[str, str, str]:
    """Accept an ending as a 3-item list or as one string of 3 sentences."""
    if isinstance(value, str):
        parts = [p for p in _SENTENCE_SPLIT_RE.split(value.strip()) if p]
        if len(parts) != 3:
            raise DataError(
                f"{name} must contain exactly 3 sentences, found {len(parts)}",
                path=path, line=line)
        return tuple(parts)
    if isinstance(value, list) and len(value) == 3:
        return tuple(value)
    raise DataError(f"{name} must be 3 sentences (list or string), got {value!r}",
                    path=path, line=line)


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed JSON ({e.msg})", path=path, line=n)
            if not isinstance(record, dict):
                raise DataError("each line must hold a JSON object", path=path, line=n)
            yield n, record


def load_stories(path) -> list[Story]:
    """Read stories from JSONL: premise, initial, original_ending, and
    optionally counterfactual + edited_ending.  Endings may be a 3-item
    list or a single string that splits into exactly 3 sentences."""
    stories = []
    for n, record in _iter_jsonl(path):
        for key in ("premise", "initial", "original_ending"):
            if key not in record:
                raise DataError(f"missing field {key!r}", path=path, line=n)
        ending = _split_ending(record["original_ending"], "original_ending", path, n)
        counterfactual = record.get("counterfactual")
        edited = record.get("edited_ending")
        if (counterfactual is None) != (edited is None):
            raise DataError("counterfactual and edited_ending must appear together",
                            path=path, line=n)
        if edited is not None:
            edited = _split_ending(edited, "edited_ending", path, n)
        try:
            stories.append(Story(
                premise=record["premise"], initial=record["initial"], ending=ending,
                counterfactual=counterfactual, edited_ending=edited,
                story_id=record.get("story_id")))
        except DataError as e:
            raise DataError(str(e), path=path, line=n)
    return stories


def write_stories(path, stories: Iterable[Story]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in stories:
            record = {"premise": s.premise, "initial": s.initial,
                      "original_ending": list(s.ending)}
            if s.has_counterfactual:
                record["counterfactual"] = s.counterfactual
                record["edited_ending"] = list(s.edited_ending)
            if s.story_id is not None:
                record["story_id"] = s.story_id
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=True) + "\n")


def load_instances(path) -> list[AbductiveInstance]:
    """Read abduction instances from JSONL: obs1, obs2, hyp1, hyp2, and
    optionally label, gen1, gen2, category, instance_id."""
    instances = []
    for n, record in _iter_jsonl(path):
        for key in ("obs1", "obs2", "hyp1", "hyp2"):
            if key not in record:
                raise DataError(f"missing field {key!r}", path=path, line=n)
        label = record.get("label")
        if label is not None and label not in (1, 2):
            raise DataError(f"label must be 1 or 2, got {label!r}", path=path, line=n)
        try:
            instances.append(AbductiveInstance(
                obs1=record["obs1"], obs2=record["obs2"],
                hyp1=record["hyp1"], hyp2=record["hyp2"], label=label,
                gen1=record.get("gen1"), gen2=record.get("gen2"),
                category=record.get("category"),
                instance_id=record.get("instance_id")))
        except DataError as e:
            raise DataError(str(e), path=path, line=n)
    return instances


def write_instances(path, instances: Iterable[AbductiveInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True, ensure_ascii=True)
                     + "\n")
