"""The infilling language model: training arrangement and next-event decoding.

A story sentence s_i (or the span s_3..s_i) is masked out and the model
is trained, with a causal transformer, to emit the missing span given the
arrangement

    [S] s1 [M] s_{i+1}..s_5 [E] [S] s1 s2      ->  s_3..s_i [E]

for i in {3, 4}; a counterfactual branch contributes the same two
examples with its own sentences.  Generation asks the trained model the
same question with (O1, H, O2) standing in for (s1, s2, suffix) and reads
off tokens until [E].
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import (E_ID, M_ID, PAD_ID, S_ID, AbductiveInstance, DataError,
                   Story, Vocab, detokenize, tokenize)
from .optim import Adam, TrainingDivergedError, linear_decay
from .rng import RngStream
from .tensor import ShapeError, Tape, Tensor, backward
from .transformer import forward_hidden, init_params, lm_logits


@dataclass(frozen=True)
class LmConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 128
    dropout: float = 0.1
    learning_rate: float = 5e-4
    batch_size: int = 12
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("d_model", "n_layers", "n_heads", "max_seq_len", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class InfillExample:
    condition: tuple[int, ...]
    target: tuple[int, ...]
    branch: str  # factual | counterfactual
    i: int       # 3 or 4

    @property
    def total_len(self) -> int:
        return len(self.condition) + len(self.target)


def build_infill_examples(story: Story, vocab: Vocab) -> list[InfillExample]:
    """Two examples (i = 3, 4) per available branch, up to four per story."""
    branches = ["factual"]
    if story.has_counterfactual:
        branches.append("counterfactual")
    out = []
    for branch in branches:
        toks = [tokenize(s, vocab) for s in story.sentences(branch)]
        for i in (3, 4):
            suffix: list[int] = [t for sent in toks[i:] for t in sent]
            condition = ([S_ID] + toks[0] + [M_ID] + suffix + [E_ID]
                         + [S_ID] + toks[0] + toks[1])
            target = [t for sent in toks[2:i] for t in sent] + [E_ID]
            out.append(InfillExample(condition=tuple(condition),
                                     target=tuple(target), branch=branch, i=i))
    return out


class LmModel:
    """Causal transformer with tied input/output embeddings."""

    def __init__(self, config: LmConfig, vocab: Vocab,
                 init_stream: Optional[RngStream] = None):
        self.config = config
        self.vocab = vocab
        stream = init_stream or RngStream("lm-init", config.seed)
        self.params = init_params(stream, len(vocab), config.d_model,
                                  config.n_layers, config.n_heads,
                                  config.max_seq_len)

    def logits(self, ids: np.ndarray, *, train: bool = False,
               stream: Optional[RngStream] = None) -> Tensor:
        rate = self.config.dropout if train else 0.0
        hidden = forward_hidden(self.params, ids, self.config.n_layers,
                                self.config.n_heads, causal=True,
                                dropout_rate=rate, stream=stream)
        return lm_logits(self.params, hidden)

    def token_states(self, ids: Sequence[int]) -> np.ndarray:
        """One contextual state per token, computed after a [S] prefix."""
        seq = np.asarray([[S_ID] + list(ids)], dtype=np.int64)
        hidden = forward_hidden(self.params, seq, self.config.n_layers,
                                self.config.n_heads, causal=True)
        return hidden.data[0, 1:]


def lm_loss(model: LmModel, batch: Sequence[InfillExample], *,
            train: bool = False, stream: Optional[RngStream] = None) -> Tensor:
    """Mean cross-entropy over target positions of condition‖target.

    Condition tokens never contribute: the label mask selects exactly the
    positions whose next token lies in the target span.
    """
    if not batch:
        raise ValueError("lm_loss needs at least one example")
    max_len = model.config.max_seq_len
    for n, ex in enumerate(batch):
        if ex.total_len > max_len:
            raise ShapeError(
                f"example {n} has {ex.total_len} tokens, max_seq_len is {max_len}")
    seqs = [list(ex.condition) + list(ex.target) for ex in batch]
    width = max(len(s) for s in seqs) - 1
    b = len(batch)
    inputs = np.full((b, width), PAD_ID, dtype=np.int64)
    labels = np.zeros((b, width), dtype=np.int64)
    mask = np.zeros((b, width), dtype=bool)
    for n, (ex, seq) in enumerate(zip(batch, seqs)):
        inputs[n, :len(seq) - 1] = seq[:-1]
        labels[n, :len(seq) - 1] = seq[1:]
        # positions whose label falls inside the target span
        mask[n, len(ex.condition) - 1:len(seq) - 1] = True
    logits = model.logits(inputs, train=train, stream=stream)
    flat = T.reshape(logits, (b * width, len(model.vocab)))
    return T.cross_entropy(flat, labels.reshape(-1), mask.reshape(-1))


@dataclass
class LmTrainReport:
    epoch_losses: list[float]
    skipped_overlong: int
    steps: int


def fitting_examples(stories: Sequence[Story], vocab: Vocab,
                     max_seq_len: int) -> tuple[list[InfillExample], int]:
    """All infill examples that fit max_seq_len, plus the skipped count."""
    kept: list[InfillExample] = []
    skipped = 0
    for story in stories:
        for ex in build_infill_examples(story, vocab):
            if ex.total_len > max_seq_len:
                skipped += 1
            else:
                kept.append(ex)
    if skipped:
        warnings.warn(f"skipped {skipped} overlong infill examples "
                      f"(max_seq_len={max_seq_len})")
    return kept, skipped


def train_lm(model: LmModel, stories: Sequence[Story], config: LmConfig,
             log=None) -> LmTrainReport:
    """Adam with the learning rate decayed linearly to zero over all steps."""
    if not stories:
        raise DataError("cannot train on an empty corpus")
    examples, skipped = fitting_examples(stories, model.vocab, config.max_seq_len)
    if not examples:
        raise DataError("no infill example fits max_seq_len")
    n = len(examples)
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    opt = Adam(model.params, lr=config.learning_rate)
    root = RngStream("lm-train", config.seed)
    use_dropout = config.dropout > 0.0

    epoch_losses: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        order = root.split(f"epoch{epoch}/shuffle").permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            drop = root.split(f"epoch{epoch}/step{step}/dropout") if use_dropout else None
            with Tape() as tape:
                loss = lm_loss(model, batch, train=use_dropout, stream=drop)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, step {step}")
            backward(loss, tape)
            opt.step(lr=linear_decay(config.learning_rate, step, total_steps))
            opt.zero_grad()
            losses.append(value)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        if log is not None:
            log(f"lm epoch {epoch}: loss {epoch_losses[-1]:.4f}")
    return LmTrainReport(epoch_losses=epoch_losses, skipped_overlong=skipped,
                         steps=step)


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class DecodeSpec:
    strategy: str = "greedy"  # greedy | topk
    k: int = 5
    max_new_tokens: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "topk"):
            raise ValueError(f"unknown decode strategy {self.strategy!r}")
        if self.k <= 0:
            raise ValueError("k must be positive")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be >= 0")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_ids: tuple[int, ...]
    degenerate: bool


def generate_next_event(model: LmModel, obs1: str, hyp: str, obs2: str,
                        decode: DecodeSpec) -> GenerationResult:
    """Decode a hypothetical next event from [S] O1 [M] O2 [E] [S] O1 H.

    O2 is deliberately part of the condition: the model writes the event
    that would follow H while already knowing how things end up.  Decoding
    stops at [E] or after max_new_tokens; an immediate [E] (or a zero
    budget) yields an empty result flagged degenerate.
    """
    vocab = model.vocab
    o1 = tokenize(obs1, vocab)
    condition = ([S_ID] + o1 + [M_ID] + tokenize(obs2, vocab) + [E_ID]
                 + [S_ID] + o1 + tokenize(hyp, vocab))
    max_len = model.config.max_seq_len
    if len(condition) >= max_len:
        raise ShapeError(
            f"condition has {len(condition)} tokens, max_seq_len is {max_len}")
    budget = min(decode.max_new_tokens, max_len - len(condition))
    stream = RngStream("decode", decode.seed)
    seq = list(condition)
    out_ids: list[int] = []
    for _ in range(budget):
        logits = model.logits(np.array([seq], dtype=np.int64))
        row = logits.data[0, -1].copy()
        row[PAD_ID] = -np.inf  # padding is infrastructure, never emitted
        next_id = _pick(row, decode, stream)
        if next_id == E_ID:
            break
        out_ids.append(next_id)
        seq.append(next_id)
    text = detokenize(out_ids, vocab)
    return GenerationResult(text=text, token_ids=tuple(out_ids),
                            degenerate=len(out_ids) == 0)


def _pick(row: np.ndarray, decode: DecodeSpec, stream: RngStream) -> int:
    if decode.strategy == "greedy":
        return int(np.argmax(row))
    k = min(decode.k, int(np.isfinite(row).sum()))
    top = np.argsort(-row, kind="stable")[:k]
    z = row[top] - row[top].max()
    p = np.exp(z)
    p /= p.sum()
    r = float(stream.uniform(()))
    return int(top[np.searchsorted(np.cumsum(p), r, side="right").clip(0, k - 1)])


def generate_batch(model: LmModel, requests: Sequence[tuple[str, str, str]],
                   decode: DecodeSpec) -> list[GenerationResult]:
    """Decode one hypothetical next event per (obs1, hyp, obs2) request.

    All rows step together in a right-padded buffer; each row stops at
    [E] or its own budget.  Every row draws from its own fresh stream,
    so batching changes throughput, not which tokens come out.
    """
    vocab = model.vocab
    max_len = model.config.max_seq_len
    conditions: list[list[int]] = []
    for i, (obs1, hyp, obs2) in enumerate(requests):
        o1 = tokenize(obs1, vocab)
        cond = ([S_ID] + o1 + [M_ID] + tokenize(obs2, vocab) + [E_ID]
                + [S_ID] + o1 + tokenize(hyp, vocab))
        if len(cond) >= max_len:
            raise ShapeError(f"request {i}: condition has {len(cond)} "
                             f"tokens, max_seq_len is {max_len}")
        conditions.append(cond)
    n = len(conditions)
    lengths = np.array([len(c) for c in conditions], dtype=np.int64)
    remaining = np.minimum(decode.max_new_tokens, max_len - lengths)
    width = int((lengths + remaining).max()) if n else 0
    buffer = np.full((n, width), PAD_ID, dtype=np.int64)
    for i, cond in enumerate(conditions):
        buffer[i, :len(cond)] = cond
    streams = [RngStream("decode", decode.seed) for _ in range(n)]
    done = remaining == 0
    while not done.all():
        active = np.flatnonzero(~done)
        w = int(lengths[active].max())
        ids = buffer[active, :w]
        hidden = forward_hidden(model.params, ids, model.config.n_layers,
                                model.config.n_heads, causal=True,
                                lengths=lengths[active])
        logits = lm_logits(model.params, hidden).data
        for slot, row_index in enumerate(active):
            row = logits[slot, lengths[row_index] - 1].copy()
            row[PAD_ID] = -np.inf  # padding is infrastructure, never emitted
            next_id = _pick(row, decode, streams[row_index])
            if next_id == E_ID:
                done[row_index] = True
                continue
            buffer[row_index, lengths[row_index]] = next_id
            lengths[row_index] += 1
            remaining[row_index] -= 1
            if remaining[row_index] == 0:
                done[row_index] = True
    results = []
    for i, cond in enumerate(conditions):
        out_ids = [int(t) for t in buffer[i, len(cond):lengths[i]]]
        results.append(GenerationResult(text=detokenize(out_ids, vocab),
                                        token_ids=tuple(out_ids),
                                        degenerate=len(out_ids) == 0))
    return results


def generate_for_instances(model: LmModel,
                           instances: Sequence[AbductiveInstance],
                           decode: DecodeSpec) -> list[AbductiveInstance]:
    """Fill gen1/gen2 for every instance, decoding both rows per instance."""
    requests = []
    for inst in instances:
        requests.append((inst.obs1, inst.hyp1, inst.obs2))
        requests.append((inst.obs1, inst.hyp2, inst.obs2))
    results = generate_batch(model, requests, decode)
    return [inst.with_generations(results[2 * i].text, results[2 * i + 1].text)
            for i, inst in enumerate(instances)]
