"""Multi-task classifier over hypothesis pairs and their generated events.

One shared bidirectional encoder reads four sequences per instance:

    main_j = [CLS] O1 [SEP] H_j [SEP] O2 [SEP]
    aux_j  = [CLS] H_j [SEP] G_j [SEP] O2 [SEP]

where G_j is the next event generated under hypothesis j.  Each [CLS]
state passes through a per-task linear head to one logit; softmax over
the pair gives the prediction.  The joint training loss is

    L = L_main + w * L_similarity

with w a single trainable scalar initialized to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import (CLS_ID, PAD_ID, SEP_ID, AbductiveInstance, DataError,
                   Vocab, tokenize)
from .optim import Adam, TrainingDivergedError, linear_decay
from .rng import RngStream
from .simscore import EmbeddingProvider, StaticEmbeddings, select_unsupervised
from .tensor import Tape, Tensor, backward
from .transformer import forward_hidden, init_params

AUX_LABEL_MODES = ("gold", "bertscore")


@dataclass(frozen=True)
class MtlConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 96
    dropout: float = 0.1
    learning_rate: float = 2e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    aux_label_mode: str = "gold"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("d_model", "n_layers", "n_heads", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        # 1 CLS + 3 SEP per sequence; anything shorter cannot carry content
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be at least 8")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.aux_label_mode not in AUX_LABEL_MODES:
            raise ValueError(f"aux_label_mode must be one of {AUX_LABEL_MODES}, "
                             f"got {self.aux_label_mode!r}")


@dataclass(frozen=True)
class MtlInput:
    """The four encoder sequences of one instance, already tokenized."""

    main: tuple[tuple[int, ...], tuple[int, ...]]
    aux: tuple[tuple[int, ...], tuple[int, ...]]
    label: Optional[int] = None
    instance_id: Optional[str] = None

    @property
    def sequences(self) -> tuple[tuple[int, ...], ...]:
        return self.main + self.aux


def _assemble(segments: Sequence[list[int]], max_seq_len: int) -> tuple[int, ...]:
    """[CLS] seg [SEP] seg [SEP] ... with content dropped tail-first to fit."""
    n_delim = 1 + len(segments)
    overflow = sum(len(s) for s in segments) + n_delim - max_seq_len
    segs = [list(s) for s in segments]
    for seg in reversed(segs):
        if overflow <= 0:
            break
        take = min(overflow, len(seg))
        del seg[len(seg) - take:]
        overflow -= take
    seq = [CLS_ID]
    for seg in segs:
        seq.extend(seg)
        seq.append(SEP_ID)
    return tuple(seq)


def build_mtl_input(instance: AbductiveInstance, vocab: Vocab,
                    max_seq_len: int = 96) -> MtlInput:
    """Tokenize one instance into its two main and two aux sequences."""
    if not instance.has_generations:
        raise DataError("instance has no generated next events; run the "
                        "generation stage before building classifier inputs")
    o1 = tokenize(instance.obs1, vocab)
    o2 = tokenize(instance.obs2, vocab)
    main = []
    aux = []
    for j in (1, 2):
        h = tokenize(instance.hypothesis(j), vocab)
        g = tokenize(instance.generation(j), vocab)
        main.append(_assemble([o1, h, o2], max_seq_len))
        aux.append(_assemble([h, g, o2], max_seq_len))
    return MtlInput(main=(main[0], main[1]), aux=(aux[0], aux[1]),
                    label=instance.label, instance_id=instance.instance_id)


class MtlModel:
    """Shared encoder, two scalar-logit heads, and the loss weight w."""

    def __init__(self, config: MtlConfig, vocab: Vocab,
                 init_stream: Optional[RngStream] = None):
        self.config = config
        self.vocab = vocab
        stream = init_stream or RngStream("mtl-init", config.seed)
        self.params = init_params(stream, len(vocab), config.d_model,
                                  config.n_layers, config.n_heads,
                                  config.max_seq_len)
        d = config.d_model
        for head in ("head_main", "head_aux"):
            self.params[head + "_w"] = Tensor(
                stream.split(head).normal((d, 1), 0.02), requires_grad=True)
            self.params[head + "_b"] = Tensor(np.zeros((1,)), requires_grad=True)
        self.params["loss_weight"] = Tensor(np.asarray(1.0), requires_grad=True)

    @property
    def loss_weight(self) -> float:
        return self.params["loss_weight"].item()

    def encode_cls(self, seqs: Sequence[Sequence[int]], *, train: bool = False,
                   stream: Optional[RngStream] = None) -> Tensor:
        """(n_seqs, d_model) [CLS] states; rows are padded independently."""
        if not seqs:
            raise ValueError("encode_cls needs at least one sequence")
        lengths = [len(s) for s in seqs]
        width = max(lengths)
        ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
        for n, s in enumerate(seqs):
            ids[n, :len(s)] = s
        rate = self.config.dropout if train else 0.0
        hidden = forward_hidden(self.params, ids, self.config.n_layers,
                                self.config.n_heads, causal=False,
                                lengths=lengths, dropout_rate=rate,
                                stream=stream)
        cls = T.narrow(hidden, 1, 0, 1)
        return T.reshape(cls, (len(seqs), self.config.d_model))

    def token_states(self, ids: Sequence[int]) -> np.ndarray:
        """One encoder state per token, wrapped as [CLS] tokens [SEP]."""
        seq = np.asarray([[CLS_ID] + list(ids) + [SEP_ID]], dtype=np.int64)
        hidden = forward_hidden(self.params, seq, self.config.n_layers,
                                self.config.n_heads, causal=False)
        return hidden.data[0, 1:-1]


def _head(model: MtlModel, cls: Tensor, name: str, n_pairs: int) -> Tensor:
    logits = T.add(T.matmul(cls, model.params[name + "_w"]),
                   model.params[name + "_b"])
    return T.reshape(logits, (n_pairs, 2))


def batch_logits(model: MtlModel, inputs: Sequence[MtlInput], *,
                 train: bool = False, stream: Optional[RngStream] = None
                 ) -> tuple[Tensor, Tensor]:
    """Main and aux logits, each (n_instances, 2), from one encoder pass."""
    seqs = [s for inp in inputs for s in inp.main]
    seqs += [s for inp in inputs for s in inp.aux]
    cls = model.encode_cls(seqs, train=train, stream=stream)
    b = len(inputs)
    main = _head(model, T.narrow(cls, 0, 0, 2 * b), "head_main", b)
    aux = _head(model, T.narrow(cls, 0, 2 * b, 2 * b), "head_aux", b)
    return main, aux


@dataclass
class MtlForward:
    main_logits: Tensor  # (2,)
    aux_logits: Tensor   # (2,)
    cls_main: Tensor     # (2, d)
    cls_aux: Tensor      # (2, d)


def mtl_forward(model: MtlModel, inp: MtlInput, *, train: bool = False,
                stream: Optional[RngStream] = None) -> MtlForward:
    """Run the encoder over one instance's four sequences."""
    cls = model.encode_cls(list(inp.sequences), train=train, stream=stream)
    cls_main = T.narrow(cls, 0, 0, 2)
    cls_aux = T.narrow(cls, 0, 2, 2)
    main = T.reshape(_head(model, cls_main, "head_main", 1), (2,))
    aux = T.reshape(_head(model, cls_aux, "head_aux", 1), (2,))
    return MtlForward(main_logits=main, aux_logits=aux,
                      cls_main=cls_main, cls_aux=cls_aux)


@dataclass
class LossBreakdown:
    """total == main + weight * similarity, with total still on the tape."""

    total: Tensor
    main: float
    similarity: float
    weight: float


def joint_loss(main_logits: Tensor, aux_logits: Tensor,
               labels: Sequence[int], aux_labels: Sequence[int],
               weight: Tensor) -> LossBreakdown:
    """Cross-entropy of each softmaxed pair, combined as main + w * sim."""
    for name, got in (("labels", labels), ("aux_labels", aux_labels)):
        for v in got:
            if v not in (1, 2):
                raise DataError(f"{name} must contain only 1 or 2, got {v!r}")
    targets = np.asarray(labels, dtype=np.int64) - 1
    aux_targets = np.asarray(aux_labels, dtype=np.int64) - 1
    l_main = T.cross_entropy(main_logits, targets)
    l_sim = T.cross_entropy(aux_logits, aux_targets)
    total = T.add(l_main, T.mul(weight, l_sim))
    return LossBreakdown(total=total, main=l_main.item(),
                         similarity=l_sim.item(), weight=weight.item())


def aux_labels_for(instances: Sequence[AbductiveInstance], mode: str,
                   provider: Optional[EmbeddingProvider] = None) -> list[int]:
    """Auxiliary task labels: the gold label, or the similarity argmax.

    In bertscore mode an abstention (both generations degenerate) falls
    back to the gold label so training still sees a valid target.
    """
    if mode == "gold":
        return [inst.label for inst in instances]
    if mode != "bertscore":
        raise ValueError(f"unknown aux label mode {mode!r}")
    if provider is None:
        raise ValueError("bertscore aux labels need an embedding provider")
    out = []
    for inst in instances:
        record = select_unsupervised(inst, provider)
        out.append(record.prediction if record.prediction is not None
                   else inst.label)
    return out


@dataclass
class MtlEpoch:
    epoch: int
    loss: float
    loss_main: float
    loss_similarity: float
    weight: float
    train_accuracy: float
    dev_accuracy: Optional[float] = None


@dataclass
class MtlTrainReport:
    epochs: list[MtlEpoch]
    steps: int

    @property
    def weight_trajectory(self) -> list[float]:
        return [e.weight for e in self.epochs]


def _check_trainable(instances: Sequence[AbductiveInstance]) -> None:
    if not instances:
        raise DataError("cannot train on an empty instance set")
    for n, inst in enumerate(instances):
        if inst.label is None:
            raise DataError(f"instance {n} has no gold label")
        if not inst.has_generations:
            raise DataError(f"instance {n} has no generated next events; "
                            "run the generation stage first")


def train_mtl(model: MtlModel, instances: Sequence[AbductiveInstance],
              config: MtlConfig,
              dev_instances: Optional[Sequence[AbductiveInstance]] = None,
              provider: Optional[EmbeddingProvider] = None,
              log: Optional[Callable[[str], None]] = None) -> MtlTrainReport:
    """Adam over the joint loss, learning rate decayed linearly to zero."""
    _check_trainable(instances)
    inputs = [build_mtl_input(inst, model.vocab, config.max_seq_len)
              for inst in instances]
    if config.aux_label_mode == "bertscore" and provider is None:
        provider = StaticEmbeddings(dim=config.d_model, seed=config.seed)
    aux = aux_labels_for(instances, config.aux_label_mode, provider)

    n = len(inputs)
    total_steps = config.epochs * math.ceil(n / config.batch_size)
    opt = Adam(model.params, lr=config.learning_rate)
    root = RngStream("mtl-train", config.seed)
    use_dropout = config.dropout > 0.0

    epochs: list[MtlEpoch] = []
    step = 0
    for epoch in range(config.epochs):
        order = root.split(f"epoch{epoch}/shuffle").permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            batch = [inputs[i] for i in rows]
            labels = [inputs[i].label for i in rows]
            aux_batch = [aux[i] for i in rows]
            drop = (root.split(f"epoch{epoch}/step{step}/dropout")
                    if use_dropout else None)
            with Tape() as tape:
                main, aux_logits = batch_logits(model, batch, train=use_dropout,
                                                stream=drop)
                bd = joint_loss(main, aux_logits, labels, aux_batch,
                                model.params["loss_weight"])
            value = bd.total.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, step {step}")
            backward(bd.total, tape)
            opt.step(lr=linear_decay(config.learning_rate, step, total_steps))
            opt.zero_grad()
            sums += (value, bd.main, bd.similarity)
            batches += 1
            step += 1
        means = sums / batches
        entry = MtlEpoch(epoch=epoch, loss=float(means[0]),
                         loss_main=float(means[1]),
                         loss_similarity=float(means[2]),
                         weight=model.loss_weight,
                         train_accuracy=evaluate_mtl(model, instances).accuracy)
        if dev_instances:
            entry.dev_accuracy = evaluate_mtl(model, dev_instances).accuracy
        epochs.append(entry)
        if log is not None:
            dev = ("" if entry.dev_accuracy is None
                   else f" dev {entry.dev_accuracy:.3f}")
            log(f"mtl epoch {epoch}: loss {entry.loss:.4f} "
                f"(main {entry.loss_main:.4f}, sim {entry.loss_similarity:.4f}) "
                f"w {entry.weight:.4f} train {entry.train_accuracy:.3f}{dev}")
    return MtlTrainReport(epochs=epochs, steps=step)


@dataclass
class PredictionRecord:
    prediction: int
    aux_prediction: int
    main_logits: tuple[float, float]
    aux_logits: tuple[float, float]
    tie: bool = False
    aux_tie: bool = False
    gold: Optional[int] = None
    instance_id: Optional[str] = None

    @property
    def correct(self) -> Optional[bool]:
        if self.gold is None:
            return None
        return self.prediction == self.gold

    def to_dict(self) -> dict:
        out = {"prediction": self.prediction,
               "aux_prediction": self.aux_prediction,
               "main_logits": list(self.main_logits),
               "aux_logits": list(self.aux_logits),
               "tie": self.tie, "aux_tie": self.aux_tie}
        if self.gold is not None:
            out["gold"] = self.gold
            out["correct"] = self.correct
        if self.instance_id is not None:
            out["instance_id"] = self.instance_id
        return out


def _argmax_pair(pair: np.ndarray) -> tuple[int, bool]:
    tie = pair[0] == pair[1]
    return (1 if pair[0] >= pair[1] else 2), bool(tie)


def predict_batch(model: MtlModel,
                  instances: Sequence[AbductiveInstance],
                  chunk_size: int = 32) -> list[PredictionRecord]:
    records: list[PredictionRecord] = []
    # chunked so a large instance set never builds one giant encoder batch
    for start in range(0, len(instances), chunk_size):
        chunk = instances[start:start + chunk_size]
        inputs = [build_mtl_input(inst, model.vocab, model.config.max_seq_len)
                  for inst in chunk]
        main, aux = batch_logits(model, inputs)
        for n, inst in enumerate(chunk):
            pred, tie = _argmax_pair(main.data[n])
            aux_pred, aux_tie = _argmax_pair(aux.data[n])
            records.append(PredictionRecord(
                prediction=pred, aux_prediction=aux_pred,
                main_logits=(float(main.data[n, 0]), float(main.data[n, 1])),
                aux_logits=(float(aux.data[n, 0]), float(aux.data[n, 1])),
                tie=tie, aux_tie=aux_tie, gold=inst.label,
                instance_id=inst.instance_id))
    return records


def predict(model: MtlModel, instance: AbductiveInstance) -> PredictionRecord:
    return predict_batch(model, [instance])[0]


@dataclass
class MtlEvaluation:
    accuracy: float
    n: int
    n_correct: int
    n_ties: int
    records: list[PredictionRecord] = field(repr=False, default_factory=list)


def evaluate_mtl(model: MtlModel,
                 instances: Sequence[AbductiveInstance]) -> MtlEvaluation:
    if not instances:
        raise DataError("cannot evaluate an empty instance set")
    if any(inst.label is None for inst in instances):
        raise DataError("every instance must be labeled")
    records = predict_batch(model, instances)
    n_correct = sum(1 for r in records if r.correct)
    return MtlEvaluation(accuracy=n_correct / len(records), n=len(records),
                         n_correct=n_correct,
                         n_ties=sum(1 for r in records if r.tie),
                         records=records)
