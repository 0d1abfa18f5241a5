"""Estimator wrappers with the scikit-learn fit/transform/predict surface.

Each wrapper keeps its constructor arguments verbatim (so get_params and
set_params work) and builds the underlying model in fit.  Inputs are the
package's own story and instance records rather than feature matrices;
predictions come back as integer arrays over the candidate indices.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .data import DataError, Vocab
from .infill import DecodeSpec, LmConfig, LmModel, generate_for_instances, train_lm
from .mtl import MtlConfig, MtlModel, predict_batch, train_mtl
from .simscore import StaticEmbeddings, select_unsupervised

# predict() output for an instance whose hypotheses both lack a scoreable
# generated event; 0 never collides with the candidate indices 1 and 2
ABSTAIN = 0


def _instance_texts(instances) -> list[str]:
    texts = []
    for inst in instances:
        texts.extend((inst.obs1, inst.obs2, inst.hyp1, inst.hyp2))
        for gen in (inst.gen1, inst.gen2):
            if gen:
                texts.append(gen)
    return texts


class InfillingLm(BaseEstimator, TransformerMixin):
    """Infilling language model: fit on stories, transform instances by
    decoding one hypothetical next event per candidate hypothesis."""

    def __init__(self, d_model=64, n_layers=2, n_heads=2, max_seq_len=128,
                 dropout=0.1, learning_rate=5e-4, batch_size=12, epochs=30,
                 seed=0, min_count=1, decode_strategy="greedy", decode_k=5,
                 max_new_tokens=19):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_seq_len = max_seq_len
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.min_count = min_count
        self.decode_strategy = decode_strategy
        self.decode_k = decode_k
        self.max_new_tokens = max_new_tokens

    def fit(self, X, y=None):
        stories = list(X)
        if not stories:
            raise DataError("fit needs at least one story")
        config = LmConfig(d_model=self.d_model, n_layers=self.n_layers,
                          n_heads=self.n_heads, max_seq_len=self.max_seq_len,
                          dropout=self.dropout,
                          learning_rate=self.learning_rate,
                          batch_size=self.batch_size, epochs=self.epochs,
                          seed=self.seed)
        self.vocab_ = Vocab.build(
            (text for story in stories for text in story.all_texts()),
            self.min_count)
        self.model_ = LmModel(config, self.vocab_)
        report = train_lm(self.model_, stories, config)
        self.history_ = list(report.epoch_losses)
        self.n_stories_ = len(stories)
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise DataError("transform called before fit")
        spec = DecodeSpec(strategy=self.decode_strategy, k=self.decode_k,
                          max_new_tokens=self.max_new_tokens, seed=self.seed)
        return generate_for_instances(self.model_, list(X), spec)


class HypothesisSelector(BaseEstimator, ClassifierMixin):
    """Unsupervised selector: predicts the hypothesis whose generated next
    event is most similar to the second observation.

    provider is any object with embed(text) -> (tokens, matrix); when left
    unset a hash-seeded static table is used.  Instances whose generations
    are both empty come back as ABSTAIN (0).
    """

    def __init__(self, provider=None, dim=64, seed=0):
        self.provider = provider
        self.dim = dim
        self.seed = seed

    def fit(self, X=None, y=None):
        # no trainable state; fit exists for pipeline compatibility
        self.provider_ = (self.provider if self.provider is not None
                          else StaticEmbeddings(self.dim, self.seed))
        return self

    def predict(self, X):
        if not hasattr(self, "provider_"):
            self.fit()
        predictions = []
        for inst in X:
            record = select_unsupervised(inst, self.provider_)
            predictions.append(ABSTAIN if record.abstained
                               else record.prediction)
        return np.asarray(predictions, dtype=int)

    def score_records(self, X) -> list:
        """Per-instance selection records with both similarity scores."""
        if not hasattr(self, "provider_"):
            self.fit()
        return [select_unsupervised(inst, self.provider_) for inst in X]


class MtlClassifier(BaseEstimator, ClassifierMixin):
    """Two-head classifier over generated events with a trained loss weight.

    X is a sequence of instances carrying generations; labels default to
    the instances' own gold labels, and passing y overrides them.
    """

    def __init__(self, d_model=64, n_layers=2, n_heads=4, max_seq_len=96,
                 dropout=0.1, learning_rate=2e-3, batch_size=32, epochs=30,
                 seed=0, aux_label_mode="gold", min_count=1, provider=None):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_seq_len = max_seq_len
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.aux_label_mode = aux_label_mode
        self.min_count = min_count
        self.provider = provider

    def fit(self, X, y=None):
        instances = list(X)
        if not instances:
            raise DataError("fit needs at least one instance")
        if y is not None:
            labels = list(y)
            if len(labels) != len(instances):
                raise DataError(f"{len(labels)} labels for "
                                f"{len(instances)} instances")
            instances = [dataclasses.replace(inst, label=label)
                         for inst, label in zip(instances, labels)]
        if any(inst.label is None for inst in instances):
            raise DataError("every training instance needs a label")
        config = MtlConfig(d_model=self.d_model, n_layers=self.n_layers,
                           n_heads=self.n_heads,
                           max_seq_len=self.max_seq_len,
                           dropout=self.dropout,
                           learning_rate=self.learning_rate,
                           batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed,
                           aux_label_mode=self.aux_label_mode)
        self.vocab_ = Vocab.build(_instance_texts(instances), self.min_count)
        self.model_ = MtlModel(config, self.vocab_)
        report = train_mtl(self.model_, instances, config,
                           provider=self.provider)
        self.history_ = list(report.epochs)
        self.loss_weight_ = self.model_.loss_weight
        self.classes_ = np.array([1, 2])
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise DataError("predict called before fit")
        records = predict_batch(self.model_, list(X))
        return np.asarray([r.prediction for r in records], dtype=int)

    def predict_proba(self, X):
        if not hasattr(self, "model_"):
            raise DataError("predict_proba called before fit")
        records = predict_batch(self.model_, list(X))
        logits = np.asarray([r.main_logits for r in records], dtype=float)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)
