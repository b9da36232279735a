"""Sentence selector: salience classifier and budgeted sentence selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .arraycore import (
    ContractError,
    DiffArray,
    Module,
    batch_norm,
    concat,
    max_,
    maxout,
    mean,
    no_grad,
    sigmoid,
    stack_rows,
    xavier_uniform,
)
from .config import ModelConfig
from .corpus import Document, Vocab
from .neural import DropoutSource, EmbeddingLayer, EncoderStack

logger = logging.getLogger(__name__)

SELECTION_FALLBACK = "SELECTION_FALLBACK"


@dataclass(frozen=True)
class SentenceInput:
    """Id arrays for one sentence, ready for the embedding layer."""

    word_ids: np.ndarray
    tag_ids: np.ndarray
    positions: np.ndarray
    segment_ids: np.ndarray
    char_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.word_ids)


def sentence_input(
    doc: Document, index: int, vocab: Vocab, config: ModelConfig, char_length: int
) -> SentenceInput:
    """Encode sentence ``index`` of ``doc``; long sentences are cut to
    ``max_src_len`` and late segment ids share the last segment row."""
    tokens = doc.sentence_tokens(index)[: config.max_src_len]
    tags = doc.sentence_tags(index)[: config.max_src_len]
    segment = min(index, config.max_sentences - 1)
    return SentenceInput(
        word_ids=vocab.encode(tokens),
        tag_ids=vocab.encode_tags(tags),
        positions=np.arange(len(tokens), dtype=np.int64),
        segment_ids=np.full(len(tokens), segment, dtype=np.int64),
        char_ids=vocab.char_matrix(tokens, char_length),
    )


class BatchNorm(Module):
    def __init__(self, width: int, name: str, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_parameter("gamma", np.ones(width))
        self.beta = self.add_parameter("beta", np.zeros(width))
        self.running_mean = self.add_parameter("running_mean", np.zeros(width), trainable=False)
        self.running_var = self.add_parameter("running_var", np.ones(width), trainable=False)

    def forward(self, x: DiffArray) -> DiffArray:
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class SelectorModel(Module):
    """Encoder, max+mean pooling, three batch-normalised maxout layers."""

    def __init__(self, config: ModelConfig, vocab: Vocab, name: str = "selector") -> None:
        super().__init__(name)
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.vocab = vocab
        self.drop = DropoutSource(config.dropout, config.seed + 1)
        d = config.d_model
        half = max(d // 2, 1)
        k = config.maxout_pieces
        self.embedding = self.add_module(
            EmbeddingLayer(
                config, len(vocab), vocab.n_tags, vocab.n_chars, rng, self.child_name("embedding")
            )
        )
        self.encoder = self.add_module(
            EncoderStack(
                config, rng, self.child_name("encoder"), self.drop, n_layers=config.selector_layers
            )
        )
        self.W1 = self.add_parameter("W1", xavier_uniform(rng, (2 * d, d * k)))
        self.b1 = self.add_parameter("b1", np.zeros(d * k))
        self.norm1 = self.add_module(BatchNorm(d, self.child_name("norm1")))
        self.W2 = self.add_parameter("W2", xavier_uniform(rng, (d, half * k)))
        self.b2 = self.add_parameter("b2", np.zeros(half * k))
        self.norm2 = self.add_module(BatchNorm(half, self.child_name("norm2")))
        self.W3 = self.add_parameter("W3", xavier_uniform(rng, (half, k)))
        self.b3 = self.add_parameter("b3", np.zeros(k))

    @property
    def char_length(self) -> int:
        return self.embedding.char_length

    def pool(self, sentence: SentenceInput) -> DiffArray:
        """Max and mean pooled top-layer encoding, shape [2 * d_model].

        Raises:
            ContractError: If the sentence is empty.
        """
        if len(sentence) == 0:
            raise ContractError("Cannot score an empty sentence")
        embedded = self.embedding.embed_source(
            sentence.word_ids,
            sentence.tag_ids,
            sentence.positions,
            sentence.segment_ids,
            sentence.char_ids,
        )
        top = self.encoder.forward(embedded)[-1]
        return concat([max_(top, axis=0), mean(top, axis=0)], axis=0)

    def forward(self, sentences: Sequence[SentenceInput]) -> DiffArray:
        """Salience probabilities for a batch of sentences ([batch])."""
        pooled = stack_rows([self.pool(sentence) for sentence in sentences])
        k = self.config.maxout_pieces
        x = self.norm1.forward(maxout(pooled, self.W1, self.b1, k))
        x = self.drop(x, self.training)
        x = self.norm2.forward(maxout(x, self.W2, self.b2, k))
        x = self.drop(x, self.training)
        logits = maxout(x, self.W3, self.b3, k)
        return sigmoid(logits).reshape(len(sentences))

    def inputs_for(self, doc: Document) -> List[SentenceInput]:
        return [
            sentence_input(doc, i, self.vocab, self.config, self.char_length)
            for i in range(doc.n_sentences)
        ]


def score_sentence(model: SelectorModel, sentence: SentenceInput) -> float:
    """Salience probability of one sentence in evaluation mode."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            return float(model.forward([sentence]).values[0])
    finally:
        model.train(was_training)


def score_document(model: SelectorModel, doc: Document) -> List[float]:
    """Probability for every sentence of ``doc`` in evaluation mode."""
    if doc.n_sentences == 0:
        return []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            probs = model.forward(model.inputs_for(doc)).values
    finally:
        model.train(was_training)
    return [float(p) for p in probs]


def _lengths(doc: Document) -> List[int]:
    return [end - start for start, end in doc.sentences]


def lead_sentences(doc: Document, budget: int = 200) -> List[int]:
    """Leading sentences up to ``budget`` words, stopping at the first overflow."""
    chosen: List[int] = []
    used = 0
    for index, length in enumerate(_lengths(doc)):
        if used + length > budget:
            break
        chosen.append(index)
        used += length
    return chosen


def select_sentences(
    doc: Document,
    probs: Sequence[float],
    budget: int = 200,
    threshold: float = 0.5,
) -> List[int]:
    """Sentences with ``p >= threshold`` in document order, skipping any that
    would exceed ``budget`` words; falls back to the leading sentences."""
    if len(probs) != doc.n_sentences:
        raise ContractError(
            f"{len(probs)} probabilities for {doc.n_sentences} sentences in {doc.doc_id}"
        )
    chosen: List[int] = []
    used = 0
    for index, (p, length) in enumerate(zip(probs, _lengths(doc))):
        if p >= threshold and used + length <= budget:
            chosen.append(index)
            used += length
    if not chosen:
        logger.debug("[%s] %s: no sentence above %.2f", SELECTION_FALLBACK, doc.doc_id, threshold)
        chosen = lead_sentences(doc, budget)
    return chosen


def oracle_sentences(doc: Document, budget: int = 200) -> List[int]:
    """Selection driven by the gold salience labels."""
    return select_sentences(doc, [float(bit) for bit in doc.salience_labels], budget, 0.5)


@dataclass(frozen=True)
class SelectionScores:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> Dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _prf(hits: int, selected: int, gold: int) -> SelectionScores:
    precision = hits / selected if selected else 0.0
    recall = hits / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SelectionScores(precision, recall, f1)


def selection_metrics(
    pairs: Iterable[Tuple[Sequence[int], Sequence[int]]]
) -> SelectionScores:
    """Micro-averaged precision/recall/F1 over (selected indices, gold bits) pairs."""
    hits = selected = gold = 0
    for indices, bits in pairs:
        positives = {i for i, bit in enumerate(bits) if bit}
        picked = set(indices)
        hits += len(picked & positives)
        selected += len(picked)
        gold += len(positives)
    return _prf(hits, selected, gold)


def selection_report(
    model: Optional[SelectorModel],
    docs: Sequence[Document],
    budget: int = 200,
    threshold: float = 0.5,
) -> Dict[str, SelectionScores]:
    """Model selection against the lead baseline on the same documents."""
    report = {
        "lead": selection_metrics(
            (lead_sentences(doc, budget), doc.salience_labels) for doc in docs
        )
    }
    if model is not None:
        report["model"] = selection_metrics(
            (select_sentences(doc, score_document(model, doc), budget, threshold), doc.salience_labels)
            for doc in docs
        )
    return report
