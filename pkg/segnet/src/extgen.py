"""Extractor-generator model.

One encoder over the selected sentences feeds two heads: a per-token
extractor for present keyphrases and a decoder that generates absent
keyphrases as one ``<sep>``-delimited sequence.  The decoder mixes a
vocabulary softmax with copy attention over source tokens that were not
extracted, and a POS-tag head reads an intermediate decoder layer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .arraycore import (
    ContractError,
    DiffArray,
    Module,
    concat,
    linear,
    scatter_columns,
    sigmoid,
    softmax_rows,
    tanh,
    xavier_uniform,
)
from .config import ModelConfig
from .corpus import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    Document,
    SelectedInput,
    Vocab,
    build_decoder_target,
    dedupe_phrases,
)
from .neural import (
    CoverageStateError,
    DecoderCache,
    DecoderStack,
    DropoutSource,
    EmbeddingLayer,
    EncoderStack,
)

logger = logging.getLogger(__name__)

TARGET_TRUNCATED = "TARGET_TRUNCATED"


# ── Inputs ──────────────────────────────────────────────────────────


@dataclass(frozen=True)
class EncoderInput:
    tokens: Tuple[str, ...]
    word_ids: np.ndarray
    tag_ids: np.ndarray
    positions: np.ndarray
    segment_ids: np.ndarray
    sentence_ids: np.ndarray
    char_ids: np.ndarray
    ext_ids: np.ndarray
    oov: Tuple[str, ...]
    extract_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class DecoderInput:
    """Target ids (extended vocabulary) and the decoder's shifted inputs."""

    target_ids: np.ndarray
    target_tags: np.ndarray
    input_word_ids: np.ndarray
    input_char_ids: np.ndarray


def build_encoder_input(
    selected: SelectedInput, vocab: Vocab, config: ModelConfig, char_length: int
) -> EncoderInput:
    ext_ids, oov = vocab.extend_source(selected.tokens)
    sentences = np.asarray(selected.segment_ids, dtype=np.int64)
    return EncoderInput(
        tokens=selected.tokens,
        word_ids=vocab.encode(selected.tokens),
        tag_ids=vocab.encode_tags(selected.pos_tags),
        positions=np.arange(len(selected), dtype=np.int64),
        segment_ids=np.minimum(sentences, config.max_sentences - 1),
        sentence_ids=sentences,
        char_ids=vocab.char_matrix(selected.tokens, char_length),
        ext_ids=ext_ids,
        oov=tuple(oov),
        extract_labels=np.asarray(selected.extract_labels, dtype=np.int64),
    )


def decoder_inputs_for(
    target_ids: Sequence[int],
    target_tags: Sequence[int],
    source: EncoderInput,
    vocab: Vocab,
    config: ModelConfig,
    char_length: int,
) -> DecoderInput:
    """Shift a target sequence into decoder inputs, cutting it to
    ``max_decode_len`` predicted steps (the last kept step becomes ``<eos>``)."""
    ids = list(target_ids)
    tags = list(target_tags)
    if len(ids) - 1 > config.max_decode_len:
        logger.debug("[%s] %d steps cut to %d", TARGET_TRUNCATED, len(ids) - 1, config.max_decode_len)
        ids = ids[: config.max_decode_len] + [EOS_ID]
        tags = tags[: config.max_decode_len] + [tags[-1]]
    inputs = ids[:-1]
    surfaces = [vocab.lookup_extended(i, source.oov) for i in inputs]
    return DecoderInput(
        target_ids=np.asarray(ids, dtype=np.int64),
        target_tags=np.asarray(tags, dtype=np.int64),
        input_word_ids=np.asarray([i if i < len(vocab) else UNK_ID for i in inputs], dtype=np.int64),
        input_char_ids=vocab.char_matrix(surfaces, char_length),
    )


def build_decoder_input(
    doc: Document, source: EncoderInput, vocab: Vocab, config: ModelConfig, char_length: int
) -> DecoderInput:
    ids, tags = build_decoder_target(
        doc.absent_phrases, doc.absent_tags, vocab, source_oov=source.oov
    )
    return decoder_inputs_for(ids, tags, source, vocab, config, char_length)


# ── Outputs ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class CopyContext:
    """What copy attention needs from the source side."""

    encoder_top: DiffArray
    blocked: np.ndarray
    source_ext_ids: np.ndarray
    extended_size: int

    @property
    def fully_blocked(self) -> bool:
        return bool(self.blocked.all())


@dataclass(frozen=True)
class StepOutput:
    vocab_dist: np.ndarray
    tag_dist: np.ndarray
    gate: float
    copy_weights: np.ndarray


@dataclass(frozen=True)
class ForwardOutput:
    extract_probs: DiffArray
    vocab_dists: DiffArray
    tag_dists: DiffArray
    gates: Optional[DiffArray]
    copy_weights: Optional[DiffArray]


@dataclass(frozen=True)
class PhraseSpan:
    """A present phrase and its half-open token span in the encoder input."""

    start: int
    end: int
    tokens: Tuple[str, ...]


@dataclass
class DecodingSession:
    """Per-document decoding state: encoder outputs, copy context, cache."""

    encoder_layers: List[DiffArray]
    copy: CopyContext
    cache: DecoderCache
    oov: Tuple[str, ...]


# ── Model ───────────────────────────────────────────────────────────


class ExtGenModel(Module):
    def __init__(self, config: ModelConfig, vocab: Vocab, name: str = "extgen") -> None:
        super().__init__(name)
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.vocab = vocab
        self.drop = DropoutSource(config.dropout, config.seed + 1)
        d = config.d_model
        self.tag_layer = config.pos_tag_layer
        self.embedding = self.add_module(
            EmbeddingLayer(
                config, len(vocab), vocab.n_tags, vocab.n_chars, rng, self.child_name("embedding")
            )
        )
        self.encoder = self.add_module(EncoderStack(config, rng, self.child_name("encoder"), self.drop))
        self.W_r1 = self.add_parameter("W_r1", xavier_uniform(rng, (d, d)))
        self.b_r1 = self.add_parameter("b_r1", np.zeros(d))
        self.W_r2 = self.add_parameter("W_r2", xavier_uniform(rng, (d, 1)))
        self.b_r2 = self.add_parameter("b_r2", np.zeros(1))
        self.decoder = self.add_module(DecoderStack(config, rng, self.child_name("decoder"), self.drop))
        self.W_v = self.add_parameter("W_v", xavier_uniform(rng, (d, len(vocab))))
        self.b_v = self.add_parameter("b_v", np.zeros(len(vocab)))
        self.W_tag = self.add_parameter("W_tag", xavier_uniform(rng, (d, vocab.n_tags)))
        self.b_tag = self.add_parameter("b_tag", np.zeros(vocab.n_tags))
        self.W_att = self.add_parameter("W_att", xavier_uniform(rng, (d, d)))
        self.W_u = self.add_parameter("W_u", xavier_uniform(rng, (2 * d, 1)))
        self.b_u = self.add_parameter("b_u", np.zeros(1))

    @property
    def char_length(self) -> int:
        return self.embedding.char_length

    # -- encoder side -------------------------------------------------

    def encode(self, source: EncoderInput) -> List[DiffArray]:
        """Outputs of every encoder layer for the selected input.

        Raises:
            ContractError: If the input is empty or longer than ``max_src_len``.
        """
        n = len(source)
        if n == 0 or n > self.config.max_src_len:
            raise ContractError(
                f"encoder input has {n} tokens (allowed 1..{self.config.max_src_len})"
            )
        embedded = self.embedding.embed_source(
            source.word_ids, source.tag_ids, source.positions, source.segment_ids, source.char_ids
        )
        return self.encoder.forward(embedded)

    def extract_probs(self, top: DiffArray) -> DiffArray:
        hidden = tanh(linear(top, self.W_r1, self.b_r1))
        return sigmoid(linear(hidden, self.W_r2, self.b_r2)).reshape(top.shape[0])

    def copy_context(
        self, source: EncoderInput, encoder_layers: Sequence[DiffArray], blocked: Optional[np.ndarray]
    ) -> CopyContext:
        if blocked is None or not self.config.informed_copy:
            blocked = np.zeros(len(source), dtype=bool)
        blocked = np.asarray(blocked, dtype=bool)
        if blocked.shape != (len(source),):
            raise ContractError(f"{blocked.shape[0]} block bits for {len(source)} source tokens")
        return CopyContext(
            encoder_top=encoder_layers[-1],
            blocked=blocked,
            source_ext_ids=source.ext_ids,
            extended_size=len(self.vocab) + len(source.oov),
        )

    # -- output heads -------------------------------------------------

    def _distributions(
        self, top: DiffArray, tag_rows: DiffArray, copy: CopyContext
    ) -> Tuple[DiffArray, DiffArray, Optional[DiffArray], Optional[DiffArray]]:
        steps = top.shape[0]
        generated = softmax_rows(linear(top, self.W_v, self.b_v))
        extra = copy.extended_size - len(self.vocab)
        if extra:
            generated = concat([generated, DiffArray(np.zeros((steps, extra)))], axis=1)
        tags = softmax_rows(linear(tag_rows, self.W_tag, self.b_tag))
        if copy.fully_blocked:
            return generated, tags, None, None

        scores = top @ linear(copy.encoder_top, self.W_att).T
        weights = softmax_rows(scores, mask=~copy.blocked[None, :])
        context = weights @ copy.encoder_top
        gate = sigmoid(linear(concat([top, context], axis=1), self.W_u, self.b_u))
        copied = scatter_columns(weights, copy.source_ext_ids, copy.extended_size)
        final = (1.0 - gate) * generated + gate * copied
        return final, tags, gate, weights

    def teacher_forced_forward(
        self,
        source: EncoderInput,
        target: DecoderInput,
        blocked: Optional[np.ndarray] = None,
    ) -> ForwardOutput:
        """All decoding steps in one causal pass.

        Copy blocking defaults to the gold extraction labels of ``source``.

        Raises:
            ContractError: If the target is longer than ``max_decode_len`` steps.
        """
        steps = len(target.input_word_ids)
        if steps > self.config.max_decode_len:
            raise ContractError(
                f"target has {steps} steps, max_decode_len is {self.config.max_decode_len}"
            )
        layers = self.encode(source)
        probs = self.extract_probs(layers[-1])
        if blocked is None and len(source.extract_labels) == len(source):
            blocked = source.extract_labels.astype(bool)
        copy = self.copy_context(source, layers, blocked)
        embedded = self.embedding.embed_target(target.input_word_ids, target.input_char_ids)
        hidden = self.decoder.forward(embedded, layers)
        final, tags, gate, weights = self._distributions(
            hidden[-1], hidden[self.tag_layer - 1], copy
        )
        return ForwardOutput(probs, final, tags, gate, weights)

    # -- incremental decoding -----------------------------------------

    def start_session(
        self,
        source: EncoderInput,
        blocked: Optional[np.ndarray],
        encoder_layers: Optional[List[DiffArray]] = None,
    ) -> DecodingSession:
        layers = encoder_layers if encoder_layers is not None else self.encode(source)
        return DecodingSession(
            encoder_layers=layers,
            copy=self.copy_context(source, layers, blocked),
            cache=self.decoder.start(),
            oov=source.oov,
        )

    def decode_step(self, prefix: Sequence[int], session: DecodingSession) -> StepOutput:
        """Distributions for the token after ``prefix``.

        ``prefix`` must extend the prefix of the previous call by one token.

        Raises:
            ContractError: If ``prefix`` does not start with ``<bos>``.
            CoverageStateError: If ``prefix`` is out of step with the session.
        """
        if not prefix or prefix[0] != BOS_ID:
            raise ContractError("decoder prefix must start with <bos>")
        if len(prefix) != session.cache.length + 1:
            raise CoverageStateError(
                f"session has consumed {session.cache.length} tokens, "
                f"prefix has {len(prefix)}"
            )
        token = int(prefix[-1])
        surface = self.vocab.lookup_extended(token, session.oov)
        word_id = token if token < len(self.vocab) else UNK_ID
        embedded = self.embedding.embed_target(
            np.asarray([word_id]), self.vocab.char_matrix([surface], self.char_length)
        )
        rows = self.decoder.step(embedded, session.encoder_layers, session.cache)
        final, tags, gate, weights = self._distributions(
            rows[-1], rows[self.tag_layer - 1], session.copy
        )
        n = len(session.copy.blocked)
        return StepOutput(
            vocab_dist=final.values[0].copy(),
            tag_dist=tags.values[0].copy(),
            gate=float(gate.values[0, 0]) if gate is not None else 0.0,
            copy_weights=weights.values[0].copy() if weights is not None else np.zeros(n),
        )


# ── Span assembly ───────────────────────────────────────────────────


def extract_spans(
    probs: Sequence[float],
    tokens: Sequence[str],
    sentence_ids: Optional[Sequence[int]] = None,
    threshold: float = 0.5,
) -> List[PhraseSpan]:
    """Maximal runs of tokens at or above ``threshold``, split at sentence
    boundaries and deduplicated by stemmed identity."""
    if len(probs) != len(tokens):
        raise ContractError(f"{len(probs)} probabilities for {len(tokens)} tokens")
    sentences = list(sentence_ids) if sentence_ids is not None else [0] * len(tokens)
    runs: List[Tuple[int, int]] = []
    start: Optional[int] = None
    for j, p in enumerate(probs):
        inside = p >= threshold
        if start is not None and (not inside or sentences[j] != sentences[j - 1]):
            runs.append((start, j))
            start = None
        if inside and start is None:
            start = j
    if start is not None:
        runs.append((start, len(tokens)))

    spans: List[PhraseSpan] = []
    kept = set(dedupe_phrases(tuple(tokens[a:b]) for a, b in runs))
    for a, b in runs:
        phrase = tuple(tokens[a:b])
        if phrase in kept:
            spans.append(PhraseSpan(a, b, phrase))
            kept.discard(phrase)
    return spans
