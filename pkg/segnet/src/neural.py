"""Transformer building blocks.

Embedding layer, attention heads (absolute or clipped-relative positions),
coverage-modified encoder-decoder attention, feed-forward and layer-norm
sublayers, and encoder/decoder stacks with layer-wise coordination: decoder
layer ``i`` attends encoder layer ``i`` rather than the top of the stack.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arraycore import (
    ContractError,
    DiffArray,
    DimensionError,
    Module,
    Parameter,
    concat,
    conv1d,
    dropout,
    embedding,
    exclusive_logcumsumexp,
    layer_norm,
    linear,
    max_,
    normal_init,
    relu,
    scatter_columns,
    softmax_rows,
    take_columns,
    tanh,
    xavier_uniform,
)
from .config import ModelConfig
from .corpus import CHAR_PAD_ID

logger = logging.getLogger(__name__)


class CoverageStateError(Exception):
    """Raised when a coverage state is used out of step order."""


class ConfigurationError(Exception):
    """Raised when stacks are wired with inconsistent depths."""


class DropoutSource:
    """Seeded dropout shared by every sublayer of one model."""

    def __init__(self, rate: float, seed: int) -> None:
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def __call__(self, x: DiffArray, training: bool) -> DiffArray:
        return dropout(x, self.rate, self.rng, training)


# ── Embeddings ──────────────────────────────────────────────────────


class EmbeddingLayer(Module):
    """Sum of word, POS, absolute position, segment and character vectors."""

    def __init__(
        self,
        config: ModelConfig,
        n_words: int,
        n_tags: int,
        n_chars: int,
        rng: np.random.Generator,
        name: str = "embedding",
    ) -> None:
        super().__init__(name)
        d = config.d_model
        self.config = config
        self.word = self.add_parameter("word", normal_init(rng, (n_words, d)))
        self.tag = self.add_parameter("tag", normal_init(rng, (n_tags, d)))
        self.position = self.add_parameter(
            "position", normal_init(rng, (config.max_src_len, d))
        )
        self.segment = self.add_parameter(
            "segment", normal_init(rng, (config.max_sentences, d))
        )
        self.char = self.add_parameter(
            "char", normal_init(rng, (n_chars, config.char_embed_dim))
        )
        self.char_filter = self.add_parameter(
            "char_filter",
            xavier_uniform(
                rng, (config.char_width, config.char_embed_dim, config.char_filters)
            ),
        )
        self.char_bias = self.add_parameter("char_bias", np.zeros(config.char_filters))

    @property
    def char_length(self) -> int:
        return max(self.config.max_word_len, self.config.char_width)

    def char_features(self, char_ids: np.ndarray) -> DiffArray:
        """Max-pooled CNN features of each token's characters ([n x F])."""
        char_ids = np.asarray(char_ids, dtype=np.int64)
        if char_ids.shape[1] < self.config.char_width:
            pad = self.config.char_width - char_ids.shape[1]
            char_ids = np.pad(char_ids, ((0, 0), (0, pad)), constant_values=CHAR_PAD_ID)
        chars = embedding(self.char, char_ids)
        return max_(tanh(conv1d(chars, self.char_filter, self.char_bias)), axis=1)

    def embed_source(
        self,
        word_ids: np.ndarray,
        tag_ids: np.ndarray,
        positions: np.ndarray,
        segment_ids: np.ndarray,
        char_ids: np.ndarray,
    ) -> DiffArray:
        """Row ``t`` is the sum of the five embeddings of source token ``t``.

        Raises:
            DimensionError: If the id sequences differ in length.
            LookupRangeError: If an id falls outside its table.
        """
        n = len(word_ids)
        lengths = {len(tag_ids), len(positions), len(segment_ids), len(char_ids)}
        if lengths != {n}:
            raise DimensionError(
                f"embed_source: sequence lengths differ ({n} words vs {sorted(lengths)})"
            )
        out = embedding(self.word, word_ids) + embedding(self.position, positions)
        if self.config.use_pos_embedding:
            out = out + embedding(self.tag, tag_ids)
        if self.config.use_segment_embedding:
            out = out + embedding(self.segment, segment_ids)
        if self.config.use_char_embedding:
            out = out + self.char_features(char_ids)
        return out

    def embed_target(self, word_ids: np.ndarray, char_ids: np.ndarray) -> DiffArray:
        """Decoder tokens carry only word and character vectors."""
        if len(word_ids) != len(char_ids):
            raise DimensionError(
                f"embed_target: {len(word_ids)} words but {len(char_ids)} char rows"
            )
        out = embedding(self.word, word_ids)
        if self.config.use_char_embedding:
            out = out + self.char_features(char_ids)
        return out


# ── Attention ───────────────────────────────────────────────────────


class AttentionHead(Module):
    """Query/key/value projections plus optional relative position tables."""

    def __init__(
        self,
        d_model: int,
        d_k: int,
        d_v: int,
        rng: np.random.Generator,
        name: str,
        relative_clip: Optional[int] = None,
    ) -> None:
        super().__init__(name)
        self.d_k = d_k
        self.Wq = self.add_parameter("Wq", xavier_uniform(rng, (d_model, d_k)))
        self.Wk = self.add_parameter("Wk", xavier_uniform(rng, (d_model, d_k)))
        self.Wv = self.add_parameter("Wv", xavier_uniform(rng, (d_model, d_v)))
        self.relative_clip = relative_clip
        self.rel_key: Optional[Parameter] = None
        self.rel_value: Optional[Parameter] = None
        if relative_clip is not None:
            rows = 2 * relative_clip + 1
            self.rel_key = self.add_parameter("rel_key", normal_init(rng, (rows, d_k)))
            self.rel_value = self.add_parameter("rel_value", normal_init(rng, (rows, d_v)))

    def scores(self, queries: DiffArray, keys: DiffArray) -> Tuple[DiffArray, DiffArray]:
        """Scaled dot-product scores and the projected queries."""
        q = linear(queries, self.Wq)
        k = linear(keys, self.Wk)
        return (q @ k.T) * (1.0 / math.sqrt(self.d_k)), q


def relative_index(query_positions: np.ndarray, n_keys: int, clip: int) -> np.ndarray:
    """Row ``i`` holds ``clip(j - p_i, -clip, clip) + clip`` for each key ``j``."""
    offsets = np.arange(n_keys)[None, :] - np.asarray(query_positions)[:, None]
    return np.clip(offsets, -clip, clip) + clip


def attend(
    queries: DiffArray,
    keys_values: DiffArray,
    head: AttentionHead,
    mask: Optional[np.ndarray] = None,
    *,
    relative: bool = False,
    query_positions: Optional[Sequence[int]] = None,
    dropout_fn: Optional[Callable[[DiffArray], DiffArray]] = None,
) -> Tuple[DiffArray, DiffArray]:
    """One attention head.

    With ``relative`` the clipped relative-position key vectors are added to
    the scores and the value vectors to the output.  Queries sit at
    positions ``0..m-1`` unless ``query_positions`` says otherwise.

    Returns:
        The attended output [m x d_v] and the attention weights [m x n].

    Raises:
        ContractError: On relative attention without tables, or across
            sequences of different length without explicit positions.
        InvalidMaskError: If the mask hides a whole row.
    """
    m, n = queries.shape[0], keys_values.shape[0]
    scores, q = head.scores(queries, keys_values)
    index = None
    if relative:
        if head.rel_key is None or head.rel_value is None or head.relative_clip is None:
            raise ContractError(f"Head {head.name} has no relative position tables")
        if query_positions is None:
            if m != n:
                raise ContractError(
                    f"relative attention needs self-attention, got {m} queries "
                    f"over {n} keys"
                )
            query_positions = range(m)
        index = relative_index(np.asarray(query_positions), n, head.relative_clip)
        rel_scores = take_columns(q @ head.rel_key.T, index)
        scores = scores + rel_scores * (1.0 / math.sqrt(head.d_k))
    weights = softmax_rows(scores, mask)
    used = dropout_fn(weights) if dropout_fn is not None else weights
    out = used @ linear(keys_values, head.Wv)
    if index is not None:
        width = 2 * head.relative_clip + 1  # type: ignore[operator]
        out = out + scatter_columns(used, index, width) @ head.rel_value  # type: ignore[operator]
    return out, weights


def coverage_scores(scores: DiffArray) -> DiffArray:
    """Scores of every decoding step divided by the summed exponentiated
    scores of the earlier steps, in log space; step 0 is unchanged."""
    return scores - exclusive_logcumsumexp(scores)


@dataclass
class CoverageState:
    """Per (layer, head) running log-sum of exponentiated scores."""

    n_layers: int
    n_heads: int
    log_sums: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    steps: Dict[Tuple[int, int], int] = field(default_factory=dict)

    def step_of(self, layer: int, head: int) -> int:
        return self.steps.get((layer, head), 0)

    def accumulator(self, layer: int, head: int) -> np.ndarray:
        """Sum over earlier steps of ``exp(score)`` for every source position."""
        if (layer, head) not in self.log_sums:
            raise CoverageStateError(f"No coverage history for layer {layer} head {head}")
        return np.exp(self.log_sums[(layer, head)])

    def record(self, layer: int, head: int, scores: np.ndarray) -> None:
        key = (layer, head)
        if key in self.log_sums:
            self.log_sums[key] = np.logaddexp(self.log_sums[key], scores)
        else:
            self.log_sums[key] = np.array(scores, dtype=np.float64)
        self.steps[key] = self.steps.get(key, 0) + 1

    def reset(self) -> None:
        self.log_sums.clear()
        self.steps.clear()


def attend_with_coverage(
    query: DiffArray,
    keys_values: DiffArray,
    head: AttentionHead,
    state: CoverageState,
    t: int,
    layer: int,
    head_index: int,
) -> Tuple[DiffArray, DiffArray]:
    """Encoder-decoder attention for decoding step ``t`` (1-based).

    Raises:
        CoverageStateError: If ``state`` has not seen exactly ``t - 1`` steps
            for this layer and head.
    """
    seen = state.step_of(layer, head_index)
    if t < 1 or seen != t - 1:
        raise CoverageStateError(
            f"coverage state for layer {layer} head {head_index} holds {seen} steps, "
            f"step {t} expects {t - 1}"
        )
    scores, _ = head.scores(query, keys_values)
    adjusted = scores if t == 1 else scores - state.log_sums[(layer, head_index)]
    weights = softmax_rows(adjusted)
    state.record(layer, head_index, scores.values.reshape(-1))
    return weights @ linear(keys_values, head.Wv), weights


class MultiHeadAttention(Module):
    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator,
        name: str,
        drop: DropoutSource,
        relative: bool = False,
    ) -> None:
        super().__init__(name)
        clip = config.relative_clip if relative else None
        self.relative = relative
        self.drop = drop
        self.heads = [
            self.add_module(
                AttentionHead(
                    config.d_model,
                    config.d_k,
                    config.d_v,
                    rng,
                    self.child_name(f"head{i}"),
                    relative_clip=clip,
                )
            )
            for i in range(config.n_heads)
        ]
        self.Wo = self.add_parameter(
            "Wo", xavier_uniform(rng, (config.n_heads * config.d_v, config.d_model))
        )
        self.bo = self.add_parameter("bo", np.zeros(config.d_model))

    def _merge(self, outputs: Sequence[DiffArray]) -> DiffArray:
        return linear(concat(list(outputs), axis=1), self.Wo, self.bo)

    def _drop_weights(self, weights: DiffArray) -> DiffArray:
        return self.drop(weights, self.training)

    def forward(
        self,
        queries: DiffArray,
        keys_values: DiffArray,
        mask: Optional[np.ndarray] = None,
        query_positions: Optional[Sequence[int]] = None,
    ) -> Tuple[DiffArray, List[DiffArray]]:
        outputs, weights = [], []
        for head in self.heads:
            out, w = attend(
                queries,
                keys_values,
                head,
                mask,
                relative=self.relative,
                query_positions=query_positions,
                dropout_fn=self._drop_weights,
            )
            outputs.append(out)
            weights.append(w)
        return self._merge(outputs), weights

    def forward_coverage(
        self, queries: DiffArray, keys_values: DiffArray
    ) -> Tuple[DiffArray, List[DiffArray]]:
        """Coverage attention for all decoding steps at once (teacher forcing)."""
        outputs, weights = [], []
        for head in self.heads:
            scores, _ = head.scores(queries, keys_values)
            w = softmax_rows(coverage_scores(scores))
            outputs.append(self._drop_weights(w) @ linear(keys_values, head.Wv))
            weights.append(w)
        return self._merge(outputs), weights

    def forward_coverage_step(
        self,
        query: DiffArray,
        keys_values: DiffArray,
        state: CoverageState,
        t: int,
        layer: int,
    ) -> Tuple[DiffArray, List[DiffArray]]:
        outputs, weights = [], []
        for index, head in enumerate(self.heads):
            out, w = attend_with_coverage(query, keys_values, head, state, t, layer, index)
            outputs.append(out)
            weights.append(w)
        return self._merge(outputs), weights


# ── Sublayers ───────────────────────────────────────────────────────


class LayerNorm(Module):
    def __init__(self, width: int, name: str) -> None:
        super().__init__(name)
        self.gamma = self.add_parameter("gamma", np.ones(width))
        self.beta = self.add_parameter("beta", np.zeros(width))

    def forward(self, x: DiffArray) -> DiffArray:
        return layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, name: str) -> None:
        super().__init__(name)
        self.W1 = self.add_parameter("W1", xavier_uniform(rng, (config.d_model, config.d_ff)))
        self.b1 = self.add_parameter("b1", np.zeros(config.d_ff))
        self.W2 = self.add_parameter("W2", xavier_uniform(rng, (config.d_ff, config.d_model)))
        self.b2 = self.add_parameter("b2", np.zeros(config.d_model))

    def forward(self, x: DiffArray) -> DiffArray:
        return linear(relu(linear(x, self.W1, self.b1)), self.W2, self.b2)


class EncoderLayer(Module):
    def __init__(
        self, config: ModelConfig, rng: np.random.Generator, name: str, drop: DropoutSource
    ) -> None:
        super().__init__(name)
        self.drop = drop
        self.attention = self.add_module(
            MultiHeadAttention(config, rng, self.child_name("attention"), drop)
        )
        self.norm1 = self.add_module(LayerNorm(config.d_model, self.child_name("norm1")))
        self.ffn = self.add_module(FeedForward(config, rng, self.child_name("ffn")))
        self.norm2 = self.add_module(LayerNorm(config.d_model, self.child_name("norm2")))

    def forward(self, x: DiffArray, mask: Optional[np.ndarray] = None) -> DiffArray:
        attended, _ = self.attention.forward(x, x, mask)
        x = self.norm1.forward(x + self.drop(attended, self.training))
        return self.norm2.forward(x + self.drop(self.ffn.forward(x), self.training))


class EncoderStack(Module):
    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator,
        name: str,
        drop: DropoutSource,
        n_layers: Optional[int] = None,
    ) -> None:
        super().__init__(name)
        self.drop = drop
        depth = n_layers if n_layers is not None else config.n_layers
        self.layers = [
            self.add_module(EncoderLayer(config, rng, self.child_name(f"layer{i}"), drop))
            for i in range(depth)
        ]

    def forward(self, embedded: DiffArray, mask: Optional[np.ndarray] = None) -> List[DiffArray]:
        """Outputs of every layer, bottom first."""
        x = self.drop(embedded, self.training)
        outputs: List[DiffArray] = []
        for layer in self.layers:
            x = layer.forward(x, mask)
            outputs.append(x)
        return outputs


class DecoderLayer(Module):
    """Relative self-attention, coverage encoder attention, feed-forward."""

    def __init__(
        self, config: ModelConfig, rng: np.random.Generator, name: str, drop: DropoutSource
    ) -> None:
        super().__init__(name)
        self.drop = drop
        self.use_coverage = config.use_coverage
        self.self_attention = self.add_module(
            MultiHeadAttention(config, rng, self.child_name("self_attention"), drop, relative=True)
        )
        self.norm1 = self.add_module(LayerNorm(config.d_model, self.child_name("norm1")))
        self.cross_attention = self.add_module(
            MultiHeadAttention(config, rng, self.child_name("cross_attention"), drop)
        )
        self.norm2 = self.add_module(LayerNorm(config.d_model, self.child_name("norm2")))
        self.ffn = self.add_module(FeedForward(config, rng, self.child_name("ffn")))
        self.norm3 = self.add_module(LayerNorm(config.d_model, self.child_name("norm3")))

    def _finish(self, y: DiffArray, attended: DiffArray) -> DiffArray:
        y = self.norm2.forward(y + self.drop(attended, self.training))
        return self.norm3.forward(y + self.drop(self.ffn.forward(y), self.training))

    def forward(self, y: DiffArray, memory: DiffArray) -> DiffArray:
        steps = y.shape[0]
        causal = np.tril(np.ones((steps, steps), dtype=bool))
        attended, _ = self.self_attention.forward(y, y, causal)
        y = self.norm1.forward(y + self.drop(attended, self.training))
        if self.use_coverage:
            cross, _ = self.cross_attention.forward_coverage(y, memory)
        else:
            cross, _ = self.cross_attention.forward(y, memory)
        return self._finish(y, cross)

    def step(
        self,
        history: DiffArray,
        memory: DiffArray,
        state: CoverageState,
        t: int,
        layer: int,
    ) -> DiffArray:
        """Output row for position ``t - 1`` given this layer's inputs so far."""
        query = history[t - 1 : t]
        attended, _ = self.self_attention.forward(query, history, query_positions=[t - 1])
        y = self.norm1.forward(query + self.drop(attended, self.training))
        if self.use_coverage:
            cross, _ = self.cross_attention.forward_coverage_step(y, memory, state, t, layer)
        else:
            cross, _ = self.cross_attention.forward(y, memory)
        return self._finish(y, cross)


@dataclass
class DecoderCache:
    """Per-layer input rows seen so far during incremental decoding."""

    inputs: List[List[DiffArray]]
    coverage: CoverageState

    @property
    def length(self) -> int:
        return len(self.inputs[0]) if self.inputs else 0


class DecoderStack(Module):
    def __init__(
        self, config: ModelConfig, rng: np.random.Generator, name: str, drop: DropoutSource
    ) -> None:
        super().__init__(name)
        self.config = config
        self.drop = drop
        self.layers = [
            self.add_module(DecoderLayer(config, rng, self.child_name(f"layer{i}"), drop))
            for i in range(config.n_layers)
        ]

    def _memory(self, encoder_layers: Sequence[DiffArray], i: int) -> DiffArray:
        if self.config.layerwise_coordination:
            return encoder_layers[i]
        return encoder_layers[-1]

    def _check_depth(self, encoder_layers: Sequence[DiffArray]) -> None:
        if len(encoder_layers) != len(self.layers):
            raise ConfigurationError(
                f"decoder has {len(self.layers)} layers but received "
                f"{len(encoder_layers)} encoder outputs"
            )

    def forward(
        self, embedded: DiffArray, encoder_layers: Sequence[DiffArray]
    ) -> List[DiffArray]:
        """Teacher-forced outputs of every decoder layer.

        Raises:
            ConfigurationError: If encoder and decoder depths differ.
        """
        self._check_depth(encoder_layers)
        y = self.drop(embedded, self.training)
        outputs: List[DiffArray] = []
        for i, layer in enumerate(self.layers):
            y = layer.forward(y, self._memory(encoder_layers, i))
            outputs.append(y)
        return outputs

    def start(self) -> DecoderCache:
        return DecoderCache(
            inputs=[[] for _ in self.layers],
            coverage=CoverageState(len(self.layers), self.config.n_heads),
        )

    def step(
        self,
        embedded: DiffArray,
        encoder_layers: Sequence[DiffArray],
        cache: DecoderCache,
    ) -> List[DiffArray]:
        """Feed one new target embedding ([1 x d]); returns each layer's new row."""
        self._check_depth(encoder_layers)
        t = cache.length + 1
        y = self.drop(embedded, self.training)
        outputs: List[DiffArray] = []
        for i, layer in enumerate(self.layers):
            cache.inputs[i].append(y)
            history = concat(cache.inputs[i], axis=0)
            y = layer.step(history, self._memory(encoder_layers, i), cache.coverage, t, i)
            outputs.append(y)
        return outputs
