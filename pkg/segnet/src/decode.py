"""Inference: sentence selection, extraction and greedy generation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from .arraycore import ContractError, no_grad
from .config import ModelConfig
from .corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SEP_ID,
    Document,
    Phrase,
    select_tokens,
    truncate_input,
)
from .extgen import ExtGenModel, build_encoder_input, extract_spans
from .selector import (
    SelectorModel,
    lead_sentences,
    oracle_sentences,
    score_document,
    select_sentences,
)
from .text import stem_tokens

logger = logging.getLogger(__name__)

EMPTY_DOCUMENT = "EMPTY_DOCUMENT"
SELECTION_MODES = ("model", "lead", "oracle")

Trigram = Tuple[int, int, int]
StepFn = Callable[[List[int]], np.ndarray]


@dataclass(frozen=True)
class PredictionSet:
    doc_id: str
    present: List[str] = field(default_factory=list)
    absent: List[str] = field(default_factory=list)
    absent_tags: List[List[str]] = field(default_factory=list)
    trace: List[str] = field(default_factory=list)

    def to_json(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, record: Dict[str, Any]) -> "PredictionSet":
        return cls(
            doc_id=str(record["doc_id"]),
            present=[str(p) for p in record.get("present", [])],
            absent=[str(p) for p in record.get("absent", [])],
            absent_tags=[list(t) for t in record.get("absent_tags", [])],
            trace=[str(t) for t in record.get("trace", [])],
        )


# ── Greedy search ───────────────────────────────────────────────────


def greedy_search(
    step_fn: StepFn,
    bos: int = BOS_ID,
    eos: int = EOS_ID,
    sep: int = SEP_ID,
    max_len: int = 40,
    banned: Iterable[int] = (PAD_ID, BOS_ID),
) -> List[int]:
    """Greedy decoding that never emits the same trigram twice.

    ``step_fn`` receives the prefix (starting with ``bos``) and returns a
    distribution over the next token.  Trigrams touching ``bos`` or ``sep``
    are exempt.  Ties go to the lower id.  If every candidate is blocked the
    search emits ``eos``.

    Returns:
        Generated ids without ``bos``; ends with ``eos`` unless ``max_len``
        was reached first.
    """
    delimiters = {bos, sep}
    banned_ids = list(banned)
    prefix = [bos]
    seen: Set[Trigram] = set()
    for _ in range(max_len):
        scores = np.array(step_fn(list(prefix)), dtype=np.float64, copy=True)
        scores[[i for i in banned_ids if i < scores.size]] = -np.inf
        if len(prefix) >= 2 and not delimiters.intersection(prefix[-2:]):
            for a, b, c in seen:
                if (a, b) == (prefix[-2], prefix[-1]):
                    scores[c] = -np.inf
        best = int(np.argmax(scores))
        choice = best if np.isfinite(scores[best]) else eos
        prefix.append(choice)
        if len(prefix) >= 3:
            gram = (prefix[-3], prefix[-2], prefix[-1])
            if not delimiters.intersection(gram):
                seen.add(gram)
        if choice == eos:
            break
    return prefix[1:]


def repeated_trigrams(ids: Sequence[int], sep: int = SEP_ID, bos: int = BOS_ID) -> List[Trigram]:
    """Trigrams (without delimiters) that occur more than once in ``ids``."""
    counts: Dict[Trigram, int] = {}
    for i in range(len(ids) - 2):
        gram = (ids[i], ids[i + 1], ids[i + 2])
        if sep in gram or bos in gram:
            continue
        counts[gram] = counts.get(gram, 0) + 1
    return sorted(gram for gram, n in counts.items() if n > 1)


@dataclass(frozen=True)
class DecodedSequence:
    ids: List[int]
    tags: List[int]


def greedy_decode(model: ExtGenModel, session: Any, max_len: int = 40) -> DecodedSequence:
    """Run ``greedy_search`` over ``model.decode_step`` and record the argmax
    tag emitted alongside every token."""
    tags: List[int] = []

    def step(prefix: List[int]) -> np.ndarray:
        out = model.decode_step(prefix, session)
        tags.append(int(np.argmax(out.tag_dist)))
        return out.vocab_dist

    ids = greedy_search(step, max_len=max_len)
    return DecodedSequence(ids=ids, tags=tags[: len(ids)])


@dataclass(frozen=True)
class SplitPhrase:
    ids: Tuple[int, ...]
    tags: Tuple[int, ...]


def split_decoded(ids: Sequence[int], tags: Optional[Sequence[int]] = None) -> List[SplitPhrase]:
    """Cut a decoded sequence at ``<sep>``, dropping ``<bos>``/``<eos>``/``<pad>``
    and empty segments; tags are sliced the same way."""
    aligned = list(tags) if tags is not None else [0] * len(ids)
    if len(aligned) != len(ids):
        raise ContractError(f"{len(aligned)} tags for {len(ids)} decoded ids")
    phrases: List[SplitPhrase] = []
    words: List[int] = []
    word_tags: List[int] = []
    for token, tag in zip(ids, aligned):
        if token in (SEP_ID, EOS_ID):
            if words:
                phrases.append(SplitPhrase(tuple(words), tuple(word_tags)))
            words, word_tags = [], []
            if token == EOS_ID:
                break
            continue
        if token in (BOS_ID, PAD_ID):
            continue
        words.append(token)
        word_tags.append(tag)
    if words:
        phrases.append(SplitPhrase(tuple(words), tuple(word_tags)))
    return phrases


# ── Pipeline ────────────────────────────────────────────────────────


def _choose_sentences(
    doc: Document,
    selector: Optional[SelectorModel],
    selection: str,
    budget: int,
    threshold: float,
) -> List[int]:
    if selection == "lead":
        return lead_sentences(doc, budget)
    if selection == "oracle":
        return oracle_sentences(doc, budget)
    if selector is None:
        raise ContractError("model selection needs a selector")
    return select_sentences(doc, score_document(selector, doc), budget, threshold)


def _unique_by_stem(phrases: Iterable[Tuple[Phrase, Any]], taken: Set[Phrase]) -> List[Tuple[Phrase, Any]]:
    kept = []
    for phrase, extra in phrases:
        key = stem_tokens(phrase)
        if not phrase or key in taken:
            continue
        taken.add(key)
        kept.append((phrase, extra))
    return kept


def predict(
    doc: Document,
    selector: Optional[SelectorModel],
    extgen: ExtGenModel,
    config: ModelConfig,
    *,
    selection: str = "model",
    budget: Optional[int] = None,
    threshold: Optional[float] = None,
    max_len: Optional[int] = None,
    filter_cross_duplicates: bool = True,
) -> PredictionSet:
    """Present and absent keyphrases for one document.

    Present phrases are runs of tokens at or above
    ``config.extract_threshold``; their positions are blocked for copying while the
    decoder generates absent phrases.  ``threshold`` only affects sentence
    selection.
    Phrases are deduplicated by stem within each list and, unless
    ``filter_cross_duplicates`` is false, absent phrases equal to a present
    one are dropped.
    """
    if selection not in SELECTION_MODES:
        raise ContractError(f"Unknown selection mode '{selection}'")
    budget = config.max_src_len if budget is None else budget
    threshold = config.threshold if threshold is None else threshold
    max_len = config.max_decode_len if max_len is None else max_len
    if not doc.tokens:
        logger.warning("[%s] %s has no tokens", EMPTY_DOCUMENT, doc.doc_id)
        return PredictionSet(doc.doc_id)

    indices = _choose_sentences(doc, selector, selection, budget, threshold) or [0]
    selected = truncate_input(select_tokens(doc, indices), config.max_src_len)
    if not len(selected):
        logger.warning("[%s] %s: selected sentences are empty", EMPTY_DOCUMENT, doc.doc_id)
        return PredictionSet(doc.doc_id)

    vocab = extgen.vocab
    extgen.eval()
    with no_grad():
        source = build_encoder_input(selected, vocab, extgen.config, extgen.char_length)
        layers = extgen.encode(source)
        probs = extgen.extract_probs(layers[-1]).values
        spans = extract_spans(
            probs, source.tokens, source.sentence_ids, config.extract_threshold
        )
        blocked = np.zeros(len(source), dtype=bool)
        for span in spans:
            blocked[span.start : span.end] = True
        session = extgen.start_session(source, blocked, layers)
        decoded = greedy_decode(extgen, session, max_len)

    taken: Set[Phrase] = set()
    present = _unique_by_stem(((span.tokens, None) for span in spans), taken)
    if not filter_cross_duplicates:
        taken = set()
    generated = []
    for piece in split_decoded(decoded.ids, decoded.tags):
        words = tuple(vocab.lookup_extended(i, source.oov) for i in piece.ids)
        generated.append((words, [vocab.tag(t) for t in piece.tags]))
    absent = _unique_by_stem(generated, taken)

    return PredictionSet(
        doc_id=doc.doc_id,
        present=[" ".join(phrase) for phrase, _ in present],
        absent=[" ".join(phrase) for phrase, _ in absent],
        absent_tags=[tags for _, tags in absent],
        trace=[vocab.lookup_extended(i, source.oov) for i in decoded.ids],
    )


def predict_corpus(
    docs: Sequence[Document],
    selector: Optional[SelectorModel],
    extgen: ExtGenModel,
    config: ModelConfig,
    *,
    threads: int = 1,
    **options: Any,
) -> List[PredictionSet]:
    """``predict`` over many documents; results keep the input order."""
    extgen.eval()
    if selector is not None:
        selector.eval()

    def run(doc: Document) -> PredictionSet:
        return predict(doc, selector, extgen, config, **options)

    if threads <= 1:
        return [run(doc) for doc in docs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, docs))


def write_predictions(path: Path, predictions: Iterable[PredictionSet]) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for prediction in predictions:
            handle.write(json.dumps(prediction.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def read_predictions(path: Path) -> Iterator[PredictionSet]:
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield PredictionSet.from_json(json.loads(line))
