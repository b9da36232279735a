"""Corpus ingestion, labelling and vocabulary.

Turns raw (title, body, keyphrases) records into ``Document`` objects
carrying everything training needs: sentence bounds, POS tags, the
present/absent keyphrase split, salience and extraction labels.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import voluptuous as vol

from .tagger import UNIVERSAL_TAGS, PosTagger, RuleTagger
from .text import (
    DIGIT_TOKEN,
    content_stems,
    normalize_tokens,
    porter_stem,
    sentence_bounds,
    stem_tokens,
    tokenize,
)

logger = logging.getLogger(__name__)

INGEST_ERROR = "INGEST_ERROR"
DUPLICATE_KEYPHRASE = "DUPLICATE_KEYPHRASE"

PAD, UNK, BOS, EOS, SEP = "<pad>", "<unk>", "<bos>", "<eos>", "<sep>"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, SEP, DIGIT_TOKEN)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, SEP_ID, DIGIT_ID = range(len(SPECIAL_TOKENS))

SPECIAL_TAG = "<sp>"
TAG_VOCAB = (PAD, SPECIAL_TAG) + UNIVERSAL_TAGS
TAG_PAD_ID, TAG_SPECIAL_ID = 0, 1

CHAR_PAD, CHAR_UNK = "<padchar>", "<unkchar>"
CHAR_VOCAB = (CHAR_PAD, CHAR_UNK) + tuple(chr(code) for code in range(32, 127))
CHAR_PAD_ID, CHAR_UNK_ID = 0, 1

Span = Tuple[int, int]
Phrase = Tuple[str, ...]


class IngestionError(Exception):
    """Raised when a raw example cannot be turned into a document."""


def _split_keyphrases(text: str) -> List[str]:
    return text.split(";")


_TEXT = vol.Any(str, None)

RAW_RECORD_SCHEMA = vol.Schema(
    {
        vol.Optional("id"): vol.Any(str, int),
        vol.Optional("title"): _TEXT,
        vol.Optional("body"): _TEXT,
        vol.Optional("abstract"): _TEXT,
        vol.Optional("keyphrases", default=list): vol.Any([str], vol.All(str, _split_keyphrases)),
        vol.Optional("tokens"): vol.Any([str], None),
        vol.Optional("pos"): vol.Any([str], None),
        vol.Optional("pos_tags"): vol.Any([str], None),
    },
    extra=vol.ALLOW_EXTRA,
)


# ── Records ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RawExample:
    doc_id: str
    title: str
    body: str
    keyphrases: Tuple[str, ...] = ()
    tokens: Optional[Tuple[str, ...]] = None
    pos_tags: Optional[Tuple[str, ...]] = None

    @classmethod
    def from_json(cls, record: Dict[str, Any], fallback_id: str = "") -> "RawExample":
        """Build from a JSON object (``body`` or ``abstract`` holds the text).

        Raises:
            IngestionError: On wrong field types.
        """
        try:
            record = RAW_RECORD_SCHEMA(record)
        except vol.Invalid as exc:
            field_name = ".".join(str(p) for p in exc.path) or "?"
            raise IngestionError(
                f"Example {record.get('id', fallback_id)!r}: invalid field '{field_name}' ({exc.msg})"
            ) from exc
        body = record.get("body") or record.get("abstract") or ""
        keyphrases = record["keyphrases"]
        tokens = record.get("tokens")
        tags = record.get("pos", record.get("pos_tags"))
        return cls(
            doc_id=str(record.get("id", fallback_id)),
            title=record.get("title") or "",
            body=body,
            keyphrases=tuple(str(kp) for kp in keyphrases),
            tokens=tuple(tokens) if tokens is not None else None,
            pos_tags=tuple(tags) if tags is not None else None,
        )


@dataclass(frozen=True)
class PhraseSplit:
    """Gold phrases divided by whether they occur in the document."""

    present: Tuple[Phrase, ...]
    spans: Tuple[Span, ...]
    absent: Tuple[Phrase, ...]


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: Tuple[str, ...]
    pos_tags: Tuple[str, ...]
    sentences: Tuple[Span, ...]
    keyphrases: Tuple[Phrase, ...] = ()
    present_phrases: Tuple[Phrase, ...] = ()
    present_spans: Tuple[Span, ...] = ()
    absent_phrases: Tuple[Phrase, ...] = ()
    absent_tags: Tuple[Tuple[str, ...], ...] = ()
    salience_labels: Tuple[int, ...] = ()
    extract_labels: Tuple[int, ...] = ()

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def segment_ids(self) -> Tuple[int, ...]:
        ids: List[int] = []
        for index, (start, end) in enumerate(self.sentences):
            ids.extend([index] * (end - start))
        return tuple(ids)

    def sentence_tokens(self, index: int) -> Tuple[str, ...]:
        start, end = self.sentences[index]
        return self.tokens[start:end]

    def sentence_tags(self, index: int) -> Tuple[str, ...]:
        start, end = self.sentences[index]
        return self.pos_tags[start:end]

    def to_json(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, record: Dict[str, Any]) -> "Document":
        def tuples(key: str) -> Tuple[Tuple[Any, ...], ...]:
            return tuple(tuple(item) for item in record.get(key, ()))

        return cls(
            doc_id=str(record["doc_id"]),
            tokens=tuple(record["tokens"]),
            pos_tags=tuple(record["pos_tags"]),
            sentences=tuples("sentences"),  # type: ignore[arg-type]
            keyphrases=tuples("keyphrases"),
            present_phrases=tuples("present_phrases"),
            present_spans=tuples("present_spans"),  # type: ignore[arg-type]
            absent_phrases=tuples("absent_phrases"),
            absent_tags=tuples("absent_tags"),
            salience_labels=tuple(record.get("salience_labels", ())),
            extract_labels=tuple(record.get("extract_labels", ())),
        )


@dataclass(frozen=True)
class SelectedInput:
    """Tokens of chosen sentences, concatenated in document order."""

    tokens: Tuple[str, ...]
    pos_tags: Tuple[str, ...]
    segment_ids: Tuple[int, ...]
    source_index: Tuple[int, ...]
    extract_labels: Tuple[int, ...]
    sentence_indices: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)


# ── Phrase matching and labels ──────────────────────────────────────


def find_occurrences(stems: Sequence[str], phrase_stems: Sequence[str]) -> List[Span]:
    width = len(phrase_stems)
    if width == 0:
        return []
    first = phrase_stems[0]
    target = tuple(phrase_stems)
    return [
        (i, i + width)
        for i in range(len(stems) - width + 1)
        if stems[i] == first and tuple(stems[i : i + width]) == target
    ]


def dedupe_phrases(phrases: Iterable[Phrase]) -> List[Phrase]:
    """Drop empty phrases and repeats by stemmed identity, keeping first order."""
    seen: set[Tuple[str, ...]] = set()
    unique: List[Phrase] = []
    for phrase in phrases:
        key = stem_tokens(phrase)
        if not phrase or key in seen:
            if phrase:
                logger.debug("[%s] %s", DUPLICATE_KEYPHRASE, " ".join(phrase))
            continue
        seen.add(key)
        unique.append(tuple(phrase))
    return unique


def split_phrases(tokens: Sequence[str], keyphrases: Sequence[Phrase]) -> PhraseSplit:
    """Divide gold phrases into present (all spans recorded) and absent."""
    stems = stem_tokens(tokens)
    present: List[Phrase] = []
    spans: List[Span] = []
    absent: List[Phrase] = []
    for phrase in dedupe_phrases(keyphrases):
        hits = find_occurrences(stems, stem_tokens(phrase))
        if hits:
            present.append(phrase)
            spans.extend(hits)
        else:
            absent.append(phrase)
    return PhraseSplit(tuple(present), tuple(sorted(set(spans))), tuple(absent))


def extraction_labels(n_tokens: int, spans: Sequence[Span]) -> Tuple[int, ...]:
    labels = [0] * n_tokens
    for start, end in spans:
        for t in range(start, end):
            labels[t] = 1
    return tuple(labels)


def label_salience(
    tokens: Sequence[str],
    sentences: Sequence[Span],
    present_spans: Sequence[Span],
    absent_phrases: Sequence[Phrase],
) -> Tuple[int, ...]:
    """One bit per sentence: holds a whole present span or shares a content
    stem with some absent phrase."""
    absent_stems = frozenset().union(*(content_stems(p) for p in absent_phrases))
    labels: List[int] = []
    for start, end in sentences:
        holds_span = any(start <= a and b <= end for a, b in present_spans)
        overlaps = bool(absent_stems & content_stems(tokens[start:end]))
        labels.append(int(holds_span or overlaps))
    return tuple(labels)


def order_absent_phrases(
    phrases: Sequence[Phrase], tokens: Sequence[str]
) -> List[Phrase]:
    """Phrases sharing any stemmed token with the source first (by first
    overlap position, stopwords included), then the rest by length;
    remaining ties alphabetical."""
    stems = stem_tokens(tokens)
    first_seen: Dict[str, int] = {}
    for position, stem in enumerate(stems):
        first_seen.setdefault(stem, position)

    def key(phrase: Phrase) -> Tuple[int, int, int, str]:
        hits = [first_seen[s] for s in stem_tokens(phrase) if s in first_seen]
        if hits:
            return (0, min(hits), len(phrase), " ".join(phrase))
        return (1, 0, len(phrase), " ".join(phrase))

    return sorted(phrases, key=key)


def build_decoder_target(
    phrases: Sequence[Phrase],
    tags: Sequence[Sequence[str]],
    vocab: "Vocab",
    *,
    source_oov: Sequence[str] = (),
    source_tokens: Optional[Sequence[str]] = None,
) -> Tuple[List[int], List[int]]:
    """Concatenate phrases as ``<bos> p1 <sep> p2 ... <eos>``.

    Words outside the vocabulary that occur in ``source_oov`` get extended
    ids past the vocabulary; other unknown words map to ``<unk>``.  When
    ``source_tokens`` is given the phrases are put in overlap order first.

    Raises:
        IngestionError: If a phrase and its tag sequence differ in length.
    """
    if len(phrases) != len(tags):
        raise IngestionError(
            f"{len(phrases)} absent phrases but {len(tags)} tag sequences"
        )
    paired = list(zip(phrases, tags))
    if source_tokens is not None:
        rank = {p: i for i, p in enumerate(order_absent_phrases(phrases, source_tokens))}
        paired.sort(key=lambda item: rank[tuple(item[0])])
    oov_index = {word: i for i, word in enumerate(source_oov)}

    ids = [BOS_ID]
    tag_ids = [TAG_SPECIAL_ID]
    for n, (phrase, phrase_tags) in enumerate(paired):
        if len(phrase) != len(phrase_tags):
            raise IngestionError(
                f"Phrase {' '.join(phrase)!r} has {len(phrase_tags)} tags"
            )
        if n:
            ids.append(SEP_ID)
            tag_ids.append(TAG_SPECIAL_ID)
        for word, tag in zip(phrase, phrase_tags):
            word_id = vocab.word_id(word)
            if word_id == UNK_ID and word in oov_index:
                word_id = len(vocab) + oov_index[word]
            ids.append(word_id)
            tag_ids.append(vocab.tag_id(tag))
    ids.append(EOS_ID)
    tag_ids.append(TAG_SPECIAL_ID)
    return ids, tag_ids


# ── Preprocessing ───────────────────────────────────────────────────


def _phrase_tokens(phrase: str) -> Phrase:
    return tuple(tokenize(phrase))


def preprocess(raw: RawExample, tagger: Optional[PosTagger] = None) -> Document:
    """Normalise a raw example and derive every label.

    The title forms sentence 0; the body is split on sentence terminators.

    Raises:
        IngestionError: If the body is empty or supplied tags do not align.
    """
    tagger = tagger or RuleTagger()
    if raw.tokens is None and not raw.body.strip():
        logger.error("[%s] empty body in %s", INGEST_ERROR, raw.doc_id)
        raise IngestionError(f"Example {raw.doc_id!r} has an empty body")

    if raw.tokens is not None:
        tokens = normalize_tokens(raw.tokens)
        if not tokens:
            raise IngestionError(f"Example {raw.doc_id!r} has no tokens")
        sentences = sentence_bounds(tokens)
    else:
        title = tokenize(raw.title)
        body = tokenize(raw.body)
        tokens = title + body
        sentences = ([(0, len(title))] if title else []) + [
            (start + len(title), end + len(title)) for start, end in sentence_bounds(body)
        ]

    if raw.pos_tags is not None:
        if len(raw.pos_tags) != len(tokens):
            raise IngestionError(
                f"Example {raw.doc_id!r}: {len(raw.pos_tags)} tags for "
                f"{len(tokens)} tokens"
            )
        pos_tags = [tag if tag in UNIVERSAL_TAGS else "X" for tag in raw.pos_tags]
    else:
        pos_tags = tagger.tag(tokens)

    keyphrases = dedupe_phrases(_phrase_tokens(kp) for kp in raw.keyphrases)
    split = split_phrases(tokens, keyphrases)
    absent = order_absent_phrases(split.absent, tokens)
    return Document(
        doc_id=raw.doc_id,
        tokens=tuple(tokens),
        pos_tags=tuple(pos_tags),
        sentences=tuple(sentences),
        keyphrases=tuple(keyphrases),
        present_phrases=split.present,
        present_spans=split.spans,
        absent_phrases=tuple(absent),
        absent_tags=tuple(tuple(tagger.tag(p)) for p in absent),
        salience_labels=label_salience(tokens, sentences, split.spans, absent),
        extract_labels=extraction_labels(len(tokens), split.spans),
    )


def reconstruct_raw(doc: Document) -> RawExample:
    """Rebuild a raw example whose preprocessing yields the same tokens."""
    title = " ".join(doc.sentence_tokens(0)) if doc.sentences else ""
    body_start = doc.sentences[1][0] if len(doc.sentences) > 1 else len(doc.tokens)
    return RawExample(
        doc_id=doc.doc_id,
        title=title,
        body=" ".join(doc.tokens[body_start:]),
        keyphrases=tuple(" ".join(p) for p in doc.keyphrases),
    )


def select_tokens(doc: Document, sentence_indices: Sequence[int]) -> SelectedInput:
    """Concatenate the chosen sentences, keeping their original segment ids."""
    tokens: List[str] = []
    tags: List[str] = []
    segments: List[int] = []
    index: List[int] = []
    for s in sorted(set(sentence_indices)):
        start, end = doc.sentences[s]
        tokens.extend(doc.tokens[start:end])
        tags.extend(doc.pos_tags[start:end])
        segments.extend([s] * (end - start))
        index.extend(range(start, end))
    labels = tuple(doc.extract_labels[i] for i in index) if doc.extract_labels else ()
    return SelectedInput(
        tokens=tuple(tokens),
        pos_tags=tuple(tags),
        segment_ids=tuple(segments),
        source_index=tuple(index),
        extract_labels=labels,
        sentence_indices=tuple(sorted(set(sentence_indices))),
    )


def truncate_input(selected: SelectedInput, max_len: int) -> SelectedInput:
    if len(selected) <= max_len:
        return selected
    return SelectedInput(
        tokens=selected.tokens[:max_len],
        pos_tags=selected.pos_tags[:max_len],
        segment_ids=selected.segment_ids[:max_len],
        source_index=selected.source_index[:max_len],
        extract_labels=selected.extract_labels[:max_len],
        sentence_indices=tuple(sorted(set(selected.segment_ids[:max_len]))),
    )


# ── Vocabulary ──────────────────────────────────────────────────────


@dataclass
class Vocab:
    """Word, character and tag id maps with specials at fixed low ids."""

    words: List[str]
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.words[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise IngestionError("Vocabulary must start with the special tokens")
        self._index = {}
        for i, word in enumerate(self.words):
            if word in self._index:
                raise IngestionError(f"Duplicate vocabulary word {word!r}")
            self._index[word] = i
        self._chars = {ch: i for i, ch in enumerate(CHAR_VOCAB)}
        self._tags = {tag: i for i, tag in enumerate(TAG_VOCAB)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: object) -> bool:
        return word in self._index

    @property
    def n_chars(self) -> int:
        return len(CHAR_VOCAB)

    @property
    def n_tags(self) -> int:
        return len(TAG_VOCAB)

    def word_id(self, word: str) -> int:
        return self._index.get(word, UNK_ID)

    def word(self, word_id: int) -> str:
        return self.words[word_id]

    def tag_id(self, tag: str) -> int:
        return self._tags.get(tag, self._tags["X"])

    def tag(self, tag_id: int) -> str:
        return TAG_VOCAB[tag_id]

    def char_ids(self, word: str, length: int) -> List[int]:
        """Character ids of ``word``, cut or padded to ``length``."""
        if word in SPECIAL_TOKENS and word != DIGIT_TOKEN:
            ids = [CHAR_UNK_ID]
        else:
            ids = [self._chars.get(ch, CHAR_UNK_ID) for ch in word[:length]]
        return ids + [CHAR_PAD_ID] * (length - len(ids))

    def char_matrix(self, words: Sequence[str], length: int) -> np.ndarray:
        return np.array(
            [self.char_ids(word, length) for word in words], dtype=np.int64
        ).reshape(len(words), length)

    def encode(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.word_id(w) for w in words], dtype=np.int64)

    def encode_tags(self, tags: Sequence[str]) -> np.ndarray:
        return np.array([self.tag_id(t) for t in tags], dtype=np.int64)

    def extend_source(self, tokens: Sequence[str]) -> Tuple[np.ndarray, List[str]]:
        """Extended ids for a source: out-of-vocabulary words get ids past
        the vocabulary, one per distinct word in first-occurrence order."""
        oov: List[str] = []
        ext: List[int] = []
        for word in tokens:
            word_id = self.word_id(word)
            if word_id == UNK_ID and word != UNK:
                if word not in oov:
                    oov.append(word)
                word_id = len(self) + oov.index(word)
            ext.append(word_id)
        return np.array(ext, dtype=np.int64), oov

    def lookup_extended(self, word_id: int, oov: Sequence[str]) -> str:
        if word_id < len(self):
            return self.words[word_id]
        return oov[word_id - len(self)]

    def save(self, path: Path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IngestionError(f"Cannot read vocabulary {path}: {exc}") from exc
        return cls([line for line in lines if line])


def build_vocab(docs: Iterable[Document], size: int) -> Vocab:
    """Specials followed by the ``size`` most frequent words (ties by spelling)."""
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(doc.tokens)
        for phrase in doc.absent_phrases:
            counts.update(phrase)
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return Vocab(list(SPECIAL_TOKENS) + [word for word, _ in ranked[:size]])


# ── JSON-lines I/O ──────────────────────────────────────────────────


def read_raw_examples(path: Path) -> Iterator[RawExample]:
    """Yield raw examples from a JSON-lines file.

    Raises:
        IngestionError: On malformed JSON, naming the line number.
    """
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise IngestionError(f"{path}:{line_no}: expected a JSON object")
            yield RawExample.from_json(record, fallback_id=f"doc-{line_no}")


def write_documents(path: Path, docs: Iterable[Document]) -> int:
    count = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(json.dumps(doc.to_json(), sort_keys=True) + "\n")
            count += 1
    return count


def read_documents(path: Path) -> List[Document]:
    docs: List[Document] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                docs.append(Document.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestionError(f"{path}:{line_no}: bad document record ({exc})") from exc
    return docs


def load_documents(path: Path, tagger: Optional[PosTagger] = None) -> List[Document]:
    """Documents from JSON lines holding either preprocessed documents or raw
    examples; raw records are preprocessed on the fly.

    Raises:
        IngestionError: On malformed lines or records that cannot be processed.
    """
    tagger = tagger or RuleTagger()
    docs: List[Document] = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise IngestionError(f"{path}:{line_no}: expected a JSON object")
            if "tokens" in record and "sentences" in record:
                try:
                    docs.append(Document.from_json(record))
                except (KeyError, TypeError) as exc:
                    raise IngestionError(f"{path}:{line_no}: bad document record ({exc})") from exc
            else:
                raw = RawExample.from_json(record, fallback_id=f"doc-{line_no}")
                docs.append(preprocess(raw, tagger))
    return docs


# ── Statistics ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class DatasetStats:
    documents: int
    max_tokens: int
    avg_tokens: float
    max_sentences: int
    avg_sentences: float
    non_salient_pct: float
    max_phrase_len: int
    avg_phrase_len: float
    avg_keyphrases: float
    present_pct: float
    absent_pct: float
    absent_terms_in_present_pct: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def dataset_stats(docs: Sequence[Document]) -> DatasetStats:
    """Corpus summary in the shape of a dataset-statistics table."""
    if not docs:
        return DatasetStats(0, 0, 0.0, 0, 0.0, 0.0, 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    n = len(docs)
    present = sum(len(d.present_phrases) for d in docs)
    absent = sum(len(d.absent_phrases) for d in docs)
    phrases = [p for d in docs for p in d.keyphrases]
    sentences = sum(d.n_sentences for d in docs)
    salient = sum(sum(d.salience_labels) for d in docs)

    shared = total = 0
    for doc in docs:
        present_stems = frozenset(
            porter_stem(token) for phrase in doc.present_phrases for token in phrase
        )
        for phrase in doc.absent_phrases:
            stems = stem_tokens(phrase)
            total += len(stems)
            shared += sum(1 for stem in stems if stem in present_stems)

    def pct(part: float, whole: float) -> float:
        return 100.0 * part / whole if whole else 0.0

    return DatasetStats(
        documents=n,
        max_tokens=max(len(d.tokens) for d in docs),
        avg_tokens=sum(len(d.tokens) for d in docs) / n,
        max_sentences=max(d.n_sentences for d in docs),
        avg_sentences=sentences / n,
        non_salient_pct=pct(sentences - salient, sentences),
        max_phrase_len=max((len(p) for p in phrases), default=0),
        avg_phrase_len=sum(len(p) for p in phrases) / len(phrases) if phrases else 0.0,
        avg_keyphrases=len(phrases) / n,
        present_pct=pct(present, present + absent),
        absent_pct=pct(absent, present + absent),
        absent_terms_in_present_pct=pct(shared, total),
    )


# ── Synthetic corpora ───────────────────────────────────────────────

_TOPICS = (
    ("documents index search", "information retrieval"),
    ("pixels images camera", "computer vision"),
    ("audio acoustic phonemes", "signal processing"),
    ("sentences words grammar", "natural language understanding"),
    ("vertices edges paths", "network science"),
)

_PRESENT_POOL = (
    "neural ranking",
    "query expansion",
    "topic model",
    "spectral clustering",
    "sparse coding",
    "beam search",
    "entity linking",
    "dependency parsing",
    "image hashing",
    "speech recognition",
    "graph kernel",
    "active sampling",
)

_FILLER = (
    "we propose a novel method .",
    "experiments show strong results .",
    "the approach is simple and fast .",
    "our evaluation covers several benchmarks .",
    "results improve over strong baselines .",
)


def synthetic_corpus(n_docs: int, seed: int = 13) -> List[RawExample]:
    """Deterministic toy corpus of short documents (under 30 tokens): two
    present and one absent phrase each, the absent phrase implied by topic
    cue words.  Filler sentences are the only non-salient ones."""
    rng = np.random.default_rng(seed)
    examples: List[RawExample] = []
    for i in range(n_docs):
        cues, absent = _TOPICS[int(rng.integers(len(_TOPICS)))]
        first, second = (
            _PRESENT_POOL[j] for j in rng.choice(len(_PRESENT_POOL), 2, replace=False)
        )
        cue = cues.split()
        filler = _FILLER[int(rng.integers(len(_FILLER)))]
        body = " ".join(
            [
                f"we study {first} on {cue[0]} and {cue[1]} .",
                filler,
                f"the {second} step uses {cue[2]} .",
            ]
        )
        examples.append(
            RawExample(
                doc_id=f"toy-{i:03d}",
                title=f"{first} for {cue[0]}",
                body=body,
                keyphrases=(first, second, absent),
            )
        )
    return examples
