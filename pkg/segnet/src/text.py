"""Text normalisation: tokenising, digit folding, sentence splits, stemming."""

from __future__ import annotations

import functools
import re
from pathlib import Path
from typing import FrozenSet, List, Sequence, Tuple

from nltk.stem.porter import PorterStemmer

DIGIT_TOKEN = "<digit>"
SENTENCE_END = frozenset({".", "?", "!"})

_TOKEN_RE = re.compile(r"(?:<digit>|[^\W_])+|\S")
_DIGITS_RE = re.compile(r"\d+")

STOPWORDS_PATH = Path(__file__).with_name("stopwords.txt")

_stemmer = PorterStemmer(mode=PorterStemmer.MARTIN_EXTENSIONS)


def _load_stopwords(path: Path = STOPWORDS_PATH) -> FrozenSet[str]:
    words = path.read_text(encoding="utf-8").split()
    return frozenset(word.strip().lower() for word in words if word.strip())


STOPWORDS: FrozenSet[str] = _load_stopwords()


def fold_digits(token: str) -> str:
    """Replace every maximal digit run with the digit placeholder."""
    return _DIGITS_RE.sub(DIGIT_TOKEN, token)


def tokenize(text: str) -> List[str]:
    """Lowercase, split into word and punctuation tokens, fold digits.

    Applying ``tokenize`` to ``" ".join(tokenize(text))`` returns the same
    tokens.
    """
    return [fold_digits(token) for token in _TOKEN_RE.findall(text.lower())]


def normalize_tokens(tokens: Sequence[str]) -> List[str]:
    """Normalise externally supplied tokens the same way ``tokenize`` does."""
    return [fold_digits(token.strip().lower()) for token in tokens if token.strip()]


def sentence_bounds(tokens: Sequence[str]) -> List[Tuple[int, int]]:
    """Half-open sentence spans; a sentence ends after ``.``, ``?`` or ``!``.

    A full stop between two digit placeholders is a decimal point, not an end.
    """
    bounds: List[Tuple[int, int]] = []
    start = 0
    last = len(tokens) - 1
    for i, token in enumerate(tokens):
        if token not in SENTENCE_END:
            continue
        if (
            token == "."
            and 0 < i < last
            and tokens[i - 1] == DIGIT_TOKEN
            and tokens[i + 1] == DIGIT_TOKEN
        ):
            continue
        bounds.append((start, i + 1))
        start = i + 1
    if start < len(tokens):
        bounds.append((start, len(tokens)))
    return bounds


@functools.lru_cache(maxsize=65536)
def porter_stem(word: str) -> str:
    """Porter stem of a lowercased word."""
    return _stemmer.stem(word.lower())


def stem_tokens(tokens: Sequence[str]) -> Tuple[str, ...]:
    return tuple(porter_stem(token) for token in tokens)


def content_stems(tokens: Sequence[str]) -> FrozenSet[str]:
    """Stems of the non-stopword word tokens."""
    return frozenset(
        porter_stem(token)
        for token in tokens
        if token not in STOPWORDS and not is_punctuation(token)
    )


def is_punctuation(token: str) -> bool:
    return len(token) == 1 and not token.isalnum()
