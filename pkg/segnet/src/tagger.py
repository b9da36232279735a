"""Part-of-speech tagging over the universal tag set.

The rule tagger is a deterministic fallback used when a corpus ships
without tags: closed-class lexicons first, then suffix rules, then NOUN.
"""

from __future__ import annotations

from typing import Dict, List, Protocol, Sequence

from .text import DIGIT_TOKEN, is_punctuation

UNIVERSAL_TAGS = (
    "ADJ",
    "ADP",
    "ADV",
    "AUX",
    "CCONJ",
    "DET",
    "INTJ",
    "NOUN",
    "NUM",
    "PART",
    "PRON",
    "PROPN",
    "PUNCT",
    "SCONJ",
    "SYM",
    "VERB",
    "X",
)


class PosTagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> List[str]:
        ...


def _lexicon(**groups: str) -> Dict[str, str]:
    table: Dict[str, str] = {}
    for tag, words in groups.items():
        for word in words.split():
            table[word] = tag
    return table


_CLOSED_CLASS = _lexicon(
    DET="a an the this that these those each every some any no all both either neither",
    ADP=(
        "of in on for with at by from into onto over under about via through "
        "between among within without during per against across after before "
        "toward towards upon"
    ),
    CCONJ="and or but nor yet",
    PRON=(
        "i we you he she it they me us him her them my our your his its their "
        "itself themselves ourselves which who whom whose what"
    ),
    AUX=(
        "is are was were be been being am has have had do does did can could "
        "will would shall should may might must"
    ),
    PART="not to 's",
    SCONJ="if because while although though whether since than unless whereas",
    ADV=(
        "so very also however therefore thus then here there often only just "
        "further moreover hence still even far well"
    ),
    NUM="one two three four five six seven eight nine ten hundred thousand million",
    INTJ="oh yes",
)

_SUFFIX_RULES = (
    ("ly", "ADV"),
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("ize", "VERB"),
    ("ise", "VERB"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("al", "ADJ"),
    ("ic", "ADJ"),
    ("less", "ADJ"),
    ("ary", "ADJ"),
)

_SYMBOLS = frozenset("$%&*+/<=>@^|~#")


class RuleTagger:
    """Lexicon and suffix rule tagger producing universal tags."""

    def tag(self, tokens: Sequence[str]) -> List[str]:
        tags: List[str] = []
        for token in tokens:
            tags.append(self._tag_one(token, tags[-1] if tags else None))
        return tags

    @staticmethod
    def _tag_one(token: str, previous: str | None) -> str:
        if DIGIT_TOKEN in token:
            return "NUM"
        if is_punctuation(token):
            return "SYM" if token in _SYMBOLS else "PUNCT"
        word = token.lower()
        if word in _CLOSED_CLASS:
            return _CLOSED_CLASS[word]
        if len(word) > 4:
            for suffix, tag in _SUFFIX_RULES:
                if word.endswith(suffix):
                    # gerunds and participles right after a determiner act as nouns
                    if tag == "VERB" and previous == "DET":
                        return "NOUN"
                    return tag
        return "NOUN"
