"""Keyphrase evaluation: stemmed matching, F1@M / F1@5 and count error."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

from .corpus import Document, load_documents
from .decode import PredictionSet
from .text import normalize_tokens, porter_stem, stem_tokens, tokenize

logger = logging.getLogger(__name__)

__all__ = [
    "EvalReport",
    "EvaluationError",
    "count_mae",
    "evaluate",
    "f1_at_k",
    "match_sets",
    "overlap_stats",
    "porter_stem",
]

MISSING_PREDICTION = "MISSING_PREDICTION"
WRONG_PLACEHOLDER = "<wrong-{}>"
SPLITS = ("present", "absent")

PhraseLike = Union[str, Sequence[str]]
Cutoff = Union[int, str]


class EvaluationError(Exception):
    """Raised when evaluation inputs break a precondition."""


# ── Matching ────────────────────────────────────────────────────────


def phrase_key(phrase: PhraseLike) -> Tuple[str, ...]:
    """Lowercased, digit-folded, stemmed token sequence of a phrase."""
    tokens = tokenize(phrase) if isinstance(phrase, str) else normalize_tokens(phrase)
    return stem_tokens(tokens)


def dedupe_by_stem(phrases: Sequence[PhraseLike]) -> List[PhraseLike]:
    """First surface form of every distinct non-empty stemmed phrase."""
    seen: set[Tuple[str, ...]] = set()
    kept: List[PhraseLike] = []
    for phrase in phrases:
        key = phrase_key(phrase)
        if key and key not in seen:
            seen.add(key)
            kept.append(phrase)
    return kept


def match_sets(predicted: Sequence[PhraseLike], gold: Sequence[PhraseLike]) -> List[bool]:
    """One flag per prediction: does its stem sequence equal an unused gold phrase?

    Raises:
        EvaluationError: If two predictions share a stemmed identity.
    """
    keys = [phrase_key(p) for p in predicted]
    if len(set(keys)) != len(keys):
        raise EvaluationError("predictions must be deduplicated before matching")
    unused = [phrase_key(g) for g in gold]
    flags: List[bool] = []
    for key in keys:
        hit = key in unused
        if hit:
            unused.remove(key)
        flags.append(hit)
    return flags


# ── Scores ──────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def _prf(matches: int, predicted: int, gold: int) -> Scores:
    precision = matches / predicted if predicted else 0.0
    recall = matches / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(precision, recall, f1)


def pad_predictions(predicted: Sequence[PhraseLike], k: int) -> List[PhraseLike]:
    """Top ``k`` predictions, padded with placeholders that never match."""
    top = list(predicted[:k])
    return top + [WRONG_PLACEHOLDER.format(i) for i in range(k - len(top))]


def f1_at_k(
    predicted: Sequence[PhraseLike],
    gold: Sequence[PhraseLike],
    k: Cutoff = "M",
    *,
    recall_at_most_k: bool = False,
) -> Scores:
    """Precision, recall and F1 at cutoff ``k`` ("M" keeps every prediction).

    A numeric ``k`` truncates to ``k`` predictions or pads up to ``k`` with
    wrong answers.  Recall divides by ``|gold|``, or by ``min(|gold|, k)``
    when ``recall_at_most_k`` is set.

    Raises:
        EvaluationError: If ``gold`` is empty or ``k`` is not "M" or positive.
    """
    if not gold:
        raise EvaluationError("f1_at_k needs at least one gold phrase")
    if isinstance(k, str):
        if k.upper() != "M":
            raise EvaluationError(f"Unknown cutoff '{k}'")
        flags = match_sets(predicted, gold)
        return _prf(sum(flags), len(flags), len(gold))
    if k <= 0:
        raise EvaluationError(f"Cutoff must be positive, got {k}")
    top = list(predicted)[:k]
    padded = pad_predictions(top, k)
    # placeholders are scored as misses without being matched
    flags = match_sets(top, gold) + [False] * (len(padded) - len(top))
    denominator = min(len(gold), k) if recall_at_most_k else len(gold)
    return _prf(sum(flags), len(padded), denominator)


def macro_average(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def count_mae(predicted: Sequence[int], gold: Sequence[int]) -> Tuple[float, float]:
    """Mean absolute count error and mean predicted count.

    Raises:
        EvaluationError: If the corpus is empty or the lists differ in length.
    """
    if not predicted:
        raise EvaluationError("count_mae needs at least one document")
    if len(predicted) != len(gold):
        raise EvaluationError(f"{len(predicted)} predicted counts for {len(gold)} documents")
    errors = [abs(p - g) for p, g in zip(predicted, gold)]
    return macro_average(errors), macro_average(predicted)


@dataclass(frozen=True)
class OverlapStats:
    duplicates: int
    overlapping: int


def _contains(longer: Tuple[str, ...], shorter: Tuple[str, ...]) -> bool:
    width = len(shorter)
    return any(longer[i : i + width] == shorter for i in range(len(longer) - width + 1))


def overlap_stats(phrases: Sequence[PhraseLike]) -> OverlapStats:
    """Repeated phrases (same stems) and pairs where one phrase is a
    contiguous sub-phrase of another."""
    keys = [phrase_key(p) for p in phrases if phrase_key(p)]
    unique = list(dict.fromkeys(keys))
    overlapping = 0
    for i, a in enumerate(unique):
        for b in unique[i + 1 :]:
            short, long_ = (a, b) if len(a) <= len(b) else (b, a)
            if _contains(long_, short):
                overlapping += 1
    return OverlapStats(duplicates=len(keys) - len(unique), overlapping=overlapping)


# ── Corpus evaluation ───────────────────────────────────────────────


def cutoff_label(k: Cutoff) -> str:
    return "M" if isinstance(k, str) else str(k)


@dataclass(frozen=True)
class DocDetail:
    doc_id: str
    split: str
    predicted: int
    gold: int
    matches: int
    f1: Dict[str, float]


@dataclass
class SplitReport:
    documents: int = 0
    precision: Dict[str, float] = field(default_factory=dict)
    recall: Dict[str, float] = field(default_factory=dict)
    f1: Dict[str, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    documents: int
    splits: Dict[str, SplitReport]
    mae: float
    avg_predicted: float
    avg_gold: float
    avg_duplicates: float
    avg_overlapping: float
    details: List[DocDetail] = field(default_factory=list)

    def to_json(self, include_details: bool = False) -> Dict[str, Any]:
        data = asdict(self)
        if not include_details:
            data.pop("details")
        return data

    def format_table(self, include_details: bool = False) -> str:
        cutoffs = list(next(iter(self.splits.values())).f1) if self.splits else []
        header = ["split", "docs"]
        for label in cutoffs:
            header += [f"P@{label}", f"R@{label}", f"F1@{label}"]
        rows = [header]
        for name, split in self.splits.items():
            row = [name, str(split.documents)]
            for label in cutoffs:
                row += [
                    f"{split.precision[label]:.3f}",
                    f"{split.recall[label]:.3f}",
                    f"{split.f1[label]:.3f}",
                ]
            rows.append(row)
        lines = _align(rows)
        lines.append("")
        lines.append(
            f"documents {self.documents}  MAE {self.mae:.3f}  "
            f"avg predicted {self.avg_predicted:.3f}  avg gold {self.avg_gold:.3f}"
        )
        lines.append(
            f"avg duplicates {self.avg_duplicates:.3f}  avg overlapping {self.avg_overlapping:.3f}"
        )
        if include_details and self.details:
            lines.append("")
            detail_rows = [["doc_id", "split", "pred", "gold", "match"] + [f"F1@{c}" for c in cutoffs]]
            for d in self.details:
                detail_rows.append(
                    [d.doc_id, d.split, str(d.predicted), str(d.gold), str(d.matches)]
                    + [f"{d.f1[c]:.3f}" for c in cutoffs]
                )
            lines.extend(_align(detail_rows))
        return "\n".join(lines)


def _align(rows: List[List[str]]) -> List[str]:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]


@dataclass(frozen=True)
class _DocResult:
    details: List[DocDetail]
    scores: Dict[str, Dict[str, Scores]]
    predicted_count: int
    gold_count: int
    duplicates: int
    overlapping: int


def _gold_phrases(doc: Document, split: str) -> List[Tuple[str, ...]]:
    return list(doc.present_phrases if split == "present" else doc.absent_phrases)


def _evaluate_doc(
    prediction: PredictionSet,
    doc: Document,
    splits: Sequence[str],
    cutoffs: Sequence[Cutoff],
    recall_at_most_k: bool,
) -> _DocResult:
    raw = {"present": prediction.present, "absent": prediction.absent}
    details: List[DocDetail] = []
    scores: Dict[str, Dict[str, Scores]] = {}
    for split in SPLITS:
        kept = dedupe_by_stem(raw[split])
        gold = dedupe_by_stem(_gold_phrases(doc, split))
        if split not in splits or not gold:
            continue
        per_k = {
            cutoff_label(k): f1_at_k(kept, gold, k, recall_at_most_k=recall_at_most_k)
            for k in cutoffs
        }
        scores[split] = per_k
        details.append(
            DocDetail(
                doc_id=doc.doc_id,
                split=split,
                predicted=len(kept),
                gold=len(gold),
                matches=sum(match_sets(kept, gold)),
                f1={label: s.f1 for label, s in per_k.items()},
            )
        )
    # counts are taken over both lists together
    predicted_count = len(dedupe_by_stem(list(prediction.present) + list(prediction.absent)))
    gold_count = len(dedupe_by_stem(list(doc.present_phrases) + list(doc.absent_phrases)))
    overlap = overlap_stats(list(prediction.present) + list(prediction.absent))
    return _DocResult(
        details, scores, predicted_count, gold_count, overlap.duplicates, overlap.overlapping
    )


def evaluate(
    predictions: Sequence[PredictionSet],
    gold: Sequence[Document],
    *,
    splits: Sequence[str] = SPLITS,
    cutoffs: Sequence[Cutoff] = ("M", 5),
    recall_at_most_k: bool = False,
    threads: int = 1,
) -> EvalReport:
    """Macro-averaged scores of ``predictions`` against ``gold`` documents.

    Documents without a prediction count as empty predictions.  Documents
    whose gold split is empty are left out of that split's averages.

    Raises:
        EvaluationError: If ``gold`` is empty or a split name is unknown.
    """
    for split in splits:
        if split not in SPLITS:
            raise EvaluationError(f"Unknown split '{split}'")
    if not gold:
        raise EvaluationError("no gold documents to evaluate")
    by_id = {p.doc_id: p for p in predictions}
    known = {doc.doc_id for doc in gold}
    for doc_id in by_id.keys() - known:
        logger.warning("[%s] prediction for unknown document %s ignored", MISSING_PREDICTION, doc_id)

    def run(doc: Document) -> _DocResult:
        prediction = by_id.get(doc.doc_id)
        if prediction is None:
            logger.warning("[%s] no prediction for %s", MISSING_PREDICTION, doc.doc_id)
            prediction = PredictionSet(doc.doc_id)
        return _evaluate_doc(prediction, doc, splits, cutoffs, recall_at_most_k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, gold))
    else:
        results = [run(doc) for doc in gold]

    split_reports: Dict[str, SplitReport] = {}
    for split in splits:
        per_doc = [r.scores[split] for r in results if split in r.scores]
        report = SplitReport(documents=len(per_doc))
        for k in cutoffs:
            label = cutoff_label(k)
            report.precision[label] = macro_average([d[label].precision for d in per_doc])
            report.recall[label] = macro_average([d[label].recall for d in per_doc])
            report.f1[label] = macro_average([d[label].f1 for d in per_doc])
        split_reports[split] = report

    mae, avg_predicted = count_mae(
        [r.predicted_count for r in results], [r.gold_count for r in results]
    )
    return EvalReport(
        documents=len(results),
        splits=split_reports,
        mae=mae,
        avg_predicted=avg_predicted,
        avg_gold=macro_average([r.gold_count for r in results]),
        avg_duplicates=macro_average([r.duplicates for r in results]),
        avg_overlapping=macro_average([r.overlapping for r in results]),
        details=[d for r in results for d in r.details],
    )


def parse_cutoffs(text: str) -> List[Cutoff]:
    """``"m,5"`` -> ``["M", 5]``."""
    cutoffs: List[Cutoff] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if part.upper() == "M":
            cutoffs.append("M")
        elif part.isdigit() and int(part) > 0:
            cutoffs.append(int(part))
        else:
            raise EvaluationError(f"Bad cutoff '{part}'")
    if not cutoffs:
        raise EvaluationError("no cutoffs given")
    return cutoffs


def load_gold(path: Path) -> List[Document]:
    """Gold documents from JSON lines; raw records are preprocessed on the fly."""
    return load_documents(path)


def write_report(path: Path, report: EvalReport, include_details: bool = False) -> None:
    Path(path).write_text(
        json.dumps(report.to_json(include_details), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
