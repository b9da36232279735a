"""Shared pytest fixtures for the keyphrase pipeline tests.

Provides reusable fixtures for:
- 64-bit engine precision around every test
- a tiny model configuration that builds and runs in milliseconds
- the toy corpus, its vocabulary and the figure fixture document
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterator, List

import pytest

from segnet.src.arraycore import precision
from segnet.src.config import ModelConfig, build_config
from segnet.src.corpus import Document, Vocab, build_vocab, load_documents, preprocess, synthetic_corpus

REPO_ROOT = Path(__file__).resolve().parents[1]
EVIDENCE_DIR = REPO_ROOT / "evidence"

TINY_VALUES: Dict[str, Any] = {
    "d_model": 8,
    "n_layers": 2,
    "n_heads": 2,
    "d_ff": 16,
    "char_embed_dim": 4,
    "max_word_len": 6,
    "relative_clip": 4,
    "max_src_len": 64,
    "max_sentences": 16,
    "max_decode_len": 24,
    "vocab_size": 200,
    "dropout": 0.0,
    "precision": "float64",
    "batch_size": 4,
    "max_epochs": 2,
    "learning_rate": 1e-2,
}


# =============================================================================
# Engine state
# =============================================================================


@pytest.fixture(autouse=True)
def float64_engine() -> Iterator[None]:
    """Run every test at 64-bit precision and restore it afterwards.

    CLI tests switch the process-wide precision through the config; the
    context manager puts it back.
    """
    with precision("float64"):
        yield


# =============================================================================
# Configuration
# =============================================================================


@pytest.fixture
def tiny_values() -> Dict[str, Any]:
    return dict(TINY_VALUES)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Two layers, two heads, width 8."""
    return build_config(TINY_VALUES)


# =============================================================================
# Corpora
# =============================================================================


@pytest.fixture
def toy_docs() -> List[Document]:
    return [preprocess(raw) for raw in synthetic_corpus(6)]


@pytest.fixture
def toy_vocab(toy_docs: List[Document]) -> Vocab:
    return build_vocab(toy_docs, 200)


@pytest.fixture
def figure1_doc() -> Document:
    """The annotated abstract whose salience labels are 1 1 1 1 0 1 0 1 0 0 1."""
    return load_documents(EVIDENCE_DIR / "figure1.jsonl")[0]


@pytest.fixture
def toy_raw_file(tmp_path: Path) -> Path:
    """Raw JSON-lines file holding the toy corpus."""
    path = tmp_path / "toy.jsonl"
    with path.open("w", encoding="utf-8") as handle:
        for raw in synthetic_corpus(6):
            record = {
                "id": raw.doc_id,
                "title": raw.title,
                "abstract": raw.body,
                "keyphrases": list(raw.keyphrases),
            }
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def tiny_overrides() -> List[str]:
    """``--set`` arguments reproducing the tiny configuration on the CLI."""
    args: List[str] = []
    for key, value in TINY_VALUES.items():
        args += ["--set", f"{key}={value}"]
    return args
