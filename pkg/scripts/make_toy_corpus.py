#!/usr/bin/env python3
"""Write the synthetic toy corpus as raw JSON lines.

Usage:
    python3 scripts/make_toy_corpus.py --out evidence/toy20.jsonl [--docs 20] [--seed 13]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from segnet.src.corpus import RawExample, synthetic_corpus  # noqa: E402

logger = logging.getLogger(__name__)


def to_record(example: RawExample) -> dict:
    return {
        "id": example.doc_id,
        "title": example.title,
        "abstract": example.body,
        "keyphrases": list(example.keyphrases),
    }


def write_corpus(path: Path, n_docs: int, seed: int) -> int:
    examples = synthetic_corpus(n_docs, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(json.dumps(to_record(example), sort_keys=True) + "\n")
    return len(examples)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--docs", type=int, default=20)
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    count = write_corpus(args.out, args.docs, args.seed)
    logger.info("Wrote %d documents to %s", count, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
