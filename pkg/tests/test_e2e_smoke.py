"""End-to-end smoke test for the keyphrase pipeline.

Runs the whole command-line flow on the toy corpus with a tiny model:
  1. Preprocess raw examples
  2. Train the sentence selector and the extractor-generator
  3. Predict with model selection at two thread counts
  4. Evaluate the predictions
"""

from __future__ import annotations

import json

import pytest

from segnet.src.main import EXIT_OK, run


@pytest.mark.slow
class TestEndToEnd:
    """Train, predict and evaluate through ``run``."""

    def test_full_pipeline(self, toy_raw_file, tmp_path, tiny_overrides, capsys):
        """Test that every stage succeeds and predictions do not depend on threads."""
        common = ["--seed", "13", "--log-level", "WARNING", *tiny_overrides, "--set", "max_epochs=3"]
        docs = tmp_path / "docs.jsonl"
        run_dir = tmp_path / "run"

        assert run(["preprocess", "--input", str(toy_raw_file), "--output", str(docs)]) == EXIT_OK
        assert run(["train-selector", *common, "--data", str(docs), "--out", str(run_dir)]) == EXIT_OK
        assert run(["train-extgen", *common, "--data", str(docs), "--out", str(run_dir)]) == EXIT_OK

        for name in ("selector.ckpt", "selector.vocab.txt", "selector.ckpt.config.txt", "extgen.ckpt"):
            assert (run_dir / name).exists(), name
        assert len((run_dir / "extgen_metrics.csv").read_text(encoding="utf-8").splitlines()) == 4

        outputs = []
        for threads in ("1", "2"):
            output = tmp_path / f"pred{threads}.jsonl"
            code = run(
                [
                    "predict",
                    *common,
                    "--threads", threads,
                    "--selector-ckpt", str(run_dir / "selector.ckpt"),
                    "--extgen-ckpt", str(run_dir / "extgen.ckpt"),
                    "--input", str(docs),
                    "--output", str(output),
                ]
            )
            assert code == EXIT_OK
            outputs.append(output.read_text(encoding="utf-8"))

        assert outputs[0] == outputs[1]
        records = [json.loads(line) for line in outputs[0].splitlines()]
        assert [r["doc_id"] for r in records] == [f"toy-{i:03d}" for i in range(6)]

        capsys.readouterr()
        code = run(["evaluate", "--pred", str(tmp_path / "pred1.jsonl"), "--gold", str(docs)])
        assert code == EXIT_OK
        assert "present_F1@M=" in capsys.readouterr().out
