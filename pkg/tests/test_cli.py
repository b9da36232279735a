"""Tests for the command-line entry point and its exit codes."""

from __future__ import annotations

import json
from pathlib import Path

from segnet.src.checkpoint import save_checkpoint
from segnet.src.config import load_config
from segnet.src.corpus import SPECIAL_TOKENS, Vocab, write_documents
from segnet.src.decode import PredictionSet, write_predictions
from segnet.src.extgen import ExtGenModel
from segnet.src.main import (
    EXIT_CHECKPOINT,
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    resolve_seed,
    run,
    summary,
)

FIGURE_FILE = Path(__file__).resolve().parents[1] / "evidence" / "figure1.jsonl"


def _figure_predictions(tmp_path, absent):
    path = tmp_path / "pred.jsonl"
    write_predictions(
        path,
        [
            PredictionSet(
                "figure1",
                present=[
                    "natural language processing",
                    "computer assisted language learning",
                    "integrated e learning",
                ],
                absent=absent,
            )
        ],
    )
    return path


class TestPreprocessCommand:
    """Labelling raw examples."""

    def test_prints_salience_labels(self, tmp_path, capsys):
        """Test the per-document label line and the written documents."""
        output = tmp_path / "docs.jsonl"
        code = run(["preprocess", "--input", str(FIGURE_FILE), "--output", str(output)])

        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "figure1\t1 1 1 1 0 1 0 1 0 0 1" in out
        assert "preprocess documents=1 present=3 absent=2" in out
        record = json.loads(output.read_text(encoding="utf-8").splitlines()[0])
        assert record["doc_id"] == "figure1"

    def test_writes_vocabulary(self, tmp_path, capsys):
        """Test that --vocab-size bounds the ordered word list written beside the output."""
        output = tmp_path / "docs.jsonl"
        code = run(["preprocess", "--input", str(FIGURE_FILE), "--output", str(output), "--vocab-size", "8"])

        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "vocab=8" in out
        assert "truncated=0" in out
        vocab = Vocab.load(tmp_path / "docs.vocab.txt")
        assert len(vocab) == 8
        assert tuple(vocab.words[: len(SPECIAL_TOKENS)]) == SPECIAL_TOKENS

    def test_counts_truncated_inputs(self, tmp_path, capsys):
        """Test that a title longer than --max-src-len is reported as truncated."""
        output = tmp_path / "docs.jsonl"
        code = run(["preprocess", "--input", str(FIGURE_FILE), "--output", str(output), "--max-src-len", "5"])

        assert code == EXIT_OK
        assert "truncated=1" in capsys.readouterr().out

    def test_rejects_zero_limits(self, tmp_path):
        """Test that the limits must be positive."""
        output = tmp_path / "docs.jsonl"
        code = run(["preprocess", "--input", str(FIGURE_FILE), "--output", str(output), "--vocab-size", "0"])
        assert code == EXIT_USAGE

    def test_malformed_input(self, tmp_path):
        """Test that bad JSON is a data error."""
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n", encoding="utf-8")
        assert run(["preprocess", "--input", str(bad), "--output", str(tmp_path / "o.jsonl")]) == EXIT_DATA


class TestEvaluateCommand:
    """Scoring prediction files."""

    def test_single_split(self, tmp_path, capsys):
        """Test the one-split summary keys."""
        pred = _figure_predictions(tmp_path, [])
        code = run(["evaluate", "--pred", str(pred), "--gold", str(FIGURE_FILE), "--split", "present"])

        assert code == EXIT_OK
        assert "F1@M=1.000" in capsys.readouterr().out

    def test_both_splits_and_report(self, tmp_path, capsys):
        """Test the per-split summary keys and the JSON report."""
        pred = _figure_predictions(tmp_path, ["semantic web technologies", "learning of foreign languages"])
        report = tmp_path / "report.json"
        code = run(
            ["evaluate", "--pred", str(pred), "--gold", str(FIGURE_FILE), "--report", str(report), "--details"]
        )

        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "present_F1@M=1.000" in out
        assert "absent_F1@M=1.000" in out
        assert "MAE=0.000" in out
        assert "details" in json.loads(report.read_text(encoding="utf-8"))

    def test_bad_cutoff(self, tmp_path):
        """Test that an unusable cutoff list is a data error."""
        pred = _figure_predictions(tmp_path, [])
        assert run(["evaluate", "--pred", str(pred), "--gold", str(FIGURE_FILE), "--k", "top"]) == EXIT_DATA


class TestPredictCommand:
    """Predicting from a saved extractor-generator."""

    def test_saved_config_describes_the_model(self, tiny_config, toy_vocab, toy_docs, tmp_path, caplog):
        """Test that the config beside the predictions is the checkpoint's plus decode settings."""
        ckpt = tmp_path / "extgen.ckpt"
        save_checkpoint(ckpt, tiny_config.to_flat(), ExtGenModel(tiny_config, toy_vocab))
        toy_vocab.save(tmp_path / "extgen.vocab.txt")
        docs = tmp_path / "docs.jsonl"
        write_documents(docs, toy_docs[:2])
        output = tmp_path / "pred.jsonl"

        code = run(
            [
                "predict",
                "--selection", "lead",
                "--extgen-ckpt", str(ckpt),
                "--input", str(docs),
                "--output", str(output),
                "--threads", "1",
                "--threshold", "0.8",
                "--max-len", "7",
                "--set", "extract_threshold=0.4",
                "--set", "precision=float64",
                "--set", "d_model=16",
            ]
        )

        assert code == EXIT_OK
        saved = load_config(tmp_path / "pred.jsonl.config.txt")
        assert saved.d_model == tiny_config.d_model
        assert saved.n_layers == tiny_config.n_layers
        assert saved.vocab_size == tiny_config.vocab_size
        assert saved.threshold == 0.8
        assert saved.max_decode_len == 7
        assert saved.extract_threshold == 0.4
        assert saved.precision == "float64"
        assert "Ignoring d_model" in caplog.text


class TestStatsCommand:
    def test_figure_statistics(self, capsys):
        """Test the present and absent shares of the example."""
        assert run(["stats", "--data", str(FIGURE_FILE)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "present_pct=60.000" in out
        assert "absent_pct=40.000" in out

    def test_missing_file(self, tmp_path):
        """Test that a missing data file is a data error."""
        assert run(["stats", "--data", str(tmp_path / "missing.jsonl")]) == EXIT_DATA


class TestExitCodes:
    """Failure families."""

    def test_unknown_command(self):
        """Test that argparse usage errors exit with 2."""
        assert run(["translate"]) == EXIT_USAGE

    def test_invalid_config(self, toy_raw_file, tmp_path, caplog):
        """Test that a bad override is a config error."""
        code = run(
            ["train-selector", "--data", str(toy_raw_file), "--out", str(tmp_path), "--set", "dropout=1.0"]
        )

        assert code == EXIT_CONFIG
        assert "[CONFIG_ERROR]" in caplog.text

    def test_model_selection_needs_selector(self, toy_raw_file, tmp_path, tiny_overrides):
        """Test that --selection model without a selector checkpoint is a usage error."""
        code = run(
            [
                "predict",
                "--extgen-ckpt", str(tmp_path / "extgen.ckpt"),
                "--input", str(toy_raw_file),
                "--output", str(tmp_path / "pred.jsonl"),
                *tiny_overrides,
            ]
        )
        assert code == EXIT_USAGE

    def test_missing_checkpoint(self, toy_raw_file, tmp_path, tiny_overrides):
        """Test that an unreadable checkpoint has its own exit code."""
        code = run(
            [
                "predict",
                "--selection", "lead",
                "--extgen-ckpt", str(tmp_path / "extgen.ckpt"),
                "--input", str(toy_raw_file),
                "--output", str(tmp_path / "pred.jsonl"),
                *tiny_overrides,
            ]
        )
        assert code == EXIT_CHECKPOINT


class TestHelpers:
    def test_seed_precedence(self, monkeypatch):
        """Test flag over environment over default."""
        monkeypatch.setenv("SEGNET_SEED", "21")
        assert resolve_seed(5) == 5
        assert resolve_seed(None) == 21
        monkeypatch.delenv("SEGNET_SEED")
        assert resolve_seed(None) == 13

    def test_summary_formats_floats(self):
        """Test the key=value summary line."""
        assert summary("evaluate", documents=2, MAE=0.5) == "evaluate documents=2 MAE=0.500"
