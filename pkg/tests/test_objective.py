"""Tests for losses, optimisation and the training loop."""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from segnet.src.arraycore import ContractError, DiffArray, DimensionError, Parameter, backward, grad_check
from segnet.src.config import LossWeights, build_config, load_config
from segnet.src.corpus import build_vocab, preprocess, synthetic_corpus
from segnet.src.decode import predict_corpus, write_predictions
from segnet.src.evalkit import evaluate
from segnet.src.extgen import ExtGenModel
from segnet.src.objective import (
    METRIC_COLUMNS,
    Adam,
    ClampCounter,
    EpochMetrics,
    ExtGenTask,
    MetricsLog,
    PlateauSchedule,
    SelectorTask,
    TrainingAborted,
    clip_grad_norm,
    combine_losses,
    nll_sequence,
    train,
    weighted_bce,
)
from segnet.src.selector import SelectorModel, score_document, select_sentences, selection_metrics
from segnet.src.text import porter_stem


class TestLosses:
    """Weighted BCE, sequence NLL and their combination."""

    def test_weighted_bce_value(self):
        """Test the positive-class weight on a two-example batch."""
        loss = weighted_bce(DiffArray(np.array([0.8, 0.4])), [1, 0], omega=2.0)
        expected = -(2.0 * math.log(0.8) + math.log(0.6)) / 2
        assert loss.item() == pytest.approx(expected)

    def test_weighted_bce_gradients(self):
        """Test gradients of the weighted BCE."""
        probs = Parameter("p", np.array([0.2, 0.7, 0.9]))
        report = grad_check(lambda: weighted_bce(probs, [1, 0, 1], 0.7), [probs])
        assert report.passed, report.errors

    def test_weighted_bce_shape_mismatch(self):
        """Test that labels must match the probabilities."""
        with pytest.raises(DimensionError):
            weighted_bce(DiffArray(np.array([0.5, 0.5])), [1], 1.0)

    def test_nll_value(self):
        """Test summed NLL over two steps."""
        dists = DiffArray(np.array([[0.5, 0.5], [0.25, 0.75]]))
        assert nll_sequence(dists, [1, 1]).item() == pytest.approx(0.980829, abs=1e-6)

    def test_nll_skips_padding(self):
        """Test that padded steps contribute nothing."""
        dists = DiffArray(np.array([[0.5, 0.5], [0.25, 0.75]]))
        assert nll_sequence(dists, [1, 0]).item() == pytest.approx(math.log(2))

    def test_nll_clamps_zero_probability(self, caplog):
        """Test that a zero target probability is clamped, counted and logged."""
        counter = ClampCounter()
        loss = nll_sequence(DiffArray(np.array([[1.0, 0.0]])), [1], counter=counter)

        assert loss.item() == pytest.approx(-math.log(1e-12))
        assert counter.events == 1
        assert "[NLL_CLAMP]" in caplog.text

    def test_nll_target_out_of_range(self):
        """Test that target ids must index the distribution."""
        with pytest.raises(ContractError):
            nll_sequence(DiffArray(np.array([[0.5, 0.5]])), [5])

    def test_nll_step_mismatch(self):
        """Test one distribution row per target."""
        with pytest.raises(DimensionError):
            nll_sequence(DiffArray(np.array([[0.5, 0.5]])), [1, 1])

    def test_combine_losses(self):
        """Test the two-level weighted combination."""
        combined, total = combine_losses(1.0, 1.0, 2.0, LossWeights(alpha=0.7, beta=0.5))
        assert combined == pytest.approx(1.3)
        assert total == pytest.approx(1.15)

    def test_combine_rejects_nan(self, caplog):
        """Test that a NaN part aborts training."""
        with pytest.raises(TrainingAborted) as exc_info:
            combine_losses(1.0, float("nan"), 0.0, LossWeights())

        assert "L_w" in str(exc_info.value)
        assert "[NUMERIC_ERROR]" in caplog.text


class TestOptimisation:
    """Adam, clipping and the plateau schedule."""

    def test_clip_grad_norm(self):
        """Test rescaling a norm of 10 down to 1."""
        param = Parameter("w", np.zeros(2))
        param.grad = np.array([6.0, 8.0])

        assert clip_grad_norm([param], 1.0) == pytest.approx(10.0)
        assert np.allclose(param.grad, [0.6, 0.8])

    def test_clip_leaves_small_gradients(self):
        """Test that norms below the limit are untouched."""
        param = Parameter("w", np.zeros(2))
        param.grad = np.array([0.3, 0.4])
        clip_grad_norm([param], 1.0)
        assert np.allclose(param.grad, [0.3, 0.4])

    def test_adam_minimises_quadratic(self):
        """Test that Adam drives a quadratic towards its minimum."""
        param = Parameter("w", np.array([3.0, -2.0]))
        optimizer = Adam([param], lr=0.1)
        for _ in range(300):
            optimizer.zero_grad()
            backward((param * param).sum())
            optimizer.step()

        assert np.abs(param.values).max() < 0.5
        assert optimizer.steps == 300

    def test_schedule_halves_and_stops(self, caplog):
        """Test halving on a regression and stopping after patience."""
        caplog.set_level("INFO")
        optimizer = Adam([Parameter("w", np.zeros(1))], lr=1.0)
        schedule = PlateauSchedule(optimizer, decay=0.5, patience=2, mode="max")

        first = schedule.observe(0.5)
        worse = schedule.observe(0.4)
        stalled = schedule.observe(0.45)

        assert first.improved and not first.halved
        assert worse.halved and not worse.stop
        assert not stalled.halved and stalled.stop
        assert optimizer.lr == 0.5
        assert "[LR_HALVED]" in caplog.text
        assert "[EARLY_STOP]" in caplog.text

    def test_schedule_min_mode(self):
        """Test that lower is better when minimising a loss."""
        optimizer = Adam([Parameter("w", np.zeros(1))], lr=1.0)
        schedule = PlateauSchedule(optimizer, mode="min")
        schedule.observe(2.0)
        assert schedule.observe(1.0).improved
        assert schedule.observe(1.5).halved

    def test_unknown_mode(self):
        """Test that only max and min modes exist."""
        with pytest.raises(ContractError):
            PlateauSchedule(Adam([]), mode="best")


class TestFullModelGradients:
    """Analytic against numeric gradients over every trainable parameter."""

    def test_selector_loss(self, tiny_config, toy_vocab, toy_docs):
        """Test the weighted selector loss through the whole selector."""
        model = SelectorModel(tiny_config, toy_vocab)
        task = SelectorTask(model, tiny_config.loss)
        batch = task.prepare(toy_docs[:2])
        params = model.trainable_parameters()

        report = grad_check(lambda: task.batch_loss(model, batch).total, params, h=1e-5, tol=1e-3, samples=4)

        assert report.passed, report.errors
        assert set(report.errors) == {param.name for param in params}

    @pytest.mark.slow
    @pytest.mark.parametrize("part", ["L_g", "L_eg"])
    def test_extgen_loss(self, part, tiny_config, toy_vocab, toy_docs):
        """Test the generation mix and the joint loss through the whole extractor-generator."""
        model = ExtGenModel(tiny_config, toy_vocab)
        task = ExtGenTask(model, tiny_config.loss)
        example = task.prepare(toy_docs[:1])[0]
        params = model.trainable_parameters()

        def loss() -> DiffArray:
            return task.example_losses(model, example)[part]

        report = grad_check(loss, params, h=1e-5, tol=1e-3, samples=4)

        assert report.passed, report.errors
        assert set(report.errors) == {param.name for param in params}


class TestMetricsLog:
    """Per-epoch CSV log."""

    def test_header_and_rows(self, tmp_path):
        """Test that the header is written once and parts fill their columns."""
        log = MetricsLog(tmp_path / "run" / "metrics.csv")
        log.append(EpochMetrics(1, 0.5, {"L_e": 0.25}, 0.75, 1e-3))

        with log.path.open(encoding="utf-8") as handle:
            rows = list(csv.reader(handle))

        assert rows[0] == list(METRIC_COLUMNS)
        assert rows[1][0] == "1"
        assert rows[1][2] == "0.25"
        assert rows[1][3] == ""
        assert float(rows[1][-1]) == 1e-3


class TestTraining:
    """End-to-end training loops on tiny models."""

    def test_selector_training_writes_artifacts(self, tiny_config, toy_vocab, toy_docs, tmp_path):
        """Test that training saves a checkpoint and one metrics row per epoch."""
        model = SelectorModel(tiny_config, toy_vocab)
        task = SelectorTask(model, tiny_config.loss)

        result = train(
            model, toy_docs, tiny_config.optim, task, config=tiny_config, out_dir=tmp_path, seed=0
        )

        assert result.checkpoint == tmp_path / "selector.ckpt"
        assert result.checkpoint.exists()
        assert result.epochs == len(result.history) == tiny_config.optim.max_epochs
        lines = result.metrics.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1 + result.epochs
        assert not model.training

    def test_returns_best_validation_parameters(self, tiny_values, toy_vocab, toy_docs, tmp_path, mocker):
        """Test that the model ends with the parameters of its best epoch."""
        config = build_config({**tiny_values, "max_epochs": 3})
        model = SelectorModel(config, toy_vocab)
        task = SelectorTask(model, config.loss)
        snapshots = []
        scores = iter([0.9, 0.1, 0.2])

        def fake_validate(validated, examples):
            snapshots.append(validated.state_dict())
            return next(scores)

        mocker.patch.object(task, "validate", side_effect=fake_validate)
        result = train(model, toy_docs, config.optim, task, config=config, out_dir=tmp_path, seed=0)

        assert result.epochs == 3
        final = model.state_dict()
        assert all(np.array_equal(final[name], snapshots[0][name]) for name in final)
        assert any(not np.array_equal(snapshots[2][name], snapshots[0][name]) for name in final)

    def test_extgen_batch_loss_parts(self, tiny_config, toy_vocab, toy_docs):
        """Test that one joint batch reports every loss component."""
        model = ExtGenModel(tiny_config, toy_vocab)
        task = ExtGenTask(model, tiny_config.loss)
        breakdown = task.batch_loss(model, task.prepare(toy_docs[:2]))

        assert set(breakdown.parts) == {"L_e", "L_w", "L_tag", "L_g", "L_eg"}
        assert breakdown.parts["L_eg"] == pytest.approx(breakdown.total.item())
        assert math.isfinite(breakdown.total.item())

    @pytest.mark.slow
    def test_extgen_loss_decreases(self, tiny_values, toy_vocab, toy_docs, tmp_path):
        """Test that a few epochs on two documents lower the joint loss."""
        config = build_config({**tiny_values, "max_epochs": 15, "batch_size": 2})
        model = ExtGenModel(config, toy_vocab)
        task = ExtGenTask(model, config.loss)

        result = train(model, toy_docs[:2], config.optim, task, config=config, out_dir=tmp_path, seed=0)

        assert result.checkpoint == tmp_path / "extgen.ckpt"
        assert result.history[-1].loss < result.history[0].loss

    def test_single_task_drops_tagging(self, tiny_values, toy_vocab):
        """Test that turning multitask off puts all generation weight on words."""
        config = build_config({**tiny_values, "multitask": False})
        task = ExtGenTask(ExtGenModel(config, toy_vocab), config.loss)
        assert task.weights.alpha == 1.0

    def test_empty_training_set(self, tiny_config, toy_vocab, tmp_path):
        """Test that there must be something to train on."""
        model = SelectorModel(tiny_config, toy_vocab)
        with pytest.raises(ContractError) as exc_info:
            train(
                model, [], tiny_config.optim, SelectorTask(model, tiny_config.loss),
                config=tiny_config, out_dir=tmp_path, seed=0,
            )

        assert "training set is empty" in str(exc_info.value)

    def test_same_seed_gives_identical_outputs(self, tiny_config, toy_vocab, toy_docs, tmp_path):
        """Test that two runs with one seed write byte-identical checkpoints and predictions."""
        outputs = []
        for run_name in ("first", "second"):
            out_dir = tmp_path / run_name
            model = ExtGenModel(tiny_config, toy_vocab)
            result = train(
                model, toy_docs, tiny_config.optim, ExtGenTask(model, tiny_config.loss),
                config=tiny_config, out_dir=out_dir, seed=5,
            )
            predictions = predict_corpus(toy_docs, None, model, tiny_config, threads=2, selection="lead")
            write_predictions(out_dir / "pred.jsonl", predictions)
            outputs.append((result.checkpoint.read_bytes(), (out_dir / "pred.jsonl").read_bytes()))

        assert outputs[0][0] == outputs[1][0]
        assert outputs[0][1] == outputs[1][1]


def _desk_config(**changes):
    overrides = {"precision": "float64", "dropout": 0.0, "patience": 20, **changes}
    return load_config(overrides=overrides, profile="desk")


def _stems(phrases):
    return {tuple(porter_stem(word) for word in phrase.split()) for phrase in phrases}


@pytest.mark.slow
class TestOverfitting:
    """Desk-size models memorising a small separable corpus."""

    @pytest.fixture
    def corpus(self):
        return [preprocess(raw) for raw in synthetic_corpus(20, seed=3)]

    def test_extgen_memorises_keyphrases(self, corpus, tmp_path):
        """Test near-perfect present extraction and exact absent phrases on 20 documents."""
        config = _desk_config(max_epochs=300, learning_rate=2e-3)
        model = ExtGenModel(config, build_vocab(corpus, config.vocab_size))
        train(
            model, corpus, config.optim, ExtGenTask(model, config.loss),
            config=config, out_dir=tmp_path, seed=13, stop_below=0.02,
        )

        predictions = predict_corpus(corpus, None, model, config, threads=1, selection="oracle")
        report = evaluate(predictions, corpus, splits=["present"], cutoffs=["M"])
        exact = sum(
            _stems(prediction.absent) == _stems(" ".join(phrase) for phrase in doc.absent_phrases)
            for prediction, doc in zip(predictions, corpus)
        )

        assert report.splits["present"].f1["M"] >= 0.99
        assert exact >= 18

    def test_selector_separates_filler(self, corpus, tmp_path):
        """Test that the selector tells keyphrase sentences from filler."""
        config = _desk_config(max_epochs=40)
        model = SelectorModel(config, build_vocab(corpus, config.vocab_size))
        train(
            model, corpus, config.optim, SelectorTask(model, config.loss),
            config=config, out_dir=tmp_path, seed=13,
        )

        pairs = [
            (select_sentences(doc, score_document(model, doc), config.max_src_len, config.threshold),
             doc.salience_labels)
            for doc in corpus
        ]
        assert selection_metrics(pairs).f1 >= 0.95
