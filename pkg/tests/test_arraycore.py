"""Tests for the differentiable array engine.

Covers:
- Precision switching and graph recording state
- Softmax masking, failure modes and the uniform-row case
- Shape and lookup errors
- Analytic gradients against central differences for every op family
- Module parameter bookkeeping and state dict round trips
"""

from __future__ import annotations

import numpy as np
import pytest

from segnet.src.arraycore import (
    ContractError,
    DiffArray,
    DimensionError,
    InvalidMaskError,
    LookupRangeError,
    Module,
    NumericFailure,
    Parameter,
    backward,
    batch_norm,
    concat,
    conv1d,
    embedding,
    exclusive_logcumsumexp,
    get_precision,
    grad_check,
    is_grad_enabled,
    layer_norm,
    log,
    matmul,
    no_grad,
    precision,
    scatter_columns,
    set_precision,
    sigmoid,
    softmax_rows,
    take_columns,
    tanh,
)


def _param(name: str, shape, seed: int = 0) -> Parameter:
    return Parameter(name, np.random.default_rng(seed).normal(size=shape))


class _Pair(Module):
    def __init__(self, name: str = "pair") -> None:
        super().__init__(name)
        self.w = self.add_parameter("w", np.ones((2, 3)))
        self.b = self.add_parameter("b", np.zeros(3), trainable=False)


# ── Precision and recording ───────────────────────────────────────────


class TestPrecision:
    """Process-wide float width."""

    def test_unknown_precision_fails(self):
        """Test that an unsupported width is rejected by name."""
        with pytest.raises(ContractError) as exc_info:
            set_precision("float16")

        assert "float16" in str(exc_info.value)

    def test_context_restores_previous(self):
        """Test that the precision context restores the outer width."""
        assert get_precision() == "float64"
        with precision("float32"):
            assert get_precision() == "float32"
            assert DiffArray([1.0]).values.dtype == np.float32
        assert get_precision() == "float64"

    def test_no_grad_stops_recording(self):
        """Test that results computed under no_grad carry no graph."""
        x = DiffArray([1.0, 2.0], requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = x * 2.0
        assert is_grad_enabled()
        assert y.node is None
        assert (x * 2.0).node is not None


# ── Softmax ───────────────────────────────────────────────────────────


class TestSoftmax:
    """Row softmax with optional masks."""

    def test_rows_sum_to_one(self):
        """Test that every row is a distribution."""
        probs = softmax_rows(DiffArray([[1.0, 2.0, 3.0], [-1.0, 0.0, 5.0]]))
        assert np.allclose(probs.values.sum(axis=-1), 1.0)

    def test_repeated_logits_give_uniform_weights(self):
        """Test that equal scores give equal probabilities."""
        probs = softmax_rows(DiffArray([[2.0, 2.0, 2.0, 2.0]]))
        assert np.allclose(probs.values, 0.25)

    def test_masked_entries_are_exactly_zero(self):
        """Test that masked positions get zero probability."""
        mask = np.array([[True, False, True]])
        probs = softmax_rows(DiffArray([[1.0, 100.0, 1.0]]), mask)
        assert probs.values[0, 1] == 0.0
        assert np.allclose(probs.values[0, [0, 2]], 0.5)

    def test_fully_masked_row_fails(self):
        """Test that a row with nothing left to attend to is an error."""
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(InvalidMaskError) as exc_info:
            softmax_rows(DiffArray([[1.0, 2.0], [3.0, 4.0]]), mask)

        assert "masked" in str(exc_info.value)

    def test_non_finite_score_fails(self):
        """Test that NaN scores are reported instead of propagated."""
        with pytest.raises(NumericFailure):
            softmax_rows(DiffArray([[1.0, float("nan")]]))

    def test_masked_infinite_score_is_ignored(self):
        """Test that a non-finite score under the mask does no harm."""
        mask = np.array([[True, False]])
        probs = softmax_rows(DiffArray([[1.0, float("inf")]]), mask)
        assert probs.values.tolist() == [[1.0, 0.0]]


# ── Shape and lookup errors ───────────────────────────────────────────


class TestShapeErrors:
    """Contract violations raise the engine's own errors."""

    def test_matmul_mismatch(self):
        """Test that incompatible matrices name both shapes."""
        with pytest.raises(DimensionError) as exc_info:
            matmul(DiffArray(np.ones((2, 3))), DiffArray(np.ones((2, 3))))

        assert "(2, 3)" in str(exc_info.value)

    def test_embedding_out_of_range(self):
        """Test that an id past the table names the id."""
        table = DiffArray(np.zeros((5, 2)))
        with pytest.raises(LookupRangeError) as exc_info:
            embedding(table, np.array([0, 7]))

        assert "id 7" in str(exc_info.value)

    def test_backward_needs_scalar(self):
        """Test that backward refuses a non-scalar loss."""
        x = DiffArray([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 3.0)

    def test_concat_needs_input(self):
        """Test that an empty concat is rejected."""
        with pytest.raises(ContractError):
            concat([])

    def test_conv_filter_wider_than_sequence(self):
        """Test that a filter wider than the sequence is rejected."""
        with pytest.raises(DimensionError) as exc_info:
            conv1d(DiffArray(np.ones((1, 2, 3))), DiffArray(np.ones((3, 3, 4))), DiffArray(np.zeros(4)))

        assert "shorter than filter width" in str(exc_info.value)


# ── Gradients ─────────────────────────────────────────────────────────


class TestBackward:
    """Reverse-mode accumulation."""

    def test_square_gradient(self):
        """Test d/dx sum(x*x) = 2x."""
        x = DiffArray([1.0, -2.0, 3.0], requires_grad=True)
        backward((x * x).sum())
        assert np.allclose(x.grad, [2.0, -4.0, 6.0])

    def test_shared_input_accumulates(self):
        """Test that a value used twice receives both contributions."""
        x = DiffArray([2.0], requires_grad=True)
        y = x * 3.0 + x * x
        backward(y.sum())
        assert np.allclose(x.grad, [7.0])

    def test_broadcast_gradient_is_reduced(self):
        """Test that a broadcast bias receives the summed gradient."""
        x = DiffArray(np.ones((4, 3)))
        b = DiffArray(np.zeros(3), requires_grad=True)
        backward((x + b).sum())
        assert np.allclose(b.grad, [4.0, 4.0, 4.0])


class TestGradCheck:
    """Finite-difference verification of each op family."""

    def test_dense_chain(self):
        """Test matmul, tanh, softmax and log together."""
        w = _param("w", (4, 3), seed=1)
        x = DiffArray(np.random.default_rng(2).normal(size=(5, 4)))

        def loss() -> DiffArray:
            return log(softmax_rows(tanh(x @ w))).sum() * -1.0

        report = grad_check(loss, [w])
        assert report.passed, report.errors
        assert report.checked == {"w": 12}

    def test_layer_norm(self):
        """Test layer normalisation gradients for input, scale and shift."""
        x = _param("x", (3, 5), seed=3)
        gamma = _param("gamma", (5,), seed=4)
        beta = _param("beta", (5,), seed=5)
        target = np.random.default_rng(6).normal(size=(3, 5))

        def loss() -> DiffArray:
            out = layer_norm(x, gamma, beta)
            return (out * target).sum()

        assert grad_check(loss, [x, gamma, beta]).passed

    def test_batch_norm_training(self):
        """Test batch normalisation over a batch of four rows."""
        x = _param("x", (4, 3), seed=7)
        gamma = _param("gamma", (3,), seed=8)
        beta = _param("beta", (3,), seed=9)
        running_mean = Parameter("rm", np.zeros(3), trainable=False)
        running_var = Parameter("rv", np.ones(3), trainable=False)
        target = np.random.default_rng(10).normal(size=(4, 3))

        def loss() -> DiffArray:
            out = batch_norm(x, gamma, beta, running_mean, running_var, training=True)
            return (out * target).sum()

        assert grad_check(loss, [x, gamma, beta]).passed

    def test_conv1d(self):
        """Test the valid 1-d convolution."""
        x = _param("x", (2, 5, 3), seed=11)
        w = _param("w", (3, 3, 4), seed=12)
        b = _param("b", (4,), seed=13)

        def loss() -> DiffArray:
            return sigmoid(conv1d(x, w, b)).sum()

        assert grad_check(loss, [x, w, b]).passed

    def test_column_gather_and_scatter(self):
        """Test take_columns and scatter_columns."""
        x = _param("x", (3, 4), seed=14)
        index = np.array([[0, 1, 1], [3, 2, 0], [2, 2, 2]])
        target = np.random.default_rng(15).normal(size=(3, 6))

        def loss() -> DiffArray:
            gathered = take_columns(x, index)
            return (scatter_columns(gathered, index + 1, 6) * target).sum()

        assert grad_check(loss, [x]).passed

    def test_exclusive_logcumsumexp(self):
        """Test the running log-sum used by coverage attention."""
        x = _param("x", (4, 3), seed=16)
        target = np.random.default_rng(17).normal(size=(4, 3))

        def loss() -> DiffArray:
            return (exclusive_logcumsumexp(x) * target).sum()

        assert grad_check(loss, [x]).passed

    def test_exclusive_logcumsumexp_values(self):
        """Test that row i holds the log-sum of rows before i."""
        x = DiffArray([[0.0], [1.0], [2.0]])
        out = exclusive_logcumsumexp(x).values[:, 0]
        assert out[0] == 0.0
        assert out[1] == pytest.approx(0.0)
        assert out[2] == pytest.approx(np.log(np.exp(0.0) + np.exp(1.0)))

    def test_requires_float64(self):
        """Test that gradient checks refuse 32-bit precision."""
        with precision("float32"):
            w = _param("w", (2, 2))
            with pytest.raises(ContractError) as exc_info:
                grad_check(lambda: (w * w).sum(), [w])

        assert "float64" in str(exc_info.value)

    def test_wrong_gradient_is_reported(self, caplog):
        """Test that a broken gradient rule fails the check and is logged."""
        w = _param("w", (3,), seed=18)

        def loss() -> DiffArray:
            out = (w * w).sum()
            # the second term is an unrecorded copy of w
            return out + DiffArray(w.values.sum())

        report = grad_check(loss, [w])
        assert not report.passed
        assert report.failures() == ["w"]
        assert "gradient mismatch for w" in caplog.text


# ── Modules ───────────────────────────────────────────────────────────


class TestModule:
    """Parameter naming and state dicts."""

    def test_dotted_names_and_trainable_filter(self):
        """Test that parameters are named by path and frozen ones are skipped."""
        pair = _Pair()
        assert sorted(pair.named_parameters()) == ["pair.b", "pair.w"]
        assert [p.name for p in pair.trainable_parameters()] == ["pair.w"]

    def test_state_dict_round_trip(self):
        """Test that a state dict loads into a fresh module."""
        source = _Pair()
        source.w.values[...] = 5.0
        target = _Pair()
        target.load_state_dict(source.state_dict())
        assert np.all(target.w.values == 5.0)

    def test_load_state_dict_mismatch(self):
        """Test that missing entries are named."""
        pair = _Pair()
        with pytest.raises(ContractError) as exc_info:
            pair.load_state_dict({"pair.w": np.ones((2, 3))})

        assert "pair.b" in str(exc_info.value)

    def test_load_state_dict_shape_mismatch(self):
        """Test that a mis-shaped entry is rejected."""
        pair = _Pair()
        state = pair.state_dict()
        state["pair.w"] = np.ones((3, 2))
        with pytest.raises(ContractError) as exc_info:
            pair.load_state_dict(state)

        assert "Shape mismatch" in str(exc_info.value)

    def test_train_eval_propagates(self):
        """Test that eval reaches child modules."""
        parent = Module("parent")
        child = parent.add_module(_Pair("parent.child"))
        parent.eval()
        assert not child.training
        parent.train()
        assert child.training
