"""Losses, optimiser, schedule and the training loops."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, TypeVar, Union

import numpy as np

from .arraycore import (
    ContractError,
    DiffArray,
    DimensionError,
    Module,
    Parameter,
    backward,
    clamp,
    log,
    no_grad,
    take_columns,
)
from .checkpoint import save_checkpoint
from .config import LossWeights, ModelConfig, OptimConfig
from .corpus import PAD_ID, TAG_PAD_ID, Document, select_tokens, truncate_input
from .extgen import DecoderInput, EncoderInput, ExtGenModel, build_decoder_input, build_encoder_input
from .selector import (
    SelectorModel,
    SentenceInput,
    oracle_sentences,
    score_document,
    select_sentences,
    selection_metrics,
)

logger = logging.getLogger(__name__)

NUMERIC_ERROR = "NUMERIC_ERROR"
NLL_CLAMP = "NLL_CLAMP"
LR_HALVED = "LR_HALVED"
EARLY_STOP = "EARLY_STOP"

BCE_EPS = 1e-7
NLL_EPS = 1e-12

LossValue = Union[DiffArray, float]


class TrainingAborted(Exception):
    """Raised when training diverges; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Optional[Path] = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint


# ── Losses ──────────────────────────────────────────────────────────


@dataclass
class ClampCounter:
    """Counts target probabilities that had to be clamped before ``log``."""

    events: int = 0

    def add(self, count: int) -> None:
        self.events += count


NLL_CLAMPS = ClampCounter()


def weighted_bce(probs: DiffArray, labels: Sequence[int], omega: float) -> DiffArray:
    """``-(1/N) sum[omega*y*log p + (1-y)*log(1-p)]`` with ``p`` clamped to
    ``[1e-7, 1 - 1e-7]``."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if probs.shape != y.shape:
        raise DimensionError(f"weighted_bce: {probs.shape} probabilities for {y.shape} labels")
    if y.size == 0:
        raise ContractError("weighted_bce needs at least one example")
    p = clamp(probs, BCE_EPS, 1.0 - BCE_EPS)
    terms = (omega * y) * log(p) + (1.0 - y) * log(1.0 - p)
    return terms.sum() * (-1.0 / y.size)


def nll_sequence(
    dists: DiffArray,
    targets: Sequence[int],
    pad_id: int = PAD_ID,
    counter: Optional[ClampCounter] = None,
) -> DiffArray:
    """Summed negative log-likelihood of ``targets`` under per-step rows of
    ``dists``; steps whose target is ``pad_id`` are skipped."""
    ids = np.asarray(targets, dtype=np.int64).reshape(-1)
    if dists.ndim != 2 or dists.shape[0] != ids.size:
        raise DimensionError(f"nll_sequence: {dists.shape} distributions for {ids.size} targets")
    if ids.size and (ids.min() < 0 or ids.max() >= dists.shape[1]):
        raise ContractError(f"nll_sequence: target id outside {dists.shape[1]} classes")
    picked = take_columns(dists, ids.reshape(-1, 1))
    keep = (ids != pad_id).reshape(-1, 1)
    tiny = int(((picked.values < NLL_EPS) & keep).sum())
    if tiny:
        (counter or NLL_CLAMPS).add(tiny)
        logger.warning("[%s] %d target probabilities clamped to %g", NLL_CLAMP, tiny, NLL_EPS)
    logp = log(clamp(picked, NLL_EPS, 1.0))
    return (logp * keep).sum() * -1.0


def _finite(value: LossValue) -> bool:
    raw = value.values if isinstance(value, DiffArray) else np.asarray(value)
    return bool(np.isfinite(raw).all())


def combine_losses(
    extraction: LossValue,
    generation: LossValue,
    tagging: LossValue,
    weights: LossWeights,
) -> Tuple[LossValue, LossValue]:
    """``L_g = a*L_w + (1-a)*L_tag`` and ``L_eg = b*L_e + (1-b)*L_g``.

    Raises:
        TrainingAborted: If any input is NaN or infinite.
    """
    for name, value in (("L_e", extraction), ("L_w", generation), ("L_tag", tagging)):
        if not _finite(value):
            logger.error("[%s] %s is not finite", NUMERIC_ERROR, name)
            raise TrainingAborted(f"{name} is not finite")
    alpha, beta = weights.alpha, weights.beta
    combined = alpha * generation + (1.0 - alpha) * tagging
    total = beta * extraction + (1.0 - beta) * combined
    return combined, total


# ── Optimisation ────────────────────────────────────────────────────


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        self.steps += 1
        bias1 = 1.0 - self.beta1**self.steps
        bias2 = 1.0 - self.beta2**self.steps
        for param, m, v in zip(self.params, self._m, self._v):
            if param.grad is None:
                continue
            g = param.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            param.values -= update.astype(param.values.dtype)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``.

    Returns:
        The norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for param in params:
            if param.grad is not None:
                param.grad = param.grad * scale
    return total


@dataclass(frozen=True)
class ScheduleEvent:
    improved: bool
    halved: bool
    stop: bool


class PlateauSchedule:
    """Halve the learning rate whenever validation regresses; stop after
    ``patience`` evaluations without a new best."""

    def __init__(self, optimizer: Adam, decay: float = 0.5, patience: int = 5, mode: str = "max") -> None:
        if mode not in ("max", "min"):
            raise ContractError(f"Unknown schedule mode '{mode}'")
        self.optimizer = optimizer
        self.decay = decay
        self.patience = patience
        self.mode = mode
        self.best: Optional[float] = None
        self.previous: Optional[float] = None
        self.stale = 0

    def _better(self, score: float, reference: float) -> bool:
        return score > reference if self.mode == "max" else score < reference

    def observe(self, score: float) -> ScheduleEvent:
        halved = self.previous is not None and self._better(self.previous, score)
        if halved:
            self.optimizer.lr *= self.decay
            logger.info("[%s] validation %.6f after %.6f, lr now %g", LR_HALVED, score, self.previous, self.optimizer.lr)
        improved = self.best is None or self._better(score, self.best)
        if improved:
            self.best = score
            self.stale = 0
        else:
            self.stale += 1
        self.previous = score
        stop = self.stale >= self.patience
        if stop:
            logger.info("[%s] no improvement for %d evaluations", EARLY_STOP, self.stale)
        return ScheduleEvent(improved=improved, halved=halved, stop=stop)


# ── Metrics log ─────────────────────────────────────────────────────

METRIC_COLUMNS = ("epoch", "loss", "L_e", "L_w", "L_tag", "L_g", "L_eg", "val_metric", "lr")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    parts: Dict[str, float]
    val_metric: float
    lr: float

    def row(self) -> List[str]:
        cells = [str(self.epoch), repr(self.loss)]
        cells.extend(repr(self.parts[name]) if name in self.parts else "" for name in METRIC_COLUMNS[2:7])
        cells.extend([repr(self.val_metric), repr(self.lr)])
        return cells


class MetricsLog:
    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.rows: List[EpochMetrics] = []
        with self.path.open("w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(METRIC_COLUMNS)

    def append(self, metrics: EpochMetrics) -> None:
        self.rows.append(metrics)
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(metrics.row())


# ── Tasks ───────────────────────────────────────────────────────────

ModelT = TypeVar("ModelT", bound=Module, contravariant=True)
ExampleT = TypeVar("ExampleT")


@dataclass
class LossBreakdown:
    total: DiffArray
    parts: Dict[str, float] = field(default_factory=dict)


class TrainingTask(Protocol[ModelT]):
    name: str
    mode: str

    def prepare(self, docs: Sequence[Document]) -> List[object]:
        ...

    def batch_loss(self, model: ModelT, batch: Sequence[object]) -> LossBreakdown:
        ...

    def validate(self, model: ModelT, examples: Sequence[object]) -> float:
        ...


def _mean(losses: Sequence[DiffArray]) -> DiffArray:
    total = losses[0]
    for item in losses[1:]:
        total = total + item
    return total * (1.0 / len(losses))


@dataclass(frozen=True)
class SelectorExample:
    doc: Document
    sentences: List[SentenceInput]


class SelectorTask:
    """Binary salience classification of single sentences."""

    name = "selector"
    mode = "max"

    def __init__(self, model: SelectorModel, weights: LossWeights, budget: int = 200) -> None:
        self.model = model
        self.weights = weights
        self.budget = budget

    def prepare(self, docs: Sequence[Document]) -> List[SelectorExample]:
        return [SelectorExample(doc, self.model.inputs_for(doc)) for doc in docs if doc.n_sentences]

    def batch_loss(self, model: SelectorModel, batch: Sequence[SelectorExample]) -> LossBreakdown:
        sentences = [s for example in batch for s in example.sentences]
        labels = [bit for example in batch for bit in example.doc.salience_labels]
        loss = weighted_bce(model.forward(sentences), labels, self.weights.omega_selector)
        return LossBreakdown(loss, {"L_e": loss.item()})

    def validate(self, model: SelectorModel, examples: Sequence[SelectorExample]) -> float:
        pairs = []
        for example in examples:
            probs = score_document(model, example.doc)
            chosen = select_sentences(example.doc, probs, self.budget, model.config.threshold)
            pairs.append((chosen, example.doc.salience_labels))
        return selection_metrics(pairs).f1


@dataclass(frozen=True)
class ExtGenExample:
    doc: Document
    source: EncoderInput
    target: DecoderInput


def prepare_extgen_example(
    model: ExtGenModel, doc: Document, sentence_indices: Optional[Sequence[int]] = None
) -> ExtGenExample:
    """Encoder and decoder inputs for ``doc`` built from the gold-salient
    sentences (or the given ones), cut to ``max_src_len`` tokens."""
    config = model.config
    indices = (
        list(sentence_indices)
        if sentence_indices is not None
        else oracle_sentences(doc, config.max_src_len)
    )
    selected = truncate_input(select_tokens(doc, indices or [0]), config.max_src_len)
    source = build_encoder_input(selected, model.vocab, config, model.char_length)
    target = build_decoder_input(doc, source, model.vocab, config, model.char_length)
    return ExtGenExample(doc, source, target)


class ExtGenTask:
    """Joint extraction, generation and tag prediction."""

    name = "extgen"
    mode = "min"

    def __init__(self, model: ExtGenModel, weights: LossWeights) -> None:
        self.model = model
        self.weights = weights if model.config.multitask else replace(weights, alpha=1.0)

    def prepare(self, docs: Sequence[Document]) -> List[ExtGenExample]:
        return [prepare_extgen_example(self.model, doc) for doc in docs if doc.tokens]

    def example_losses(self, model: ExtGenModel, example: ExtGenExample) -> Dict[str, LossValue]:
        out = model.teacher_forced_forward(example.source, example.target)
        extraction = weighted_bce(
            out.extract_probs, example.source.extract_labels, self.weights.omega_extractor
        )
        generation = nll_sequence(out.vocab_dists, example.target.target_ids[1:])
        tagging = nll_sequence(out.tag_dists, example.target.target_tags[1:], pad_id=TAG_PAD_ID)
        combined, total = combine_losses(extraction, generation, tagging, self.weights)
        return {"L_e": extraction, "L_w": generation, "L_tag": tagging, "L_g": combined, "L_eg": total}

    def batch_loss(self, model: ExtGenModel, batch: Sequence[ExtGenExample]) -> LossBreakdown:
        per_doc = [self.example_losses(model, example) for example in batch]
        parts = {
            name: float(np.mean([_as_float(losses[name]) for losses in per_doc]))
            for name in ("L_e", "L_w", "L_tag", "L_g", "L_eg")
        }
        total = _mean([losses["L_eg"] for losses in per_doc])  # type: ignore[misc]
        return LossBreakdown(total, parts)

    def validate(self, model: ExtGenModel, examples: Sequence[ExtGenExample]) -> float:
        totals = [_as_float(self.example_losses(model, example)["L_eg"]) for example in examples]
        return float(np.mean(totals)) if totals else 0.0


def _as_float(value: LossValue) -> float:
    return value.item() if isinstance(value, DiffArray) else float(value)


# ── Training loop ───────────────────────────────────────────────────


@dataclass(frozen=True)
class TrainingResult:
    checkpoint: Path
    metrics: Path
    history: List[EpochMetrics]
    epochs: int


def train(
    model: Module,
    dataset: Sequence[Document],
    optim: OptimConfig,
    task: TrainingTask,
    validation: Optional[Sequence[Document]] = None,
    *,
    config: ModelConfig,
    out_dir: Path,
    seed: int,
    stop_below: Optional[float] = None,
) -> TrainingResult:
    """Fit ``model`` on ``dataset`` with Adam and the plateau schedule.

    The best validation checkpoint is written to ``<out_dir>/<task>.ckpt``
    and per-epoch metrics to ``<out_dir>/<task>_metrics.csv``.  Without a
    validation set the training documents are used for validation.  On
    return ``model`` holds the best-validation parameters.

    Raises:
        ContractError: If the dataset is empty.
        TrainingAborted: If a loss or gradient becomes non-finite.
    """
    examples = task.prepare(dataset)
    if not examples:
        raise ContractError("training set is empty")
    held_out = task.prepare(validation) if validation else examples
    out_dir = Path(out_dir)
    checkpoint = out_dir / f"{task.name}.ckpt"
    log_file = MetricsLog(out_dir / f"{task.name}_metrics.csv")
    params = model.trainable_parameters()
    optimizer = Adam(params, optim.learning_rate, optim.adam_beta1, optim.adam_beta2, optim.adam_eps)
    schedule = PlateauSchedule(optimizer, optim.lr_decay, optim.patience, task.mode)
    rng = np.random.default_rng(seed)
    saved = False
    best_state: Optional[Dict[str, np.ndarray]] = None

    def abort(message: str) -> TrainingAborted:
        logger.error("[%s] %s", NUMERIC_ERROR, message)
        return TrainingAborted(message, checkpoint if saved else None)

    epoch = 0
    for epoch in range(1, optim.max_epochs + 1):
        model.train()
        order = rng.permutation(len(examples))
        sums: Dict[str, float] = defaultdict(float)
        total_loss = 0.0
        batches = 0
        for start in range(0, len(order), optim.batch_size):
            batch = [examples[i] for i in order[start : start + optim.batch_size]]
            model.zero_grad()
            try:
                breakdown = task.batch_loss(model, batch)
            except TrainingAborted as exc:
                raise abort(f"epoch {epoch}: {exc}") from exc
            value = breakdown.total.item()
            if not math.isfinite(value):
                raise abort(f"epoch {epoch}: loss is {value}")
            backward(breakdown.total)
            norm = clip_grad_norm(params, optim.grad_clip)
            if not math.isfinite(norm):
                raise abort(f"epoch {epoch}: gradient norm is {norm}")
            optimizer.step()
            total_loss += value
            for name, part in breakdown.parts.items():
                sums[name] += part
            batches += 1
            logger.debug("epoch %d batch %d loss %.6f grad-norm %.4f", epoch, batches, value, norm)

        lr_used = optimizer.lr
        model.eval()
        with no_grad():
            score = task.validate(model, held_out)
        event = schedule.observe(score)
        if event.improved:
            save_checkpoint(checkpoint, config.to_flat(), model)
            best_state = model.state_dict()
            saved = True
        metrics = EpochMetrics(
            epoch=epoch,
            loss=total_loss / batches,
            parts={name: value / batches for name, value in sums.items()},
            val_metric=score,
            lr=lr_used,
        )
        log_file.append(metrics)
        logger.info(
            "%s epoch %d: loss %.6f val %.6f lr %g", task.name, epoch, metrics.loss, score, lr_used
        )
        if event.stop:
            break
        if stop_below is not None and metrics.loss < stop_below:
            logger.info("%s loss %.6f below %g, stopping", task.name, metrics.loss, stop_below)
            break

    if not saved:
        save_checkpoint(checkpoint, config.to_flat(), model)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainingResult(checkpoint=checkpoint, metrics=log_file.path, history=log_file.rows, epochs=epoch)
