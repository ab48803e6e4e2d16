"""
Mini-batch training loop.

Each example runs forward and backward on its own tape and the per-example
gradients, scaled by 1/batch, accumulate into the parameters. The optimizer
step is single-writer. With workers > 1 the examples of a batch run on a
thread pool; summation order then varies, so bit-identical results are only
promised for one worker.
"""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from hilat.attention import bce_loss
from hilat.classifier import HiLATClassifier
from hilat.errors import (
    ConfigError,
    DomainError,
    LabelValidationError,
    NonFiniteError,
    TrainingDivergedError,
)
from hilat.metrics import evaluate
from hilat.models import ChunkedDocument
from hilat.optim import AdamWState, adamw_step, lr_schedule
from hilat.tensor import backward, reset_tape, scale

logger = logging.getLogger(__name__)

LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "model.ckpt"
LAST_GOOD_CHECKPOINT = "last_good.ckpt"
TRAIN_LOG = "train_log.jsonl"


@dataclass
class TrainResult:
    final: Dict[str, np.ndarray]
    best: Optional[Dict[str, np.ndarray]] = None
    best_step: Optional[int] = None
    best_score: Optional[float] = None
    log: List[dict] = field(default_factory=list)
    steps_run: int = 0

    @property
    def selected(self) -> Dict[str, np.ndarray]:
        """Best validated parameters when validation ran, else the final ones."""
        return self.best if self.best is not None else self.final

    def losses(self) -> List[float]:
        return [record["loss"] for record in self.log]


def batch_indices(n_docs: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless seeded batches; a dataset smaller than a batch is topped up by sampling with replacement."""
    if n_docs < batch_size:
        while True:
            yield np.concatenate([rng.permutation(n_docs), rng.integers(0, n_docs, size=batch_size - n_docs)])
    pending = np.empty(0, dtype=np.int64)
    while True:
        while pending.size < batch_size:
            pending = np.concatenate([pending, rng.permutation(n_docs)])
        yield pending[:batch_size]
        pending = pending[batch_size:]


def _check_labels(docs: Sequence[ChunkedDocument], n_labels: int, split: str) -> None:
    for doc in docs:
        if doc.labels.shape != (n_labels,):
            raise LabelValidationError(
                f"{split} document {doc.id} has {doc.labels.shape[0]} label slots, model has {n_labels}"
            )


def _example_step(model: HiLATClassifier, doc: ChunkedDocument, weight: float, rng: np.random.Generator) -> float:
    probs, _ = model.probabilities(doc, training=True, rng=rng)
    loss = bce_loss(probs, doc.labels)
    value = loss.item()
    backward(scale(loss.value, weight))
    return value


class _LogWriter:
    def __init__(self, path: Optional[str]):
        self.records: List[dict] = []
        self._f = None
        if path:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            self._f = open(path, "w")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._f:
            self._f.write(json.dumps(record, sort_keys=True) + "\n")
            self._f.flush()

    def close(self) -> None:
        if self._f:
            self._f.close()


def train(
    train_docs: Sequence[ChunkedDocument],
    model: HiLATClassifier,
    val_docs: Optional[Sequence[ChunkedDocument]] = None,
    out_dir: Optional[str] = None,
    progress: bool = True,
) -> TrainResult:
    """
    Run config.total_steps updates on `model` in place.

    When out_dir is set, writes the training log, last.ckpt (final weights)
    and model.ckpt (best validated weights, or final without validation).
    """
    config = model.config
    if not train_docs:
        raise ConfigError("training set is empty")
    _check_labels(train_docs, model.n_labels, "training")
    if val_docs:
        _check_labels(val_docs, model.n_labels, "validation")

    log = _LogWriter(os.path.join(out_dir, TRAIN_LOG) if out_dir else None)
    result = TrainResult(final={})
    params = model.parameters()
    state = AdamWState()
    rng = np.random.default_rng(config.seed)
    batches = batch_indices(len(train_docs), config.batch_size, rng)
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    weight = 1.0 / config.batch_size

    logger.info(
        "Training %d docs for %d steps (batch %d, lr %g, %d trainable tensors)",
        len(train_docs), config.total_steps, config.batch_size, config.learning_rate,
        len(model.trainable_parameters()),
    )
    try:
        steps = tqdm(range(1, config.total_steps + 1), desc="train", disable=not progress, leave=False)
        for step in steps:
            lr_t = lr_schedule(step, config.warmup_steps, config.total_steps, config.learning_rate)
            batch = next(batches)
            model.zero_grad()
            rngs = [np.random.default_rng((config.seed, step, pos)) for pos in range(len(batch))]
            try:
                if pool is None:
                    values = [_example_step(model, train_docs[i], weight, r) for i, r in zip(batch, rngs)]
                else:
                    futures = [pool.submit(_example_step, model, train_docs[i], weight, r) for i, r in zip(batch, rngs)]
                    values = [f.result() for f in futures]
                loss = float(np.mean(values))
                if not np.isfinite(loss):
                    raise NonFiniteError(f"loss is {loss}")
                adamw_step(params, state, lr_t, config.weight_decay)
            except (NonFiniteError, DomainError) as e:
                reset_tape()
                last_good = model.snapshot()
                if out_dir:
                    model.save(os.path.join(out_dir, LAST_GOOD_CHECKPOINT), extra_meta={"step": step - 1})
                raise TrainingDivergedError(f"{e.detail} at step {step}", step=step, last_good=last_good)

            record = {"step": step, "lr": lr_t, "loss": loss}
            if val_docs and (step % config.eval_every == 0 or step == config.total_steps):
                record.update(_validate(model, val_docs, config.threshold))
                score = record["val_f1_micro"]
                if result.best_score is None or score > result.best_score:
                    result.best_score = score
                    result.best_step = step
                    result.best = model.snapshot()
                logger.info("step %d loss %.4f val micro-F1 %.4f", step, loss, score)
            log.write(record)
            steps.set_postfix(loss=f"{loss:.4f}")
            result.steps_run = step
    finally:
        log.close()
        if pool is not None:
            pool.shutdown()

    result.final = model.snapshot()
    result.log = log.records
    if out_dir:
        meta = {"step": result.steps_run}
        model.save(os.path.join(out_dir, LAST_CHECKPOINT), extra_meta=meta)
        if result.best is not None:
            model.restore(result.best)
            model.save(os.path.join(out_dir, BEST_CHECKPOINT), extra_meta={"step": result.best_step, "val_f1_micro": result.best_score})
            model.restore(result.final)
        else:
            model.save(os.path.join(out_dir, BEST_CHECKPOINT), extra_meta=meta)
    return result


def _validate(model: HiLATClassifier, docs: Sequence[ChunkedDocument], threshold: float) -> dict:
    probs = model.predict_matrix(docs)
    gold = np.stack([doc.labels for doc in docs])
    report = evaluate(probs, gold, model.label_codes, threshold=threshold, ks=())
    return {
        "val_f1_micro": report.f1_micro,
        "val_f1_macro": report.f1_macro,
        "val_auc_micro": report.auc_micro,
    }
