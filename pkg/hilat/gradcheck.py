"""
Central finite-difference check of the analytic gradients.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from hilat import tensor as tensor_module
from hilat.attention import bce_loss
from hilat.classifier import HiLATClassifier, build_classifier
from hilat.config import TrainConfig
from hilat.errors import UsageError
from hilat.models import ChunkedDocument, Document
from hilat.tensor import DTYPE, Tensor, backward, no_grad, reset_tape
from hilat.textprep import Vocabulary, chunk_document

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
DEFAULT_SAMPLES = 200
PASS_THRESHOLD = 1e-4


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_sampled: int
    worst: Optional[Tuple[str, Tuple[int, int]]] = None
    per_tensor: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < PASS_THRESHOLD


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def sample_coordinates(
    params: Mapping[str, Tensor], n_sampled: int, rng: np.random.Generator
) -> List[Tuple[str, Tuple[int, int]]]:
    """Round-robin over tensors so every tensor is represented, random coordinate within each."""
    names = [name for name, p in params.items() if p.requires_grad and p.data.size]
    if not names:
        raise UsageError("no trainable parameters to check")
    coords = []
    for k in range(n_sampled):
        name = names[k % len(names)]
        rows, cols = params[name].shape
        coords.append((name, (int(rng.integers(rows)), int(rng.integers(cols)))))
    return coords


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = DEFAULT_EPS,
    n_sampled: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> GradCheckResult:
    """
    Compare backward() against (f(x+eps) - f(x-eps)) / 2eps on sampled coordinates.

    loss_fn must be deterministic (no dropout) and return a scalar tensor.
    """
    if DTYPE != np.float64:
        raise UsageError("gradient checks need 64-bit tensors")
    for p in params.values():
        p.zero_grad()
    reset_tape()
    backward(loss_fn())
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    result = GradCheckResult(max_rel_error=0.0, n_sampled=n_sampled)
    rng = np.random.default_rng(seed)
    with no_grad():
        for name, (i, j) in sample_coordinates(params, n_sampled, rng):
            p = params[name]
            original = p.data[i, j]
            p.data[i, j] = original + eps
            f_plus = loss_fn().item()
            p.data[i, j] = original - eps
            f_minus = loss_fn().item()
            p.data[i, j] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = relative_error(float(analytic[name][i, j]), numeric)
            result.per_tensor[name] = max(result.per_tensor.get(name, 0.0), err)
            if result.worst is None or err > result.max_rel_error:
                result.max_rel_error = err
                result.worst = (name, (i, j))
    for p in params.values():
        p.zero_grad()
    return result


def grad_check_model(
    model: HiLATClassifier,
    doc: ChunkedDocument,
    eps: float = DEFAULT_EPS,
    n_sampled: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> GradCheckResult:
    """Finite-difference check of the full forward + loss on one example."""
    def loss_fn() -> Tensor:
        probs, _ = model.probabilities(doc, training=False)
        return bce_loss(probs, doc.labels).value

    return grad_check(loss_fn, model.trainable_parameters(), eps, n_sampled, seed)


@contextmanager
def mutated_tanh(derivative: Callable[[np.ndarray], np.ndarray] = lambda y: 1.0 - y):
    """Swap in a wrong tanh derivative so the check can be shown to notice."""
    original = tensor_module.tanh_derivative
    tensor_module.tanh_derivative = derivative
    try:
        yield
    finally:
        tensor_module.tanh_derivative = original


# ============================================================================
# Toy model
# ============================================================================

TOY_WORDS = ["fever", "cough", "rash", "pain", "sepsis", "edema"]
TOY_TEXT = "fever cough rash pain sepsis edema fever rash cough"


def build_toy_model(
    seed: int = 0,
    d_e: int = 4,
    n_labels: int = 3,
    n_chunks: int = 2,
    slots: int = 8,
) -> Tuple[HiLATClassifier, ChunkedDocument]:
    """Seeded toy HiLAT and one document; the last chunk holds PAD slots."""
    if n_labels > 26:
        raise UsageError("toy model supports at most 26 labels")
    label_codes = [chr(ord("A") + k) for k in range(n_labels)]
    config = TrainConfig(
        d_e=d_e,
        n_chunks=n_chunks,
        content_len=slots - 2,
        dropout_p=0.0,
        total_steps=0,
        warmup_steps=0,
        seed=seed,
    )
    vocab = Vocabulary(TOY_WORDS)
    model = build_classifier(config, vocab, label_codes)
    rng = np.random.default_rng(seed)
    labels = frozenset(code for code in label_codes if rng.random() < 0.5) or frozenset(label_codes[:1])
    doc = Document(id="toy", text=TOY_TEXT, labels=labels)
    chunked = chunk_document(doc, vocab, label_codes, n_chunks=n_chunks, content_len=slots - 2, prep=config.prep)
    return model, chunked
