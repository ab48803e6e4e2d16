"""
Paired approximate randomization test between two systems' predictions.

Each iteration swaps the two systems' whole-document prediction vectors with
probability 1/2 and recomputes the metric difference. The p-value counts
iterations whose difference reaches the observed one, with +1 smoothing.
"""
import itertools
import logging
from typing import Callable, Dict

import numpy as np

from hilat.errors import ShapeError, UsageError
from hilat.metrics import ScoreMatrix, aggregate_auc, label_aucs, precision_at_k, prf1

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 10000
TIE_TOLERANCE = 1e-12
MAX_EXACT_DOCS = 20

Metric = Callable[[np.ndarray, np.ndarray, float], float]


def _auc(which: int) -> Metric:
    def metric(probs, gold, threshold):
        matrix = ScoreMatrix(probs, gold)
        return aggregate_auc(label_aucs(matrix), matrix)[which]
    return metric


def _thresholded(key: str) -> Metric:
    def metric(probs, gold, threshold):
        return prf1(ScoreMatrix(probs, gold), threshold)[key]
    return metric


def _p_at(k: int) -> Metric:
    def metric(probs, gold, threshold):
        return precision_at_k(ScoreMatrix(probs, gold), k)
    return metric


METRICS: Dict[str, Metric] = {
    "micro_f1": _thresholded("f1_micro"),
    "macro_f1": _thresholded("f1_macro"),
    "micro_p": _thresholded("p_micro"),
    "macro_p": _thresholded("p_macro"),
    "micro_r": _thresholded("r_micro"),
    "macro_r": _thresholded("r_macro"),
    "macro_auc": _auc(0),
    "micro_auc": _auc(1),
    "p_at_5": _p_at(5),
    "p_at_8": _p_at(8),
    "p_at_15": _p_at(15),
}


def resolve_metric(metric) -> Metric:
    if callable(metric):
        return metric
    if metric not in METRICS:
        raise UsageError(f"unknown metric {metric!r} (expected one of {', '.join(sorted(METRICS))})")
    return METRICS[metric]


def _delta(metric: Metric, a: np.ndarray, b: np.ndarray, gold: np.ndarray, threshold: float) -> float:
    return abs(metric(a, gold, threshold) - metric(b, gold, threshold))


def approx_randomization_test(
    preds_a: np.ndarray,
    preds_b: np.ndarray,
    gold: np.ndarray,
    metric="micro_f1",
    n_iter: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    threshold: float = 0.5,
    exact: bool = False,
) -> Dict[str, object]:
    """
    Returns {"p_value", "delta", "metric", "n_iter"}.

    With exact=True every one of the 2^n swap patterns is enumerated and the
    p-value is the plain fraction reaching the observed difference.
    """
    preds_a = np.atleast_2d(np.asarray(preds_a, dtype=np.float64))
    preds_b = np.atleast_2d(np.asarray(preds_b, dtype=np.float64))
    gold = np.atleast_2d(np.asarray(gold))
    if preds_a.shape != preds_b.shape or preds_a.shape != gold.shape:
        raise ShapeError(f"predictions {preds_a.shape} / {preds_b.shape} and gold {gold.shape} are not aligned")
    if n_iter < 1:
        raise UsageError("n_iter must be positive")
    fn = resolve_metric(metric)
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "custom")
    n_docs = preds_a.shape[0]

    observed = _delta(fn, preds_a, preds_b, gold, threshold)

    def reaches(swap: np.ndarray) -> bool:
        a = np.where(swap[:, None], preds_b, preds_a)
        b = np.where(swap[:, None], preds_a, preds_b)
        return _delta(fn, a, b, gold, threshold) >= observed - TIE_TOLERANCE

    if exact:
        if n_docs > MAX_EXACT_DOCS:
            raise UsageError(f"exact enumeration is limited to {MAX_EXACT_DOCS} documents")
        patterns = list(itertools.product((False, True), repeat=n_docs))
        count = sum(reaches(np.array(p, dtype=bool)) for p in patterns)
        p_value = count / len(patterns)
        n_iter = len(patterns)
    else:
        rng = np.random.default_rng(seed)
        count = 0
        for _ in range(n_iter):
            count += reaches(rng.random(n_docs) < 0.5)
        p_value = (count + 1) / (n_iter + 1)

    logger.debug("ART %s: delta=%.6f p=%.6f over %d iterations", name, observed, p_value, n_iter)
    return {"p_value": float(p_value), "delta": float(observed), "metric": name, "n_iter": int(n_iter)}
