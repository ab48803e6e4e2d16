"""
Multi-label evaluation: AUC, precision / recall / F1, precision@k, and the
report files written by `eval` and `ablate`.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from hilat.errors import DatasetFormatError, DomainError, EvaluationError, ShapeError, UsageError
from hilat.models import MetricsReport

logger = logging.getLogger(__name__)

DEFAULT_KS = (5, 8, 15)


@dataclass
class ScoreMatrix:
    probs: np.ndarray  # n_docs x L
    gold: np.ndarray  # n_docs x L, 0/1

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        self.gold = np.atleast_2d(np.asarray(self.gold)).astype(bool)
        if self.probs.shape != self.gold.shape:
            raise ShapeError(f"probs {self.probs.shape} and gold {self.gold.shape} differ")
        if self.probs.size and (np.nanmin(self.probs) < 0.0 or np.nanmax(self.probs) > 1.0):
            raise DomainError("probabilities must lie in [0, 1]")
        if not np.all(np.isfinite(self.probs)):
            raise DomainError("probabilities must be finite")

    @property
    def n_docs(self) -> int:
        return self.probs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.probs.shape[1]


# ============================================================================
# AUC
# ============================================================================

def roc_auc_label(scores: Sequence[float], gold: Sequence[int]) -> Optional[float]:
    """
    Rank-based AUC with midranks for ties.

    Returns None when the label has no positives or no negatives; callers
    record it as skipped.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    gold = np.asarray(gold).astype(bool).ravel()
    if scores.shape != gold.shape:
        raise ShapeError(f"{scores.shape[0]} scores for {gold.shape[0]} gold values")
    n_pos = int(gold.sum())
    n_neg = gold.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    return float((ranks[gold].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def label_aucs(matrix: ScoreMatrix) -> List[Optional[float]]:
    return [roc_auc_label(matrix.probs[:, j], matrix.gold[:, j]) for j in range(matrix.n_labels)]


def aggregate_auc(aucs: Sequence[Optional[float]], matrix: ScoreMatrix) -> Tuple[float, float]:
    """(macro over non-skipped labels, micro over flattened pairs)."""
    kept = [a for a in aucs if a is not None]
    if not kept:
        raise EvaluationError("every label lacks positives or negatives; AUC is undefined")
    micro = roc_auc_label(matrix.probs.ravel(), matrix.gold.ravel())
    return float(np.mean(kept)), micro


# ============================================================================
# Thresholded metrics
# ============================================================================

def _ratio(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def label_counts(matrix: ScoreMatrix, threshold: float = 0.5) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-label (TP, FP, FN)."""
    pred = matrix.probs >= threshold
    tp = np.sum(pred & matrix.gold, axis=0)
    fp = np.sum(pred & ~matrix.gold, axis=0)
    fn = np.sum(~pred & matrix.gold, axis=0)
    return tp, fp, fn


def prf1(matrix: ScoreMatrix, threshold: float = 0.5) -> Dict[str, float]:
    tp, fp, fn = label_counts(matrix, threshold)

    p_micro = _ratio(tp.sum(), tp.sum() + fp.sum())
    r_micro = _ratio(tp.sum(), tp.sum() + fn.sum())

    per_p = [_ratio(t, t + f) for t, f in zip(tp, fp)]
    per_r = [_ratio(t, t + f) for t, f in zip(tp, fn)]
    per_f1 = [_f1(p, r) for p, r in zip(per_p, per_r)]
    return {
        "p_macro": float(np.mean(per_p)) if per_p else 0.0,
        "r_macro": float(np.mean(per_r)) if per_r else 0.0,
        "f1_macro": float(np.mean(per_f1)) if per_f1 else 0.0,
        "p_micro": p_micro,
        "r_micro": r_micro,
        "f1_micro": _f1(p_micro, r_micro),
    }


def precision_at_k(matrix: ScoreMatrix, k: int) -> float:
    """Mean over documents of the gold fraction among the top-k labels (ties -> lower index first)."""
    if k < 1 or k > matrix.n_labels:
        raise UsageError(f"k={k} must lie in [1, {matrix.n_labels}]")
    if matrix.n_docs == 0:
        return 0.0
    hits = []
    for scores, gold in zip(matrix.probs, matrix.gold):
        top = np.argsort(-scores, kind="stable")[:k]
        hits.append(gold[top].sum() / k)
    return float(np.mean(hits))


# ============================================================================
# Full report
# ============================================================================

def evaluate(
    probs: np.ndarray,
    gold: np.ndarray,
    label_codes: Optional[Sequence[str]] = None,
    threshold: float = 0.5,
    ks: Sequence[int] = DEFAULT_KS,
) -> MetricsReport:
    matrix = ScoreMatrix(probs, gold)
    if matrix.n_docs == 0:
        raise EvaluationError("no documents to evaluate")
    codes = list(label_codes) if label_codes is not None else [str(j) for j in range(matrix.n_labels)]
    if len(codes) != matrix.n_labels:
        raise ShapeError(f"{len(codes)} label codes for {matrix.n_labels} score columns")

    aucs = label_aucs(matrix)
    skipped = [code for code, auc in zip(codes, aucs) if auc is None]
    if skipped:
        logger.info("AUC skipped for %d labels without both classes", len(skipped))
    try:
        auc_macro, auc_micro = aggregate_auc(aucs, matrix)
    except EvaluationError as e:
        logger.warning("%s", e.detail)
        auc_macro, auc_micro = None, roc_auc_label(matrix.probs.ravel(), matrix.gold.ravel())

    p_at: Dict[int, Optional[float]] = {}
    for k in ks:
        if k > matrix.n_labels:
            logger.warning("P@%d undefined with %d labels", k, matrix.n_labels)
            p_at[k] = None
        else:
            p_at[k] = precision_at_k(matrix, k)

    tp, fp, fn = label_counts(matrix, threshold)
    per_label = []
    for j, code in enumerate(codes):
        p = _ratio(tp[j], tp[j] + fp[j])
        r = _ratio(tp[j], tp[j] + fn[j])
        per_label.append({
            "code": code,
            "auc": aucs[j],
            "precision": p,
            "recall": r,
            "f1": _f1(p, r),
            "support": int(matrix.gold[:, j].sum()),
        })

    return MetricsReport(
        auc_macro=auc_macro,
        auc_micro=auc_micro,
        p_at=p_at,
        per_label=per_label,
        skipped_labels=skipped,
        n_docs=matrix.n_docs,
        **prf1(matrix, threshold),
    )


SUMMARY_FIELDS = [
    ("AUC macro", "auc_macro"),
    ("AUC micro", "auc_micro"),
    ("P macro", "p_macro"),
    ("P micro", "p_micro"),
    ("R macro", "r_macro"),
    ("R micro", "r_micro"),
    ("F1 macro", "f1_macro"),
    ("F1 micro", "f1_micro"),
]


def summary_values(report: MetricsReport) -> List[Tuple[str, Optional[float]]]:
    rows = [(name, getattr(report, attr)) for name, attr in SUMMARY_FIELDS]
    rows += [(f"P@{k}", value) for k, value in sorted(report.p_at.items())]
    return rows


def _fmt(value: Optional[float], percent: bool) -> str:
    if value is None:
        return "n/a"
    return f"{100.0 * value:.1f}" if percent else f"{value:.4f}"


def format_report(report: MetricsReport, percent: bool = False, per_label: bool = True) -> str:
    """Aligned plain-text table."""
    lines = [f"documents: {report.n_docs}"]
    rows = summary_values(report)
    width = max(len(name) for name, _ in rows)
    lines += [f"{name:<{width}}  {_fmt(value, percent):>8}" for name, value in rows]
    if report.significance:
        sig = report.significance
        lines.append(f"{'p-value':<{width}}  {sig['p_value']:>8.4f}  ({sig['metric']}, {sig['n_iter']} iterations)")

    if per_label and report.per_label:
        code_width = max(4, max(len(row["code"]) for row in report.per_label))
        lines.append("")
        lines.append(f"{'code':<{code_width}}  {'AUC':>8}  {'P':>8}  {'R':>8}  {'F1':>8}  {'support':>7}")
        for row in report.per_label:
            lines.append(
                f"{row['code']:<{code_width}}  {_fmt(row['auc'], percent):>8}  {_fmt(row['precision'], percent):>8}  "
                f"{_fmt(row['recall'], percent):>8}  {_fmt(row['f1'], percent):>8}  {row['support']:>7}"
            )
    if report.skipped_labels:
        lines.append("")
        lines.append(f"AUC skipped: {', '.join(report.skipped_labels)}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, out_dir: str, name: str = "metrics", percent: bool = False) -> Tuple[str, str]:
    """Write <name>.json and <name>.txt; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{name}.json")
    text_path = os.path.join(out_dir, f"{name}.txt")
    with open(json_path, "w") as f:
        f.write(report.model_dump_json(indent=2))
        f.write("\n")
    with open(text_path, "w") as f:
        f.write(format_report(report, percent=percent))
    return json_path, text_path


# ============================================================================
# Prediction files
# ============================================================================

def write_predictions(path: str, doc_ids: Sequence[str], probs: np.ndarray, label_codes: Sequence[str]) -> None:
    """JSON lines: a header {"label_codes": [...]} then {"id", "probs"} per document."""
    probs = np.atleast_2d(probs)
    if len(doc_ids) != probs.shape[0] or probs.shape[1] != len(label_codes):
        raise ShapeError(f"{len(doc_ids)} ids / {len(label_codes)} codes for probs {probs.shape}")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps({"label_codes": list(label_codes)}) + "\n")
        for doc_id, row in zip(doc_ids, probs):
            f.write(json.dumps({"id": doc_id, "probs": [round(float(p), 8) for p in row]}) + "\n")


def read_predictions(path: str) -> Tuple[List[str], np.ndarray, List[str]]:
    """Returns (doc ids, probs, label codes)."""
    try:
        with open(path) as f:
            lines = [line for line in f if line.strip()]
    except OSError as e:
        raise DatasetFormatError(f"cannot read predictions {path}: {e}")
    if not lines:
        raise DatasetFormatError(f"predictions file {path} is empty")
    try:
        codes = json.loads(lines[0])["label_codes"]
        ids, rows = [], []
        for number, line in enumerate(lines[1:], start=2):
            record = json.loads(line)
            if len(record["probs"]) != len(codes):
                raise DatasetFormatError(f"{len(record['probs'])} probabilities for {len(codes)} labels", line=number)
            ids.append(record["id"])
            rows.append(record["probs"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetFormatError(f"malformed predictions file {path}: {e}")
    probs = np.array(rows, dtype=np.float64).reshape(len(rows), len(codes))
    return ids, probs, codes


def align_predictions(
    ids_a: Sequence[str], probs_a: np.ndarray, ids_b: Sequence[str], probs_b: np.ndarray
) -> np.ndarray:
    """Reorder probs_b onto ids_a; both files must cover the same documents."""
    if sorted(ids_a) != sorted(ids_b):
        raise ShapeError("prediction files cover different documents")
    index = {doc_id: i for i, doc_id in enumerate(ids_b)}
    return probs_b[[index[doc_id] for doc_id in ids_a]]


# ============================================================================
# Ablation deltas
# ============================================================================

def delta_rows(reports: Mapping[str, MetricsReport], baseline: str = "full") -> List[Dict[str, object]]:
    """Per variant, each metric minus the baseline's value (None where undefined)."""
    if baseline not in reports:
        raise UsageError(f"no report for baseline {baseline!r}")
    base = dict(summary_values(reports[baseline]))
    rows = []
    order = [baseline] + [name for name in reports if name != baseline]
    for name in order:
        report = reports[name]
        values = dict(summary_values(report))
        deltas = {
            metric: (value - base[metric] if value is not None and base.get(metric) is not None else None)
            for metric, value in values.items()
        }
        rows.append({"variant": name, "values": values, "deltas": deltas})
    return rows


def format_delta_table(rows: Sequence[Dict[str, object]], percent: bool = True) -> str:
    if not rows:
        return ""
    metrics = list(rows[0]["values"].keys())
    width = max(8, max(len(m) for m in metrics))
    header = f"{'variant':<10}" + "".join(f"{m:>{width + 2}}" for m in metrics)
    lines = [header]
    for row in rows:
        cells = []
        for metric in metrics:
            if row["variant"] == rows[0]["variant"]:
                cells.append(_fmt(row["values"][metric], percent))
            else:
                delta = row["deltas"][metric]
                if delta is None:
                    cells.append("n/a")
                else:
                    cells.append(f"{100.0 * delta:+.1f}" if percent else f"{delta:+.4f}")
        lines.append(f"{row['variant']:<10}" + "".join(f"{c:>{width + 2}}" for c in cells))
    return "\n".join(lines) + "\n"
