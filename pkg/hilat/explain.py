"""
Explanations from attention: global token weights, word weights, heatmaps.

A token's global weight for label l is its token-level weight in chunk n
scaled by the weight of chunk n for l. Word weights sum the global weights
of the word's token slots (CLS, SEP and PAD excluded) and are normalized over
the whole document, per label.
"""
import html
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from hilat.classifier import HiLATClassifier
from hilat.errors import DegenerateDocumentError, IndexOutOfRangeError, ShapeError
from hilat.models import AttentionRecord, ChunkedDocument, Prediction

logger = logging.getLogger(__name__)

WEIGHT_DECIMALS = 6
HEAT_RGB = (220, 50, 47)


def global_token_attention(alpha: np.ndarray, o: float) -> np.ndarray:
    """Token weights of one (chunk, label) scaled by that chunk's weight."""
    return np.asarray(alpha, dtype=np.float64) * float(o)


@dataclass
class GlobalAttention:
    g: List[np.ndarray]  # per chunk: labels x slots
    chunk_weights: np.ndarray  # labels x chunks
    record: AttentionRecord

    def total_mass(self, label: int) -> float:
        return float(sum(g_n[label][mask].sum() for g_n, mask in zip(self.g, self.record.pad_masks)))


def global_attention(record: AttentionRecord) -> GlobalAttention:
    """
    Global weights for every chunk and label.

    Variants without chunk-level attention weights (max pooling, flat
    concatenation) have no o; every chunk then counts equally.
    """
    n_chunks = record.n_chunks
    if record.o is None:
        n_labels = record.A[0].shape[0]
        o = np.full((n_labels, n_chunks), 1.0 / n_chunks)
    else:
        o = record.o
    if o.shape[1] != n_chunks:
        raise ShapeError(f"chunk weights {o.shape} for {n_chunks} chunks")
    g = [record.A[n] * o[:, n : n + 1] for n in range(n_chunks)]
    return GlobalAttention(g=g, chunk_weights=o, record=record)


@dataclass
class WordAttention:
    label: int
    entries: List[Tuple[int, str, float]] = field(default_factory=list)  # (word_index, word, weight)

    def weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.entries])

    def argmax(self) -> Tuple[int, str, float]:
        return max(self.entries, key=lambda e: (e[2], -e[0]))


def word_attention(doc: ChunkedDocument, glob: GlobalAttention, label: int) -> WordAttention:
    if glob.g and not 0 <= label < glob.g[0].shape[0]:
        raise IndexOutOfRangeError(f"label {label} out of range")
    if len(doc.chunks) != len(glob.g):
        raise ShapeError(f"{len(doc.chunks)} chunks but attention for {len(glob.g)}")

    mass: Dict[int, float] = {}
    for chunk, g_n in zip(doc.chunks, glob.g):
        row = g_n[label]
        for word_index, start, end in chunk.word_spans:
            mass[word_index] = mass.get(word_index, 0.0) + float(row[start:end].sum())
    total = sum(mass.values())
    if not mass or total <= 0.0:
        raise DegenerateDocumentError(f"document {doc.id} has no words carrying attention")

    entries = []
    for word_index in sorted(mass):
        word = doc.words[word_index] if word_index < len(doc.words) else ""
        entries.append((word_index, word, mass[word_index] / total))
    return WordAttention(label=label, entries=entries)


def top_words(attn: WordAttention, k: int = 5) -> List[Tuple[int, str, float]]:
    """Highest-weighted words; equal weights keep document order."""
    return sorted(attn.entries, key=lambda e: (-e[2], e[0]))[:k]


# ============================================================================
# Document explanation
# ============================================================================

@dataclass
class Explanation:
    doc: ChunkedDocument
    prediction: Prediction
    glob: GlobalAttention
    words: Dict[int, WordAttention]  # label index -> weights, in display order

    @property
    def labels(self) -> List[int]:
        return list(self.words)


def select_labels(prediction: Prediction, top_k: Optional[int] = None) -> List[int]:
    """Labels at or above threshold plus the top_k most probable; most probable first."""
    order = [int(j) for j in np.argsort(-prediction.probs, kind="stable")]
    chosen = {j for j in order if prediction.probs[j] >= prediction.threshold}
    if top_k:
        chosen.update(order[:top_k])
    return [j for j in order if j in chosen]


def explain_document(model: HiLATClassifier, doc: ChunkedDocument, top_k: Optional[int] = None) -> Explanation:
    prediction, record = model.forward(doc)
    glob = global_attention(record)
    words = {label: word_attention(doc, glob, label) for label in select_labels(prediction, top_k)}
    return Explanation(doc=doc, prediction=prediction, glob=glob, words=words)


# ============================================================================
# Rendering
# ============================================================================

def round_weights(weights: Sequence[float], decimals: int = WEIGHT_DECIMALS) -> List[float]:
    """Round to `decimals` places keeping the rounded total equal to the rounded sum (largest remainder)."""
    unit = 10 ** decimals
    scaled = np.asarray(weights, dtype=np.float64) * unit
    floors = np.floor(scaled)
    remaining = int(round(scaled.sum())) - int(floors.sum())
    if remaining > 0:
        order = sorted(range(len(scaled)), key=lambda i: (-(scaled[i] - floors[i]), i))
        for i in order[:remaining]:
            floors[i] += 1
    return [float(f) / unit for f in floors]


def sidecar_path(html_path: str) -> str:
    root, _ = os.path.splitext(html_path)
    return root + ".weights.jsonl"


def _heat_span(word: str, opacity: float) -> str:
    r, g, b = HEAT_RGB
    return f'<span style="background-color: rgba({r},{g},{b},{opacity:.3f})">{html.escape(word)}</span>'


def render_html(
    explanation: Explanation,
    label_codes: Sequence[str],
    descriptions: Optional[Mapping[str, str]] = None,
) -> str:
    doc = explanation.doc
    probs = explanation.prediction.probs
    parts = [
        "<!DOCTYPE html>",
        "<html>",
        "<head>",
        '<meta charset="utf-8">',
        f"<title>{html.escape(doc.id)}</title>",
        "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.8}"
        "section{margin-bottom:2em}span{padding:0 1px}</style>",
        "</head>",
        "<body>",
        f"<h1>Document {html.escape(doc.id)}</h1>",
    ]
    if not explanation.words:
        parts.append("<p>No label reached the decision threshold.</p>")
    for label, attn in explanation.words.items():
        code = label_codes[label]
        heading = f"{html.escape(code)} (p = {probs[label]:.4f})"
        if descriptions and descriptions.get(code):
            heading += f" &middot; {html.escape(descriptions[code])}"
        peak = max(w for _, _, w in attn.entries)
        weight_of = {index: w for index, _, w in attn.entries}
        spans = [
            _heat_span(word, weight_of.get(index, 0.0) / peak if peak > 0 else 0.0)
            for index, word in enumerate(doc.words)
        ]
        parts.append(f'<section id="label-{html.escape(code)}">')
        parts.append(f"<h2>{heading}</h2>")
        parts.append("<p>" + " ".join(spans) + "</p>")
        parts.append("</section>")
    parts += ["</body>", "</html>"]
    return "\n".join(parts) + "\n"


def sidecar_lines(explanation: Explanation, label_codes: Sequence[str]) -> List[str]:
    lines = []
    for label, attn in explanation.words.items():
        rounded = round_weights([w for _, _, w in attn.entries])
        for (word_index, word, _), weight in zip(attn.entries, rounded):
            record = {"label_code": label_codes[label], "word_index": word_index, "word": word, "weight": weight}
            lines.append(json.dumps(record))
    return lines


def render_report(
    explanation: Explanation,
    label_codes: Sequence[str],
    path: str,
    descriptions: Optional[Mapping[str, str]] = None,
) -> Tuple[str, str]:
    """Write the HTML heatmap and its weights sidecar; returns both paths."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_html(explanation, label_codes, descriptions))
    side = sidecar_path(path)
    with open(side, "w", encoding="utf-8") as f:
        for line in sidecar_lines(explanation, label_codes):
            f.write(line + "\n")
    logger.info("Wrote explanation for %s (%d labels) to %s", explanation.doc.id, len(explanation.words), path)
    return path, side


def read_sidecar(path: str) -> Dict[str, List[dict]]:
    """label_code -> rows in file order."""
    out: Dict[str, List[dict]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                out.setdefault(row["label_code"], []).append(row)
    return out
