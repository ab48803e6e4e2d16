import logging
import os
from io import BytesIO
from typing import Mapping, Optional, Sequence

from hilat.explain import HEAT_RGB, Explanation, top_words
from hilat.metrics import format_report
from hilat.models import MetricsReport

logger = logging.getLogger(__name__)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _blend(opacity: float) -> str:
    """Heat colour over white as #rrggbb (reportlab markup has no alpha)."""
    channels = [round(255 - opacity * (255 - c)) for c in HEAT_RGB]
    return "#%02x%02x%02x" % tuple(channels)


def explanation_text(
    explanation: Explanation,
    label_codes: Sequence[str],
    descriptions: Optional[Mapping[str, str]] = None,
    k: int = 10,
) -> str:
    """Plain-text rendering: top-k words per explained label."""
    probs = explanation.prediction.probs
    content = f"# Document {explanation.doc.id}\n\n"
    if not explanation.words:
        content += "No label reached the decision threshold.\n"
    for label, attn in explanation.words.items():
        code = label_codes[label]
        content += f"## {code} (p = {probs[label]:.4f})"
        if descriptions and descriptions.get(code):
            content += f" {descriptions[code]}"
        content += "\n"
        for word_index, word, weight in top_words(attn, k):
            content += f"  {weight:.6f}  {word} (word {word_index})\n"
        content += "\n"
    return content


def generate_pdf_content(
    explanation: Explanation,
    label_codes: Sequence[str],
    descriptions: Optional[Mapping[str, str]] = None,
    report: Optional[MetricsReport] = None,
) -> bytes:
    """Heatmap PDF of one explained document, optionally followed by a metrics table."""
    try:
        from reportlab.lib.colors import HexColor
        from reportlab.lib.pagesizes import letter
        from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
        from reportlab.platypus import Paragraph, Preformatted, SimpleDocTemplate, Spacer
    except ImportError:
        # Fallback if reportlab not installed - plain text
        content = explanation_text(explanation, label_codes, descriptions)
        if report is not None:
            content += "\n" + format_report(report)
        return content.encode("utf-8")

    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=letter, topMargin=50, bottomMargin=50)

    styles = getSampleStyleSheet()
    heading_style = styles["Heading2"]
    body_style = ParagraphStyle(
        "Heatmap",
        parent=styles["Normal"],
        fontSize=10,
        leading=15,
        textColor=HexColor("#333333"),
    )
    meta_style = ParagraphStyle(
        "Meta",
        parent=styles["Normal"],
        fontSize=9,
        textColor=HexColor("#666666"),
    )

    story = [Paragraph(_escape(f"Document {explanation.doc.id}"), styles["Title"]), Spacer(1, 20)]
    if not explanation.words:
        story.append(Paragraph("No label reached the decision threshold.", meta_style))

    probs = explanation.prediction.probs
    words = explanation.doc.words
    for label, attn in explanation.words.items():
        code = label_codes[label]
        story.append(Paragraph(_escape(f"{code} (p = {probs[label]:.4f})"), heading_style))
        if descriptions and descriptions.get(code):
            story.append(Paragraph(_escape(descriptions[code]), meta_style))
        peak = max(w for _, _, w in attn.entries)
        weight_of = {index: w for index, _, w in attn.entries}
        spans = []
        for index, word in enumerate(words):
            opacity = weight_of.get(index, 0.0) / peak if peak > 0 else 0.0
            spans.append(f'<span backColor="{_blend(opacity)}">{_escape(word)}</span>')
        story.append(Paragraph(" ".join(spans), body_style))
        story.append(Spacer(1, 12))

    if report is not None:
        story.append(Paragraph("Metrics", heading_style))
        story.append(Preformatted(format_report(report, per_label=False), styles["Code"]))

    doc.build(story)
    return buffer.getvalue()


def write_pdf(
    explanation: Explanation,
    label_codes: Sequence[str],
    path: str,
    descriptions: Optional[Mapping[str, str]] = None,
    report: Optional[MetricsReport] = None,
) -> str:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(generate_pdf_content(explanation, label_codes, descriptions, report))
    logger.info("Wrote %s", path)
    return path
