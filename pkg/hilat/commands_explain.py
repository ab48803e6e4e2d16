import argparse
import logging
import os

from hilat.explain import explain_document, render_report, top_words
from hilat.export import write_pdf
from hilat.runs import default_sibling, load_for_model, load_model
from hilat.synthgen import DESCRIPTIONS_FILE
from hilat.textprep import load_label_descriptions

logger = logging.getLogger(__name__)


def cmd_explain(args: argparse.Namespace) -> int:
    model = load_model(args.checkpoint, args.labels)
    data = load_for_model(model, args.data)
    descriptions = None
    path = args.descriptions or (default_sibling(args.labels, DESCRIPTIONS_FILE) if args.labels else None)
    if path:
        descriptions = load_label_descriptions(path)
    out_dir = args.out_dir or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "explain")

    # resolve every id first so an unknown one fails before anything is written
    docs = [data.by_id(doc_id) for doc_id in args.doc_id]
    for doc in docs:
        explanation = explain_document(model, doc, top_k=args.top_k)
        if not explanation.words:
            print(f"{doc.id}: no label reached the threshold {model.config.threshold}; nothing to render")
            continue
        html_path, sidecar = render_report(explanation, model.label_codes, os.path.join(out_dir, f"{doc.id}.html"), descriptions)
        if args.pdf:
            write_pdf(explanation, model.label_codes, os.path.join(out_dir, f"{doc.id}.pdf"), descriptions)
        print(f"{doc.id}: {html_path}")
        for label, attn in explanation.words.items():
            words = ", ".join(f"{word} {weight:.3f}" for _, word, weight in top_words(attn, args.show))
            print(f"  {model.label_codes[label]} p={explanation.prediction.probs[label]:.3f}: {words}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("explain", help="attention heatmaps for documents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset holding the documents")
    p.add_argument("--doc-id", required=True, action="append", help="document id (repeatable)")
    p.add_argument("--labels", help="label vocabulary; must match the checkpoint's")
    p.add_argument("--descriptions", help="code<TAB>description file shown in headings")
    p.add_argument("--out-dir", help="default: <checkpoint dir>/explain")
    p.add_argument("--top-k", type=int, help="also render the k most probable labels")
    p.add_argument("--show", type=int, default=5, help="top words printed per label")
    p.add_argument("--pdf", action="store_true", help="also write a PDF heatmap")
    p.set_defaults(handler=cmd_explain)
