import argparse
import logging
import os

import numpy as np

from hilat.errors import ConfigError, UsageError
from hilat.metrics import DEFAULT_KS, align_predictions, evaluate, format_report, read_predictions, write_predictions, write_report
from hilat.runs import load_for_model, load_model
from hilat.significance import DEFAULT_ITERATIONS, METRICS, approx_randomization_test
from hilat.textprep import encode_labels, load_dataset, load_label_vocab

logger = logging.getLogger(__name__)


def cmd_eval(args: argparse.Namespace) -> int:
    if bool(args.checkpoint) == bool(args.predictions):
        raise UsageError("give exactly one of --checkpoint or --predictions")

    if args.checkpoint:
        model = load_model(args.checkpoint, args.labels)
        data = load_for_model(model, args.data)
        doc_ids = [doc.id for doc in data.chunked]
        probs = model.predict_matrix(data.chunked)
        gold = np.stack([doc.labels for doc in data.chunked])
        label_codes = model.label_codes
        threshold = args.threshold if args.threshold is not None else model.config.threshold
        out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.checkpoint))
    else:
        doc_ids, probs, label_codes = read_predictions(args.predictions)
        if args.labels and load_label_vocab(args.labels) != label_codes:
            raise ConfigError("prediction file label vocabulary differs from --labels")
        docs = {doc.id: doc for doc in load_dataset(args.data, label_codes)}
        missing = [doc_id for doc_id in doc_ids if doc_id not in docs]
        if missing:
            raise ConfigError(f"{len(missing)} predicted documents are not in {args.data}")
        gold = np.stack([encode_labels(docs[doc_id].labels, label_codes) for doc_id in doc_ids])
        threshold = args.threshold if args.threshold is not None else 0.5
        out_dir = args.out_dir or os.path.dirname(os.path.abspath(args.predictions))

    report = evaluate(probs, gold, label_codes, threshold=threshold, ks=DEFAULT_KS)

    if args.compare:
        other_ids, other_probs, other_codes = read_predictions(args.compare)
        if other_codes != list(label_codes):
            raise ConfigError("compared predictions use a different label vocabulary")
        other = align_predictions(doc_ids, probs, other_ids, other_probs)
        report.significance = approx_randomization_test(
            probs, other, gold, metric=args.metric, n_iter=args.iterations, seed=args.seed, threshold=threshold
        )

    os.makedirs(out_dir, exist_ok=True)
    if args.checkpoint:
        write_predictions(os.path.join(out_dir, "predictions.jsonl"), doc_ids, probs, label_codes)
    json_path, _ = write_report(report, out_dir, name=args.name, percent=args.percent)
    print(format_report(report, percent=args.percent), end="")
    print(f"report: {json_path}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("eval", help="score a checkpoint or a prediction file")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--predictions", help="prediction file written by an earlier eval")
    p.add_argument("--data", required=True, help="dataset with gold labels (JSON lines)")
    p.add_argument("--labels", help="label vocabulary; must match the checkpoint's")
    p.add_argument("--threshold", type=float)
    p.add_argument("--percent", action="store_true", help="percentages, one decimal")
    p.add_argument("--out-dir", help="report directory (default: next to the checkpoint)")
    p.add_argument("--name", default="metrics", help="report file stem")
    p.add_argument("--compare", help="second prediction file for the randomization test")
    p.add_argument("--metric", choices=sorted(METRICS), default="micro_f1")
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_eval)
