import argparse
import json
import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np

from hilat.classifier import HiLATClassifier, build_classifier
from hilat.config import PROFILES, VARIANT_DESCRIPTIONS, VARIANTS, RunConfig, TrainConfig, apply_variant, deep_merge, load_run_config
from hilat.errors import ConfigError
from hilat.metrics import delta_rows, evaluate, format_delta_table, write_predictions, write_report
from hilat.models import MetricsReport
from hilat.runs import default_sibling, echo_config, make_run_dir, parse_overrides, read_descriptions
from hilat.synthgen import DESCRIPTIONS_FILE
from hilat.textprep import build_dataset_vocab, chunk_dataset, load_dataset, load_label_vocab
from hilat.training import TrainResult, train

logger = logging.getLogger(__name__)

# flag attribute -> TrainConfig field
TRAIN_FLAGS = {
    "seed": "seed",
    "total_steps": "total_steps",
    "warmup_steps": "warmup_steps",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "weight_decay": "weight_decay",
    "eval_every": "eval_every",
    "workers": "workers",
    "d_e": "d_e",
    "n_chunks": "n_chunks",
    "content_len": "content_len",
}


# ============================================================================
# Config assembly
# ============================================================================

def add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="training split (JSON lines)")
    p.add_argument("--val", help="validation split for best-checkpoint selection")
    p.add_argument("--labels", required=True, help="label vocabulary, one code per line")
    p.add_argument("--descriptions", help="code<TAB>description file (label embedding init)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. train.dropout_p=0")
    p.add_argument("--run-dir", help="output directory (default: <runs>/<timestamp>-seed<seed>)")
    p.add_argument("--external-vectors", help="precomputed encoder outputs instead of the trainable encoder")
    p.add_argument("--seed", type=int)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--d-e", type=int)
    p.add_argument("--n-chunks", type=int)
    p.add_argument("--content-len", type=int)


def build_run_config(args: argparse.Namespace, variant: Optional[str] = None) -> RunConfig:
    """profile < config file < variant < --set < individual flags."""
    flags = {key: getattr(args, attr) for attr, key in TRAIN_FLAGS.items() if getattr(args, attr, None) is not None}
    overrides = deep_merge(parse_overrides(getattr(args, "set", None)), {"train": flags})
    if "total_steps" in flags and "warmup_steps" not in flags:
        # Shrinking the run shrinks the warmup with it
        base_flags = {k: v for k, v in flags.items() if k != "total_steps"}
        base_overrides = deep_merge(parse_overrides(getattr(args, "set", None)), {"train": base_flags})
        base = load_run_config(args.config, args.profile, variant, base_overrides)
        overrides["train"]["warmup_steps"] = min(base.train.warmup_steps, flags["total_steps"])
    return load_run_config(args.config, args.profile, variant, overrides)


# ============================================================================
# Pipeline
# ============================================================================

def prepare_and_train(
    train_config: TrainConfig,
    train_path: str,
    labels_path: str,
    run_dir: str,
    val_path: Optional[str] = None,
    descriptions_path: Optional[str] = None,
    external_vectors: Optional[str] = None,
    progress: bool = True,
) -> Tuple[HiLATClassifier, TrainResult]:
    """textprep -> encoder -> head -> training loop; checkpoints land in run_dir."""
    label_codes = load_label_vocab(labels_path)
    train_docs = load_dataset(train_path, label_codes)
    if not train_docs:
        raise ConfigError(f"training set {train_path} is empty")
    val_docs = load_dataset(val_path, label_codes) if val_path else None

    vocab = build_dataset_vocab(train_docs, train_config)
    logger.info("Vocabulary: %d tokens", len(vocab))
    descriptions = None
    if train_config.variant.init_scheme == "label_embedding":
        path = descriptions_path or default_sibling(labels_path, DESCRIPTIONS_FILE)
        if path is None:
            raise ConfigError("label embedding initialization needs --descriptions")
        descriptions = read_descriptions(path, label_codes)

    model = build_classifier(train_config, vocab, label_codes, descriptions, external_vectors=external_vectors)
    train_chunked = chunk_dataset(train_docs, vocab, label_codes, train_config)
    val_chunked = chunk_dataset(val_docs, vocab, label_codes, train_config) if val_docs else None
    result = train(train_chunked, model, val_chunked, out_dir=run_dir, progress=progress)
    return model, result


def cmd_train(args: argparse.Namespace) -> int:
    run_config = build_run_config(args, args.variant)
    train_config = run_config.train
    run_dir = make_run_dir(args.run_dir, train_config.seed)
    echo_config(run_config.model_dump(), run_dir)
    print(json.dumps(train_config.model_dump(exclude={"prep", "variant"}), sort_keys=True))
    if args.dry_run:
        return 0

    _, result = prepare_and_train(
        train_config,
        args.train,
        args.labels,
        run_dir,
        val_path=args.val,
        descriptions_path=args.descriptions,
        external_vectors=args.external_vectors,
        progress=not args.quiet,
    )
    losses = result.losses()
    if losses:
        print(f"steps: {result.steps_run}  first loss: {losses[0]:.4f}  last loss: {losses[-1]:.4f}")
    if result.best_step is not None:
        print(f"best validation micro-F1 {result.best_score:.4f} at step {result.best_step}")
    print(f"checkpoint: {os.path.join(run_dir, 'model.ckpt')}")
    return 0


# ============================================================================
# Ablation
# ============================================================================

def parse_variants(spec: Optional[str]) -> List[str]:
    if not spec:
        return sorted(VARIANTS)
    letters = [s.strip() for s in spec.split(",") if s.strip()]
    unknown = [v for v in letters if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variant(s) {', '.join(unknown)} (expected a-j)")
    return letters


def cmd_ablate(args: argparse.Namespace) -> int:
    base = build_run_config(args).train
    run_dir = make_run_dir(args.run_dir, base.seed)
    echo_config({"base": base.model_dump(), "variants": parse_variants(args.variants)}, run_dir)
    eval_path = args.eval or args.val
    if eval_path is None:
        raise ConfigError("ablate needs --eval or --val to score the variants")

    reports: Dict[str, MetricsReport] = {}
    for name in ["full"] + parse_variants(args.variants):
        config = base if name == "full" else apply_variant(base, name)
        label = "full model" if name == "full" else f"({name}) {VARIANT_DESCRIPTIONS[name]}"
        logger.info("Ablation: %s", label)
        variant_dir = os.path.join(run_dir, name)
        os.makedirs(variant_dir, exist_ok=True)
        model, result = prepare_and_train(
            config,
            args.train,
            args.labels,
            variant_dir,
            val_path=args.val,
            descriptions_path=args.descriptions,
            external_vectors=args.external_vectors,
            progress=not args.quiet,
        )
        model.restore(result.selected)
        docs = load_dataset(eval_path, model.label_codes)
        chunked = chunk_dataset(docs, model.vocab, model.label_codes, config)
        probs = model.predict_matrix(chunked)
        gold = np.stack([doc.labels for doc in chunked])
        reports[name] = evaluate(probs, gold, model.label_codes, threshold=config.threshold)
        write_report(reports[name], variant_dir, percent=args.percent)
        write_predictions(os.path.join(variant_dir, "predictions.jsonl"), [d.id for d in chunked], probs, model.label_codes)
        print(f"{name:<5} micro-F1 {reports[name].f1_micro:.4f}  macro-F1 {reports[name].f1_macro:.4f}")

    rows = delta_rows(reports, baseline="full")
    table = format_delta_table(rows, percent=args.percent)
    with open(os.path.join(run_dir, "ablation.txt"), "w") as f:
        f.write(table)
    with open(os.path.join(run_dir, "ablation.json"), "w") as f:
        f.write(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(table, end="")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="train a model")
    add_train_flags(p)
    p.add_argument("--variant", choices=sorted(VARIANTS), help="ablation variant a-j")
    p.add_argument("--dry-run", action="store_true", help="print the effective config and exit")
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("ablate", help="train the full model and each ablation variant")
    add_train_flags(p)
    p.add_argument("--variants", help="comma-separated letters (default: a-j)")
    p.add_argument("--eval", help="split the variants are scored on (default: --val)")
    p.add_argument("--percent", action="store_true", help="percentages in the tables")
    p.set_defaults(handler=cmd_ablate)
