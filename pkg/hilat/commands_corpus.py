import argparse
import json
import logging
import os

from pydantic import ValidationError

from hilat.config import CORPUS_PROFILES, CorpusSpec, deep_merge, load_run_config
from hilat.errors import ConfigError, CorpusSpecError
from hilat.runs import echo_config, make_run_dir, parse_overrides
from hilat.synthgen import generate
from hilat.textprep import build_dataset_vocab, chunk_dataset, load_dataset, load_label_vocab

logger = logging.getLogger(__name__)

CORPUS_FLAGS = {
    "n_docs": "n_docs",
    "n_labels": "n_labels",
    "noise_rate": "noise_rate",
    "words_mean": "words_mean",
    "labels_mean": "labels_mean",
    "seed": "seed",
}


def build_corpus_spec(args: argparse.Namespace) -> CorpusSpec:
    """corpus profile < config file "corpus" section < --keywords < flags."""
    data = dict(CORPUS_PROFILES[args.profile])
    if args.config:
        try:
            with open(args.config) as f:
                file_data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}")
        data = deep_merge(data, file_data.get("corpus", {}))
    if args.keywords:
        try:
            with open(args.keywords) as f:
                data["keywords"] = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read keywords {args.keywords}: {e}")
    data = deep_merge(data, parse_overrides(args.set))
    data.update({key: getattr(args, attr) for attr, key in CORPUS_FLAGS.items() if getattr(args, attr) is not None})
    try:
        return CorpusSpec.model_validate(data)
    except ValidationError as e:
        raise CorpusSpecError(f"invalid corpus spec: {e}")


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    spec = build_corpus_spec(args)
    out_dir = args.out_dir or os.path.join(make_run_dir(args.run_dir, spec.seed), "corpus")
    os.makedirs(out_dir, exist_ok=True)
    echo_config({"corpus": spec.model_dump()})
    corpus = generate(spec, out_dir)
    sizes = corpus.split_sizes
    print(f"wrote {spec.n_docs} documents ({sizes['train']}/{sizes['val']}/{sizes['test']}) "
          f"with {spec.n_labels} labels to {out_dir}")
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config, args.profile, args.variant, parse_overrides(args.set))
    train_config = run_config.train
    label_codes = load_label_vocab(args.labels)
    docs = load_dataset(args.data, label_codes)
    vocab = build_dataset_vocab(docs, train_config)
    chunked = chunk_dataset(docs, vocab, label_codes, train_config)

    out_dir = args.out_dir or make_run_dir(args.run_dir, train_config.seed)
    os.makedirs(out_dir, exist_ok=True)
    echo_config(run_config.model_dump(), out_dir)
    with open(os.path.join(out_dir, "vocab.json"), "w") as f:
        f.write(json.dumps(vocab.to_dict(), indent=2) + "\n")
    with open(os.path.join(out_dir, "chunks.jsonl"), "w") as f:
        for doc in chunked:
            record = {
                "id": doc.id,
                "n_words": len(doc.words),
                "real_tokens": [chunk.n_real_content for chunk in doc.chunks],
                "token_ids": [chunk.token_ids.tolist() for chunk in doc.chunks],
            }
            f.write(json.dumps(record) + "\n")
    truncated = sum(1 for doc in chunked if sum(c.n_real_content for c in doc.chunks) < len(doc.words))
    print(f"{len(chunked)} documents, vocabulary {len(vocab)}, {truncated} truncated; wrote {out_dir}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("gen-corpus", help="generate a synthetic planted-keyword corpus")
    p.add_argument("--profile", choices=sorted(CORPUS_PROFILES), default="desk")
    p.add_argument("--config", help="JSON config file (its \"corpus\" section is used)")
    p.add_argument("--keywords", help="JSON map label code -> phrases")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a corpus field")
    p.add_argument("--out-dir", help="default: <run dir>/corpus")
    p.add_argument("--run-dir")
    p.add_argument("--n-docs", type=int)
    p.add_argument("--n-labels", type=int)
    p.add_argument("--noise-rate", type=float)
    p.add_argument("--words-mean", type=int)
    p.add_argument("--labels-mean", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_gen_corpus)

    p = subparsers.add_parser("preprocess", help="build the vocabulary and chunk a dataset for inspection")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--profile", default="desk")
    p.add_argument("--variant", help="ablation variant a-j (preprocessing variants a-d matter here)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir")
    p.add_argument("--run-dir")
    p.set_defaults(handler=cmd_preprocess)
