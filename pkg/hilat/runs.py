"""
Run directories and the shared data plumbing behind the CLI commands.
"""
import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

from hilat import config
from hilat.classifier import HiLATClassifier
from hilat.errors import ConfigError, LookupFailedError
from hilat.models import ChunkedDocument, Document
from hilat.textprep import chunk_dataset, load_dataset, load_label_descriptions, load_label_vocab

logger = logging.getLogger(__name__)


def make_run_dir(run_dir: Optional[str], seed: int) -> str:
    """Use run_dir, or create <runs>/<timestamp>-seed<seed>."""
    if run_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = os.path.join(config.RUNS_DIR, f"{stamp}-seed{seed}")
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


def echo_config(data: dict, run_dir: Optional[str] = None) -> str:
    """Log the effective config as one JSON line and write it to <run_dir>/config.json."""
    line = json.dumps(data, sort_keys=True)
    logger.info("effective config %s", line)
    if run_dir:
        with open(os.path.join(run_dir, "config.json"), "w") as f:
            f.write(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return line


def default_sibling(path: str, name: str) -> Optional[str]:
    """<dir of path>/<name> if it exists."""
    candidate = os.path.join(os.path.dirname(os.path.abspath(path)), name)
    return candidate if os.path.exists(candidate) else None


def read_descriptions(path: Optional[str], label_codes: List[str]) -> Optional[List[str]]:
    if path is None:
        return None
    table = load_label_descriptions(path)
    missing = [code for code in label_codes if code not in table]
    if missing:
        raise ConfigError(f"no description for label(s) {', '.join(missing)} in {path}")
    return [table[code] for code in label_codes]


@dataclass
class EvalData:
    docs: List[Document]
    chunked: List[ChunkedDocument]

    def by_id(self, doc_id: str) -> ChunkedDocument:
        for doc in self.chunked:
            if doc.id == doc_id:
                return doc
        raise LookupFailedError(f"no document {doc_id!r} in dataset")


def load_for_model(model: HiLATClassifier, data_path: str) -> EvalData:
    """Load and chunk a dataset exactly as the model was trained to see it."""
    docs = load_dataset(data_path, model.label_codes)
    chunked = chunk_dataset(docs, model.vocab, model.label_codes, model.config)
    return EvalData(docs=docs, chunked=chunked)


def load_model(checkpoint: str, labels_path: Optional[str] = None) -> HiLATClassifier:
    """Rebuild a classifier; with labels_path, its label vocabulary must match the checkpoint's."""
    expected = load_label_vocab(labels_path) if labels_path else None
    model = HiLATClassifier.load(checkpoint, expected_label_codes=expected)
    logger.info("Loaded %s (%d labels, d_e=%d)", checkpoint, model.n_labels, model.config.d_e)
    return model


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, object]:
    """--set a.b=value pairs into a nested dict; values parse as JSON when they can."""
    out: Dict[str, object] = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key} conflicts with an earlier value")
        node[parts[-1]] = value
    return out
