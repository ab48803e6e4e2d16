"""
Seeded synthetic multi-label corpora with planted keyword phrases.

Every label owns a few 2-3 word phrases built from words nobody else uses.
A document's gold labels are exactly the labels whose phrases were planted in
it (before optional label noise), so a keyword matcher recovers them
perfectly. Text is laid out in clinical-style sections, one per line, so
section reordering and meaningful chunking have something to act on.
"""
import json
import logging
import os
import string
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set

import numpy as np

from hilat.config import CorpusSpec
from hilat.errors import CorpusSpecError
from hilat.textprep import STOPWORDS

logger = logging.getLogger(__name__)

ALPHABET = np.array(list(string.ascii_lowercase))

SECTION_HEADERS = [
    "admission date",
    "chief complaint",
    "history of present illness",
    "past medical history",
    "physical exam",
    "pertinent results",
    "brief hospital course",
    "discharge medications",
    "discharge diagnosis",
    "discharge condition",
    "discharge instructions",
]
DIAGNOSIS_HEADER = "discharge diagnosis"

TRAIN_FILE = "train.jsonl"
VAL_FILE = "val.jsonl"
TEST_FILE = "test.jsonl"
LABELS_FILE = "labels.txt"
DESCRIPTIONS_FILE = "label_descriptions.txt"
KEYWORDS_FILE = "keywords.json"


@dataclass
class GeneratedCorpus:
    out_dir: str
    label_codes: List[str]
    keywords: Dict[str, List[str]]
    split_sizes: Dict[str, int] = field(default_factory=dict)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


def label_code(index: int) -> str:
    return f"C{index:03d}"


def rand_word(rng: np.random.Generator, low: int, high: int) -> str:
    return "".join(rng.choice(ALPHABET, size=int(rng.integers(low, high + 1))))


def _fresh_words(rng: np.random.Generator, n: int, taken: Set[str], low: int, high: int) -> List[str]:
    words = []
    while len(words) < n:
        word = rand_word(rng, low, high)
        if word in taken or word in STOPWORDS:
            continue
        taken.add(word)
        words.append(word)
    return words


def make_keywords(spec: CorpusSpec, rng: np.random.Generator, taken: Set[str]) -> Dict[str, List[str]]:
    keywords = {}
    for j in range(spec.n_labels):
        phrases = []
        for _ in range(spec.phrases_per_label):
            phrases.append(" ".join(_fresh_words(rng, int(rng.integers(2, 4)), taken, 6, 9)))
        keywords[label_code(j)] = phrases
    return keywords


def check_keywords(keywords: Dict[str, List[str]], label_codes: Sequence[str]) -> None:
    """Every label needs a phrase; no word may belong to two labels."""
    missing = [code for code in label_codes if not keywords.get(code)]
    if missing:
        raise CorpusSpecError(f"labels without planted phrases: {', '.join(missing)}")
    unknown = sorted(set(keywords) - set(label_codes))
    if unknown:
        raise CorpusSpecError(f"keywords for unknown labels: {', '.join(unknown)}")
    owner: Dict[str, str] = {}
    for code in label_codes:
        for phrase in keywords[code]:
            words = phrase.split()
            if not words:
                raise CorpusSpecError(f"empty phrase for {code}")
            for word in words:
                if not word.isalpha() or word != word.lower():
                    raise CorpusSpecError(f"phrase word {word!r} for {code} must be lowercase letters")
                if owner.setdefault(word, code) != code:
                    raise CorpusSpecError(f"phrase word {word!r} is shared by {owner[word]} and {code}")


def _label_count(spec: CorpusSpec, rng: np.random.Generator) -> int:
    cap = spec.n_labels if spec.labels_max is None else min(spec.labels_max, spec.n_labels)
    extra = rng.poisson(max(spec.labels_mean - spec.labels_min, 0.0))
    return int(np.clip(spec.labels_min + extra, spec.labels_min, cap))


def _document(
    spec: CorpusSpec,
    rng: np.random.Generator,
    background: List[str],
    weights: np.ndarray,
    keywords: Dict[str, List[str]],
    label_codes: List[str],
) -> tuple:
    n_words = max(20, int(rng.poisson(spec.words_mean)))
    headers = list(SECTION_HEADERS)
    shares = rng.dirichlet(np.ones(len(headers)))
    counts = np.maximum(1, np.round(shares * n_words).astype(int))
    sections = [list(rng.choice(background, size=c, p=weights)) for c in counts]
    diagnosis = headers.index(DIAGNOSIS_HEADER)

    chosen = sorted(rng.choice(len(label_codes), size=_label_count(spec, rng), replace=False).tolist())
    for j in chosen:
        phrases = keywords[label_codes[j]]
        phrase = phrases[int(rng.integers(len(phrases)))]
        target = diagnosis if rng.random() < spec.diagnosis_fraction else int(rng.integers(len(headers)))
        segments = sections[target]
        segments.insert(int(rng.integers(len(segments) + 1)), phrase)

    gold = {label_codes[j] for j in chosen}
    if spec.noise_rate > 0:
        for code in label_codes:
            if rng.random() < spec.noise_rate:
                gold ^= {code}

    lines = [f"{header}: {' '.join(body)}" for header, body in zip(headers, sections)]
    return "\n".join(lines) + "\n", sorted(gold)


def split_sizes(n_docs: int, split: Sequence[float]) -> Dict[str, int]:
    n_train = int(round(n_docs * split[0]))
    n_val = int(round(n_docs * split[1]))
    n_val = min(n_val, n_docs - n_train)
    return {"train": n_train, "val": n_val, "test": n_docs - n_train - n_val}


def _write_jsonl(path: str, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def generate(spec: CorpusSpec, out_dir: str) -> GeneratedCorpus:
    """Write train/val/test JSON lines, the label vocabulary, descriptions and the keyword map."""
    rng = np.random.default_rng(spec.seed)
    label_codes = [label_code(j) for j in range(spec.n_labels)]
    taken: Set[str] = set(SECTION_HEADERS) | {w for h in SECTION_HEADERS for w in h.split()}

    if spec.keywords is not None:
        keywords = {code: list(phrases) for code, phrases in spec.keywords.items()}
        check_keywords(keywords, label_codes)
        taken |= {w for phrases in keywords.values() for p in phrases for w in p.split()}
    else:
        keywords = make_keywords(spec, rng, taken)
        check_keywords(keywords, label_codes)

    background = _fresh_words(rng, spec.background_vocab, taken, 3, 8)
    ranks = np.arange(1, len(background) + 1, dtype=np.float64)
    weights = (1.0 / ranks) / np.sum(1.0 / ranks)

    docs = []
    for i in range(spec.n_docs):
        text, gold = _document(spec, rng, background, weights, keywords, label_codes)
        docs.append({"id": f"doc{i:05d}", "text": text, "labels": gold})

    sizes = split_sizes(spec.n_docs, spec.split)
    os.makedirs(out_dir, exist_ok=True)
    n_train, n_val = sizes["train"], sizes["val"]
    _write_jsonl(os.path.join(out_dir, TRAIN_FILE), docs[:n_train])
    _write_jsonl(os.path.join(out_dir, VAL_FILE), docs[n_train : n_train + n_val])
    _write_jsonl(os.path.join(out_dir, TEST_FILE), docs[n_train + n_val :])
    with open(os.path.join(out_dir, LABELS_FILE), "w") as f:
        f.write("".join(code + "\n" for code in label_codes))
    with open(os.path.join(out_dir, DESCRIPTIONS_FILE), "w") as f:
        f.write("".join(f"{code}\t{' '.join(keywords[code])}\n" for code in label_codes))
    with open(os.path.join(out_dir, KEYWORDS_FILE), "w") as f:
        f.write(json.dumps(keywords, indent=2, sort_keys=True) + "\n")

    logger.info("Generated %d documents with %d labels in %s (%s)", spec.n_docs, spec.n_labels, out_dir, sizes)
    return GeneratedCorpus(out_dir=out_dir, label_codes=label_codes, keywords=keywords, split_sizes=sizes)


def keyword_match(text: str, keywords: Dict[str, List[str]]) -> List[str]:
    """Labels whose phrase occurs as a whole-word sequence in text."""
    padded = " " + " ".join(text.split()) + " "
    return sorted(code for code, phrases in keywords.items() if any(f" {p} " in padded for p in phrases))
