"""
Text preparation: cleaning, section reordering, vocabulary, chunking, loading.

Pipeline per document: reorder sections on the raw text (line structure is
needed to find headers), clean, split on whitespace into words, map words to
tokens, then cut the token stream into fixed-length chunks laid out as
[CLS] content... [PAD]... [SEP].
"""
import json
import logging
import re
from collections import Counter
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from hilat import config
from hilat.config import PrepConfig, TrainConfig
from hilat.errors import ConfigError, DatasetFormatError, LabelValidationError
from hilat.models import (
    CLS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    SEP_ID,
    UNK_ID,
    ChunkedDocument,
    Document,
    TokenChunk,
)

logger = logging.getLogger(__name__)

DEID_PATTERN = r"\[\*\*.*?\*\*\]"
SPECIAL_SEQUENCES = ("==", "--", "__")
SUBWORD_PREFIX = "##"

# Static English stop-word list
STOPWORDS = frozenset("""
a about above after again against all am an and any are aren't as at be because
been before being below between both but by can can't cannot could couldn't did
didn't do does doesn't doing don't down during each few for from further had
hadn't has hasn't have haven't having he he'd he'll he's her here here's hers
herself him himself his how how's i i'd i'll i'm i've if in into is isn't it
it's its itself let's me more most mustn't my myself no nor not of off on once
only or other ought our ours ourselves out over own same shan't she she'd
she'll she's should shouldn't so some such than that that's the their theirs
them themselves then there there's these they they'd they'll they're they've
this those through to too under until up very was wasn't we we'd we'll we're
we've were weren't what what's when when's where where's which while who who's
whom why why's with won't would wouldn't you you'd you'll you're you've your
yours yourself yourselves also just may might must shall will
""".split())

HEADER_RE = re.compile(r"^[ \t]*([A-Za-z][A-Za-z0-9 ()/&,'-]{0,60}?)[ \t]*:", re.MULTILINE)

HEADER_ALIASES = {
    "discharge condition": "discharge conditions",
    "discharge diagnoses": "discharge diagnosis",
}

# Lines like "primary: flu" inside a section are not section starts
KNOWN_HEADERS = frozenset([
    "admission date",
    "discharge date",
    "date of birth",
    "service",
    "allergies",
    "attending",
    "chief complaint",
    "major surgical or invasive procedure",
    "history of present illness",
    "past medical history",
    "social history",
    "family history",
    "physical exam",
    "pertinent results",
    "brief hospital course",
    "hospital course",
    "medications on admission",
    "discharge medications",
    "discharge disposition",
    "discharge diagnosis",
    "final diagnosis",
    "discharge conditions",
    "discharge instructions",
    "followup instructions",
])


# ============================================================================
# Cleaning
# ============================================================================

def _has_alpha(word: str) -> bool:
    return any(ch.isalpha() for ch in word)


def clean_text(
    raw: str,
    keep_nonalpha: bool = False,
    remove_stopwords: bool = False,
    deid_pattern: str = DEID_PATTERN,
) -> str:
    """Lowercase, strip de-identification spans and ==/--/__ runs, normalize whitespace."""
    deid = re.compile(deid_pattern, re.DOTALL)
    text = raw.lower()
    # Removing one kind of noise can expose another, so iterate to a fixed point
    while True:
        stripped = deid.sub(" ", text)
        for seq in SPECIAL_SEQUENCES:
            stripped = stripped.replace(seq, "")
        if stripped == text:
            break
        text = stripped

    words = text.split()
    if not keep_nonalpha:
        words = [w for w in words if _has_alpha(w)]
    if remove_stopwords:
        words = [w for w in words if w not in STOPWORDS]
    return " ".join(words)


# ============================================================================
# Sections
# ============================================================================

def canonical_header(name: str) -> str:
    key = " ".join(name.lower().split())
    return HEADER_ALIASES.get(key, key)


def split_sections(text: str, headers: Iterable[str] = ()) -> Tuple[str, List[Tuple[str, str]]]:
    """
    Split into (preamble, [(header, section_text), ...]); slices concatenate back to text.

    Only lines naming a known header, or one of `headers`, start a section.
    """
    known = KNOWN_HEADERS | {canonical_header(h) for h in headers}
    starts = [(m.start(), m.group(1)) for m in HEADER_RE.finditer(text) if canonical_header(m.group(1)) in known]
    if not starts:
        return text, []
    preamble = text[: starts[0][0]]
    sections = []
    for k, (start, name) in enumerate(starts):
        end = starts[k + 1][0] if k + 1 < len(starts) else len(text)
        sections.append((name, text[start:end]))
    return preamble, sections


def reorder_sections(text: str, front_sections: Sequence[str]) -> str:
    """Move the named sections to the front, in front_sections order."""
    front: List[str] = []
    for name in front_sections:
        key = canonical_header(name)
        if key not in front:
            front.append(key)

    preamble, sections = split_sections(text, front)
    moved: Dict[str, List[str]] = {key: [] for key in front}
    rest = [preamble]
    for name, body in sections:
        key = canonical_header(name)
        if key in moved:
            moved[key].append(body)
        else:
            rest.append(body)
    if not any(moved.values()):
        return text

    head = "".join(body if body.endswith("\n") else body + "\n" for key in front for body in moved[key])
    out = head + "".join(rest)
    if not text.endswith("\n") and out.endswith("\n"):
        out = out[:-1]
    return out


@lru_cache(maxsize=8)
def load_section_groups(path: Optional[str] = None) -> Tuple[Dict[str, int], int]:
    """Read a header -> chunk-index mapping; returns (groups, other_index)."""
    path = path or config.SECTION_GROUPS_PATH
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read section mapping {path}: {e}")
    groups = data.get("groups")
    if not isinstance(groups, dict):
        raise ConfigError(f"section mapping {path} has no 'groups' object")
    try:
        parsed = {canonical_header(k): int(v) for k, v in groups.items()}
        other = int(data.get("other", max(parsed.values(), default=0)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section mapping {path}: {e}")
    return parsed, other


# ============================================================================
# Words and tokens
# ============================================================================

def preprocess_words(doc: Document, prep: PrepConfig) -> List[str]:
    text = doc.raw_text
    if not prep.raw_order:
        text = reorder_sections(text, prep.front_sections)
    return clean_text(text, prep.keep_nonalpha, prep.remove_stopwords, prep.deid_pattern).split()


def tokenize(words: Sequence[str], subword_threshold: Optional[int] = None) -> List[Tuple[str, int]]:
    """Map words to (token, word_index); long words split in two when a threshold is set."""
    tokens = []
    for index, word in enumerate(words):
        if subword_threshold is not None and len(word) > subword_threshold:
            mid = len(word) // 2
            tokens.append((word[:mid], index))
            tokens.append((SUBWORD_PREFIX + word[mid:], index))
        else:
            tokens.append((word, index))
    return tokens


def join_subwords(tokens: Sequence[str]) -> str:
    return "".join(t[len(SUBWORD_PREFIX):] if t.startswith(SUBWORD_PREFIX) else t for t in tokens)


class Vocabulary:
    """Token <-> id map with fixed reserved ids PAD=0, UNK=1, CLS=2, SEP=3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: List[str] = list(RESERVED_TOKENS)
        self.token_to_id: Dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for token in tokens:
            if token in self.token_to_id:
                raise ConfigError(f"duplicate vocabulary token {token!r}")
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def content_tokens(self) -> List[str]:
        return self.id_to_token[len(RESERVED_TOKENS):]

    def to_dict(self) -> dict:
        return {"tokens": self.content_tokens()}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(data["tokens"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token


def build_vocab(
    corpus: Iterable[str],
    min_freq: int = 1,
    subword_threshold: Optional[int] = None,
) -> Vocabulary:
    """Ids after the reserved ones, ordered by descending frequency then lexicographically."""
    if min_freq < 1:
        raise ConfigError("min_freq must be at least 1")
    counts: Counter = Counter()
    for text in corpus:
        counts.update(token for token, _ in tokenize(text.split(), subword_threshold))
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    ordered = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(ordered)


# ============================================================================
# Chunking
# ============================================================================

def encode_labels(labels: Iterable[str], label_codes: Sequence[str]) -> np.ndarray:
    index = {code: i for i, code in enumerate(label_codes)}
    vec = np.zeros(len(label_codes), dtype=np.float64)
    for label in labels:
        if label not in index:
            raise LabelValidationError(f"unknown label {label!r}")
        vec[index[label]] = 1.0
    return vec


def build_chunk(tokens: Sequence[Tuple[int, int]], chunk_index: int, content_len: int) -> TokenChunk:
    """Lay out (token_id, word_index) pairs as CLS, content, PAD fill, SEP."""
    if len(tokens) > content_len:
        raise ConfigError(f"{len(tokens)} tokens do not fit {content_len} content slots")
    slots = content_len + 2
    token_ids = np.full(slots, PAD_ID, dtype=np.int64)
    pad_mask = np.zeros(slots, dtype=bool)
    token_ids[0], token_ids[-1] = CLS_ID, SEP_ID
    pad_mask[0] = pad_mask[-1] = True

    spans: List[Tuple[int, int, int]] = []
    for k, (token_id, word_index) in enumerate(tokens):
        slot = k + 1
        token_ids[slot] = token_id
        pad_mask[slot] = True
        if spans and spans[-1][0] == word_index and spans[-1][2] == slot:
            spans[-1] = (word_index, spans[-1][1], slot + 1)
        else:
            spans.append((word_index, slot, slot + 1))
    return TokenChunk(token_ids=token_ids, pad_mask=pad_mask, word_spans=spans, chunk_index=chunk_index)


def _meaningful_streams(doc: Document, prep: PrepConfig, n_chunks: int) -> Tuple[List[str], List[List[str]], List[List[int]]]:
    """Words and per-group (word, global word index) streams by section mapping."""
    groups, other = load_section_groups(prep.section_groups_path)
    preamble, sections = split_sections(doc.raw_text, groups)
    parts = [(None, preamble)] + sections

    words: List[str] = []
    group_words: List[List[str]] = [[] for _ in range(n_chunks)]
    group_index: List[List[int]] = [[] for _ in range(n_chunks)]
    for name, body in parts:
        group = other if name is None else groups.get(canonical_header(name), other)
        group = min(group, n_chunks - 1)
        for word in clean_text(body, prep.keep_nonalpha, prep.remove_stopwords, prep.deid_pattern).split():
            group_words[group].append(word)
            group_index[group].append(len(words))
            words.append(word)
    return words, group_words, group_index


def chunk_document(
    doc: Document,
    vocab: Vocabulary,
    label_codes: Sequence[str],
    n_chunks: int = 10,
    content_len: int = 510,
    strategy: Optional[str] = None,
    prep: Optional[PrepConfig] = None,
) -> ChunkedDocument:
    """Cut a document into exactly n_chunks TokenChunks of content_len + 2 slots."""
    prep = prep or PrepConfig()
    strategy = strategy or prep.strategy
    labels = encode_labels(doc.labels, label_codes)

    if strategy == "sequential":
        words = preprocess_words(doc, prep)
        stream = [(vocab.encode(t), w) for t, w in tokenize(words, prep.subword_threshold)]
        stream = stream[: n_chunks * content_len]
        chunks = [
            build_chunk(stream[c * content_len : (c + 1) * content_len], c, content_len)
            for c in range(n_chunks)
        ]
    elif strategy == "meaningful":
        words, group_words, group_index = _meaningful_streams(doc, prep, n_chunks)
        chunks = []
        for c in range(n_chunks):
            pieces = tokenize(group_words[c], prep.subword_threshold)
            stream = [(vocab.encode(t), group_index[c][local]) for t, local in pieces]
            chunks.append(build_chunk(stream[:content_len], c, content_len))
    else:
        raise ConfigError(f"unknown chunking strategy {strategy!r}")

    return ChunkedDocument(id=doc.id, chunks=chunks, labels=labels, words=words)


def build_dataset_vocab(docs: Sequence[Document], train_config: TrainConfig) -> Vocabulary:
    prep = train_config.prep
    corpus = (" ".join(preprocess_words(doc, prep)) for doc in docs)
    return build_vocab(corpus, train_config.min_freq, prep.subword_threshold)


def chunk_dataset(
    docs: Sequence[Document],
    vocab: Vocabulary,
    label_codes: Sequence[str],
    train_config: TrainConfig,
) -> List[ChunkedDocument]:
    return [
        chunk_document(doc, vocab, label_codes, train_config.n_chunks, train_config.content_len, prep=train_config.prep)
        for doc in docs
    ]


# ============================================================================
# Files
# ============================================================================

REQUIRED_FIELDS = ("id", "text", "labels")


def load_label_vocab(path: str) -> List[str]:
    """One label code per line; line number (from 0) is the label index."""
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DatasetFormatError(f"cannot read label vocabulary {path}: {e}")
    codes = []
    for lineno, line in enumerate(lines, start=1):
        code = line.strip()
        if not code:
            raise DatasetFormatError("blank label code", line=lineno)
        if code in codes:
            raise DatasetFormatError(f"duplicate label code {code!r}", line=lineno)
        codes.append(code)
    return codes


def load_label_descriptions(path: str) -> Dict[str, str]:
    """Tab-separated `code<TAB>description` lines."""
    descriptions = {}
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                code, sep, text = line.rstrip("\n").partition("\t")
                if not sep:
                    raise DatasetFormatError("expected code<TAB>description", line=lineno)
                descriptions[code.strip()] = text.strip()
    except OSError as e:
        raise DatasetFormatError(f"cannot read label descriptions {path}: {e}")
    return descriptions


def load_dataset(path: str, label_codes: Optional[Sequence[str]] = None) -> List[Document]:
    """Parse a JSON-lines dataset; validate labels when a label vocabulary is given."""
    known = set(label_codes) if label_codes is not None else None
    docs: List[Document] = []
    seen = set()
    try:
        f = open(path)
    except OSError as e:
        raise DatasetFormatError(f"cannot read dataset {path}: {e}")
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"invalid JSON: {e.msg}", line=lineno)
            if not isinstance(obj, dict):
                raise DatasetFormatError("expected a JSON object", line=lineno)
            for name in REQUIRED_FIELDS:
                if name not in obj:
                    raise DatasetFormatError(f"missing field {name!r}", line=lineno)
            try:
                doc = Document.model_validate(obj)
            except ValidationError as e:
                raise DatasetFormatError(f"invalid record: {e.errors()[0]['msg']}", line=lineno)
            if doc.id in seen:
                raise DatasetFormatError(f"duplicate document id {doc.id!r}", line=lineno)
            if known is not None:
                unknown = sorted(doc.labels - known)
                if unknown:
                    raise LabelValidationError(f"line {lineno}: unknown label(s) {', '.join(unknown)}")
            seen.add(doc.id)
            docs.append(doc)
    logger.info("Loaded %d documents from %s", len(docs), path)
    return docs
