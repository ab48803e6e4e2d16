"""
Tests for the planted-keyword synthetic corpus generator.
"""
import json
import os

import pytest
from pydantic import ValidationError

from hilat.config import CORPUS_PROFILES, CorpusSpec
from hilat.errors import CorpusSpecError
from hilat.synthgen import (
    DESCRIPTIONS_FILE,
    KEYWORDS_FILE,
    LABELS_FILE,
    TEST_FILE,
    TRAIN_FILE,
    VAL_FILE,
    generate,
    keyword_match,
    split_sizes,
)

ALL_FILES = (TRAIN_FILE, VAL_FILE, TEST_FILE, LABELS_FILE, DESCRIPTIONS_FILE, KEYWORDS_FILE)


def read_docs(corpus, name):
    with open(corpus.path(name)) as f:
        return [json.loads(line) for line in f]


class TestSplits:

    def test_default_split(self, desk_corpus):
        sizes = [len(read_docs(desk_corpus, name)) for name in (TRAIN_FILE, VAL_FILE, TEST_FILE)]
        assert sizes == [140, 30, 30]
        assert desk_corpus.split_sizes == {"train": 140, "val": 30, "test": 30}

    def test_split_sizes_round(self):
        assert split_sizes(10, [0.7, 0.15, 0.15]) == {"train": 7, "val": 2, "test": 1}
        assert split_sizes(1, [0.7, 0.15, 0.15]) == {"train": 1, "val": 0, "test": 0}

    def test_ids_unique_and_ordered(self, desk_corpus):
        ids = [d["id"] for name in (TRAIN_FILE, VAL_FILE, TEST_FILE) for d in read_docs(desk_corpus, name)]
        assert ids == [f"doc{i:05d}" for i in range(200)]


class TestContent:

    def test_keyword_oracle_recovers_labels(self, desk_corpus):
        for name in (TRAIN_FILE, VAL_FILE, TEST_FILE):
            for doc in read_docs(desk_corpus, name):
                assert keyword_match(doc["text"], desk_corpus.keywords) == doc["labels"]

    def test_phrase_words_disjoint(self, desk_corpus):
        owner = {}
        for code, phrases in desk_corpus.keywords.items():
            for phrase in phrases:
                for word in phrase.split():
                    assert owner.setdefault(word, code) == code

    def test_sections_present(self, desk_corpus):
        for doc in read_docs(desk_corpus, TRAIN_FILE)[:20]:
            assert "\ndischarge diagnosis: " in doc["text"]
            assert doc["text"].startswith("admission date: ")

    def test_label_files(self, desk_corpus):
        with open(desk_corpus.path(LABELS_FILE)) as f:
            codes = f.read().splitlines()
        assert codes == [f"C{j:03d}" for j in range(10)] == desk_corpus.label_codes
        with open(desk_corpus.path(DESCRIPTIONS_FILE)) as f:
            rows = [line.rstrip("\n").split("\t") for line in f]
        assert [r[0] for r in rows] == codes
        with open(desk_corpus.path(KEYWORDS_FILE)) as f:
            assert json.load(f) == desk_corpus.keywords

    def test_label_count_bounds(self, desk_corpus):
        for doc in read_docs(desk_corpus, TRAIN_FILE):
            assert 2 <= len(doc["labels"]) <= 10

    def test_mimic_shape_profile(self, tmp_path):
        spec = CorpusSpec(**{**CORPUS_PROFILES["mimic_shape"], "n_docs": 40})
        corpus = generate(spec, str(tmp_path))
        docs = [d for name in (TRAIN_FILE, VAL_FILE, TEST_FILE) for d in read_docs(corpus, name)]
        assert len(docs) == 40
        mean_labels = sum(len(d["labels"]) for d in docs) / len(docs)
        mean_words = sum(len(d["text"].split()) for d in docs) / len(docs)
        assert 12 <= mean_labels <= 18
        assert 1900 <= mean_words <= 2200


class TestDeterminism:

    def test_same_seed_same_bytes(self, tmp_path):
        spec = CorpusSpec(n_docs=30, n_labels=5, words_mean=40, seed=11)
        a = generate(spec, str(tmp_path / "a"))
        b = generate(spec, str(tmp_path / "b"))
        for name in ALL_FILES:
            with open(a.path(name), "rb") as fa, open(b.path(name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_different_seed_differs(self, tmp_path):
        a = generate(CorpusSpec(n_docs=10, n_labels=3, words_mean=20, seed=1), str(tmp_path / "a"))
        b = generate(CorpusSpec(n_docs=10, n_labels=3, words_mean=20, seed=2), str(tmp_path / "b"))
        assert a.keywords != b.keywords


class TestSpecValidation:

    def test_label_noise_breaks_oracle(self, tmp_path):
        corpus = generate(CorpusSpec(n_docs=50, n_labels=5, words_mean=30, noise_rate=0.3, seed=0), str(tmp_path))
        docs = read_docs(corpus, TRAIN_FILE)
        assert any(keyword_match(d["text"], corpus.keywords) != d["labels"] for d in docs)

    def test_custom_keywords(self, tmp_path):
        keywords = {"C000": ["alpha beta"], "C001": ["gamma delta"]}
        corpus = generate(CorpusSpec(n_docs=10, n_labels=2, labels_min=1, words_mean=20, keywords=keywords), str(tmp_path))
        assert corpus.keywords == keywords
        for doc in read_docs(corpus, TRAIN_FILE):
            assert keyword_match(doc["text"], keywords) == doc["labels"]

    @pytest.mark.parametrize("keywords", [
        {"C000": ["alpha beta"], "C001": ["beta gamma"]},
        {"C000": ["alpha beta"]},
        {"C000": ["Alpha"], "C001": ["gamma"]},
        {"C000": ["alpha"], "C001": ["gamma"], "C009": ["delta"]},
    ])
    def test_bad_keywords(self, tmp_path, keywords):
        with pytest.raises(CorpusSpecError):
            generate(CorpusSpec(n_docs=5, n_labels=2, labels_min=1, words_mean=20, keywords=keywords), str(tmp_path))

    def test_split_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            CorpusSpec(split=[0.5, 0.3, 0.3])

    def test_labels_min_above_labels(self):
        with pytest.raises(ValidationError):
            CorpusSpec(n_labels=2, labels_min=3)

    def test_files_written(self, desk_corpus):
        for name in ALL_FILES:
            assert os.path.getsize(desk_corpus.path(name)) > 0
