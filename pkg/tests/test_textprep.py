"""
Tests for cleaning, section reordering, vocabulary building, chunking and loading.
"""
import json

import numpy as np
import pytest

from hilat.config import PrepConfig
from hilat.errors import ConfigError, DatasetFormatError, LabelValidationError
from hilat.models import CLS_ID, PAD_ID, SEP_ID, UNK_ID, Document
from hilat.textprep import (
    build_vocab,
    chunk_document,
    clean_text,
    encode_labels,
    join_subwords,
    load_dataset,
    load_label_descriptions,
    load_label_vocab,
    reorder_sections,
    split_sections,
    tokenize,
)

FUZZ_ALPHABET = list("abcXYZ019 \n\t[]*=-_:.")


def random_text(rng, length):
    return "".join(rng.choice(FUZZ_ALPHABET, size=length))


class TestCleanText:

    def test_basic(self):
        raw = "Patient [**2101-10-20**] SEEN ==== for 12 Chest-Pain"
        assert clean_text(raw) == "patient seen for chest-pain"

    def test_keep_nonalpha(self):
        assert clean_text("Dose 12 mg", keep_nonalpha=True) == "dose 12 mg"
        assert clean_text("Dose 12 mg") == "dose mg"

    def test_stopwords(self):
        assert clean_text("the pain in the chest", remove_stopwords=True) == "pain chest"

    def test_removal_exposes_new_match(self):
        # removing "--" joins "[*" and "*]" pieces into a de-id span
        assert clean_text("a [*--*x*--*] b") == "a b"

    def test_idempotent_fuzz(self):
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            s = random_text(rng, int(rng.integers(0, 40)))
            once = clean_text(s)
            assert clean_text(once) == once


class TestSections:
    TEXT = "admission date: x\nhistory: foo\ndischarge diagnosis: bar\n"

    def test_diagnosis_moves_first(self):
        out = reorder_sections(self.TEXT, ["discharge diagnosis"])
        assert out.startswith("discharge diagnosis: bar\n")
        assert sorted(out.splitlines()) == sorted(self.TEXT.splitlines())

    def test_idempotent(self):
        once = reorder_sections(self.TEXT, ["discharge diagnosis"])
        assert reorder_sections(once, ["discharge diagnosis"]) == once

    def test_no_headers_unchanged(self):
        assert reorder_sections("plain text only", ["discharge diagnosis"]) == "plain text only"

    def test_alias_header(self):
        out = reorder_sections("history: a\nDischarge Diagnoses: b", ["discharge diagnosis"])
        assert out.startswith("Discharge Diagnoses: b")

    def test_sub_labels_stay_in_section(self):
        text = "a: x\ndischarge diagnosis:\nprimary: flu\nsecondary: cough\n"
        out = reorder_sections(text, ["discharge diagnosis"])
        assert out == "discharge diagnosis:\nprimary: flu\nsecondary: cough\na: x\n"

    def test_only_known_headers_split(self):
        preamble, sections = split_sections("intro: a\nallergies: none\nprimary: flu\ncustom part: b\n", ["custom part"])
        assert preamble == "intro: a\n"
        assert [name for name, _ in sections] == ["allergies", "custom part"]
        assert sections[0][1] == "allergies: none\nprimary: flu\n"


class TestVocabulary:

    def test_frequency_then_lexicographic(self):
        vocab = build_vocab(["b a a", "c b a", "y x"])
        assert vocab.content_tokens() == ["a", "b", "c", "x", "y"]
        assert vocab.encode("a") == 4
        assert vocab.encode("unseen") == UNK_ID

    def test_min_freq(self):
        vocab = build_vocab(["a a b"], min_freq=2)
        assert vocab.content_tokens() == ["a"]

    def test_round_trip_dict(self):
        vocab = build_vocab(["a b c"])
        assert type(vocab).from_dict(vocab.to_dict()) == vocab

    def test_subword_split(self):
        tokens = tokenize(["ab", "abcdefgh"], subword_threshold=4)
        assert tokens == [("ab", 0), ("abcd", 1), ("##efgh", 1)]
        assert join_subwords([t for t, _ in tokens[1:]]) == "abcdefgh"


class TestChunking:

    def make_doc(self, text, labels=("A",)):
        return Document(id="d1", text=text, labels=frozenset(labels))

    def test_layout(self):
        doc = self.make_doc("alpha beta gamma")
        vocab = build_vocab(["alpha beta gamma"])
        cd = chunk_document(doc, vocab, ["A", "B"], n_chunks=3, content_len=5)
        assert len(cd.chunks) == 3
        first = cd.chunks[0]
        assert first.slots == 7
        assert first.token_ids[0] == CLS_ID and first.token_ids[-1] == SEP_ID
        assert first.n_real_content == 3
        np.testing.assert_array_equal(first.pad_mask, [True, True, True, True, False, False, True])
        assert np.all(cd.chunks[2].token_ids[1:-1] == PAD_ID)
        np.testing.assert_array_equal(cd.labels, [1.0, 0.0])

    def test_unknown_label(self):
        with pytest.raises(LabelValidationError):
            chunk_document(self.make_doc("x", labels=("Z",)), build_vocab(["x"]), ["A"])

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            chunk_document(self.make_doc("x"), build_vocab(["x"]), ["A"], strategy="random")

    def test_round_trip_fuzz(self):
        rng = np.random.default_rng(42)
        pool = ["w%s" % c for c in "abcdefghij"]
        vocab = build_vocab([" ".join(pool)])
        prep = PrepConfig(raw_order=True)
        for _ in range(1000):
            n_words = int(rng.integers(0, 40))
            text = " ".join(rng.choice(pool, size=n_words))
            doc = self.make_doc(text)
            n_chunks, content_len = int(rng.integers(1, 4)), int(rng.integers(1, 9))
            cd = chunk_document(doc, vocab, ["A"], n_chunks, content_len, prep=prep)

            stream = [vocab.encode(w) for w in clean_text(text).split()]
            joined = []
            for chunk in cd.chunks:
                assert chunk.slots == content_len + 2
                joined.extend(chunk.token_ids[1 : 1 + chunk.n_real_content].tolist())
            assert joined == stream[: n_chunks * content_len]

    def test_word_spans_follow_subwords(self):
        doc = self.make_doc("ab abcdefgh cd")
        prep = PrepConfig(raw_order=True, subword_threshold=4)
        vocab = build_vocab(["ab abcdefgh cd"], subword_threshold=4)
        cd = chunk_document(doc, vocab, ["A"], n_chunks=1, content_len=6, prep=prep)
        assert cd.chunks[0].word_spans == [(0, 1, 2), (1, 2, 4), (2, 4, 5)]
        assert cd.words == ["ab", "abcdefgh", "cd"]

    def test_meaningful_groups(self):
        text = "intro: delta\ndischarge diagnosis: alpha\nprimary: beta\nsocial history: gamma\n"
        doc = self.make_doc(text)
        prep = PrepConfig(strategy="meaningful")
        vocab = build_vocab([clean_text(text)])
        cd = chunk_document(doc, vocab, ["A"], n_chunks=10, content_len=8, prep=prep)

        def content(c):
            chunk = cd.chunks[c]
            return [vocab.decode(t) for t in chunk.token_ids[1 : 1 + chunk.n_real_content]]

        assert "alpha" in content(0) and "beta" in content(0)
        assert "gamma" in content(3)
        assert "delta" in content(9)
        assert all(content(c) == [] for c in (1, 2, 4, 5, 6, 7, 8))

    def test_meaningful_other_clamped(self):
        text = "odd header: delta\n"
        vocab = build_vocab([clean_text(text)])
        cd = chunk_document(self.make_doc(text), vocab, ["A"], n_chunks=2, content_len=4,
                            prep=PrepConfig(strategy="meaningful"))
        assert cd.chunks[1].n_real_content == 3
        assert cd.chunks[0].n_real_content == 0


class TestLoading:

    def write(self, tmp_path, name, lines):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    def test_load_dataset(self, tmp_path):
        path = self.write(tmp_path, "d.jsonl", [
            json.dumps({"id": "a", "text": "hello", "labels": ["X"]}),
            "",
            json.dumps({"id": "b", "text": "bye", "labels": []}),
        ])
        docs = load_dataset(path, ["X"])
        assert [d.id for d in docs] == ["a", "b"]
        assert docs[0].labels == frozenset({"X"})

    def test_bad_json_reports_line(self, tmp_path):
        path = self.write(tmp_path, "d.jsonl", [json.dumps({"id": "a", "text": "t", "labels": []}), "{nope"])
        with pytest.raises(DatasetFormatError) as exc:
            load_dataset(path)
        assert exc.value.line == 2
        assert exc.value.detail.startswith("line 2:")

    def test_missing_field(self, tmp_path):
        path = self.write(tmp_path, "d.jsonl", [json.dumps({"id": "a", "labels": []})])
        with pytest.raises(DatasetFormatError, match="text"):
            load_dataset(path)

    def test_duplicate_id(self, tmp_path):
        rec = json.dumps({"id": "a", "text": "t", "labels": []})
        with pytest.raises(DatasetFormatError, match="duplicate"):
            load_dataset(self.write(tmp_path, "d.jsonl", [rec, rec]))

    def test_unknown_label(self, tmp_path):
        path = self.write(tmp_path, "d.jsonl", [json.dumps({"id": "a", "text": "t", "labels": ["Q"]})])
        with pytest.raises(LabelValidationError):
            load_dataset(path, ["X"])

    def test_label_vocab(self, tmp_path):
        assert load_label_vocab(self.write(tmp_path, "l.txt", ["X", "Y"])) == ["X", "Y"]
        with pytest.raises(DatasetFormatError):
            load_label_vocab(self.write(tmp_path, "dup.txt", ["X", "X"]))

    def test_descriptions(self, tmp_path):
        path = self.write(tmp_path, "desc.txt", ["X\tfirst thing", "Y\tsecond"])
        assert load_label_descriptions(path) == {"X": "first thing", "Y": "second"}

    def test_encode_labels(self):
        np.testing.assert_array_equal(encode_labels(["B"], ["A", "B"]), [0.0, 1.0])
