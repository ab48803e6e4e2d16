"""
End-to-end runs on the planted-keyword desk corpus. Slow: deselect with -m "not slow".
"""
import json
import os

import numpy as np
import pytest

from hilat.commands_train import prepare_and_train
from hilat.config import load_run_config
from hilat.explain import explain_document, top_words
from hilat.main import main
from hilat.metrics import evaluate
from hilat.synthgen import LABELS_FILE, TEST_FILE, TRAIN_FILE, VAL_FILE
from hilat.textprep import chunk_dataset, load_dataset

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def desk_run(desk_corpus, tmp_path_factory):
    config = load_run_config(profile="desk").train
    model, result = prepare_and_train(
        config,
        desk_corpus.path(TRAIN_FILE),
        desk_corpus.path(LABELS_FILE),
        str(tmp_path_factory.mktemp("desk_run")),
        val_path=desk_corpus.path(VAL_FILE),
        progress=False,
    )
    model.restore(result.selected)
    return model


def chunked_split(model, corpus, name):
    docs = load_dataset(corpus.path(name), model.label_codes)
    return chunk_dataset(docs, model.vocab, model.label_codes, model.config)


def micro_f1(model, chunked):
    probs = model.predict_matrix(chunked)
    gold = np.stack([doc.labels for doc in chunked])
    return evaluate(probs, gold, model.label_codes, threshold=model.config.threshold).f1_micro


def test_learns_planted_keywords(desk_run, desk_corpus):
    assert desk_run.config.total_steps <= 500
    assert micro_f1(desk_run, chunked_split(desk_run, desk_corpus, TRAIN_FILE)) >= 0.95
    assert micro_f1(desk_run, chunked_split(desk_run, desk_corpus, TEST_FILE)) >= 0.85


def test_attention_finds_planted_words(desk_run, desk_corpus):
    planted = {
        code: {word for phrase in phrases for word in phrase.split()}
        for code, phrases in desk_corpus.keywords.items()
    }
    hits = total = 0
    for doc in chunked_split(desk_run, desk_corpus, TEST_FILE):
        explanation = explain_document(desk_run, doc)
        for label, attn in explanation.words.items():
            if doc.labels[label] != 1.0:
                continue
            total += 1
            top = {word for _, word, _ in top_words(attn, 5)}
            hits += bool(top & planted[desk_run.label_codes[label]])
    assert total > 0
    assert hits / total >= 0.8


def test_ablation_harness(desk_corpus, tmp_path):
    run_dir = str(tmp_path)
    code = main(["--quiet", "ablate", "--train", desk_corpus.path(TRAIN_FILE), "--val", desk_corpus.path(VAL_FILE),
                 "--eval", desk_corpus.path(TEST_FILE), "--labels", desk_corpus.path(LABELS_FILE), "--run-dir", run_dir])
    assert code == 0
    with open(os.path.join(run_dir, "ablation.json")) as f:
        rows = {row["variant"]: row for row in json.load(f)}
    assert set(rows) == {"full"} | set("abcdefghij")
    for letter in "abcdefghij":
        assert os.path.exists(os.path.join(run_dir, letter, "metrics.json"))
    full = rows["full"]["values"]["F1 micro"]
    for letter in ("e", "h"):
        assert rows[letter]["values"]["F1 micro"] <= full + 0.02
