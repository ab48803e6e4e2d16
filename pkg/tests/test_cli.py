"""
End-to-end tests of the command-line surface through main().
"""
import json
import os

import numpy as np
import pytest

from hilat.checkpoint import load_checkpoint
from hilat.classifier import build_classifier
from hilat.commands_train import build_run_config
from hilat.errors import EXIT_DATA, EXIT_FAILURE, EXIT_USAGE
from hilat.main import build_parser, main
from hilat.runs import load_model
from hilat.synthgen import LABELS_FILE, TEST_FILE, TRAIN_FILE, VAL_FILE
from hilat.training import BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG

SMALL_MODEL = ["--n-chunks", "2", "--content-len", "40", "--d-e", "8", "--batch-size", "4"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli_corpus"))
    code = main(["--quiet", "gen-corpus", "--out-dir", out, "--n-docs", "20", "--n-labels", "4",
                 "--words-mean", "30", "--seed", "5"])
    assert code == 0
    return out


def data(corpus_dir, name):
    return os.path.join(corpus_dir, name)


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    run_dir = str(tmp_path_factory.mktemp("cli_run"))
    code = main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--val", data(corpus_dir, VAL_FILE),
                 "--labels", data(corpus_dir, LABELS_FILE), "--run-dir", run_dir, "--total-steps", "6",
                 "--eval-every", "3", "--set", "train.dropout_p=0"] + SMALL_MODEL)
    assert code == 0
    return run_dir


class TestParser:

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for command in ("gen-corpus", "preprocess", "train", "ablate", "eval", "explain", "grad-check"):
            assert command in out

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "hilat" in capsys.readouterr().out

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_paper_profile(self):
        args = build_parser().parse_args(["train", "--train", "t", "--labels", "l", "--profile", "paper"])
        train = build_run_config(args, args.variant).train
        assert (train.learning_rate, train.batch_size, train.weight_decay) == (5e-5, 16, 0.1)
        assert (train.total_steps, train.warmup_steps) == (2500, 500)

    def test_paper_profile_echo(self, corpus_dir, tmp_path, capsys):
        code = main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--profile", "paper", "--run-dir", str(tmp_path), "--dry-run"])
        assert code == 0
        out = capsys.readouterr().out
        echoed = json.loads(next(line for line in out.splitlines() if line.startswith("{")))
        assert echoed["learning_rate"] == 5e-5
        assert echoed["batch_size"] == 16
        assert echoed["weight_decay"] == 0.1
        assert (echoed["total_steps"], echoed["warmup_steps"]) == (2500, 500)
        assert not os.path.exists(tmp_path / BEST_CHECKPOINT)
        with open(tmp_path / "config.json") as f:
            assert json.load(f)["train"]["learning_rate"] == 5e-5

    def test_short_run_clamps_warmup(self):
        args = build_parser().parse_args(["train", "--train", "t", "--labels", "l", "--profile", "paper",
                                          "--total-steps", "100"])
        train = build_run_config(args).train
        assert (train.total_steps, train.warmup_steps) == (100, 100)

    def test_explicit_warmup_beyond_total(self, corpus_dir, tmp_path, capsys):
        code = main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--run-dir", str(tmp_path), "--total-steps", "5", "--warmup-steps", "9"])
        assert code == EXIT_USAGE
        assert "hilat train: error:" in capsys.readouterr().err


class TestGenCorpus:

    def test_summary_and_determinism(self, corpus_dir, tmp_path, capsys):
        out = str(tmp_path / "again")
        assert main(["--quiet", "gen-corpus", "--out-dir", out, "--n-docs", "20", "--n-labels", "4",
                     "--words-mean", "30", "--seed", "5"]) == 0
        assert "wrote 20 documents (14/3/3) with 4 labels" in capsys.readouterr().out
        for name in (TRAIN_FILE, VAL_FILE, TEST_FILE, LABELS_FILE):
            with open(data(corpus_dir, name), "rb") as a, open(os.path.join(out, name), "rb") as b:
                assert a.read() == b.read()

    def test_invalid_spec(self, tmp_path, capsys):
        code = main(["--quiet", "gen-corpus", "--out-dir", str(tmp_path), "--n-docs", "0"])
        assert code == EXIT_USAGE
        assert "hilat gen-corpus: error: invalid corpus spec" in capsys.readouterr().err

    def test_set_override(self, tmp_path):
        out = str(tmp_path / "c")
        assert main(["--quiet", "gen-corpus", "--out-dir", out, "--n-labels", "3", "--n-docs", "10",
                     "--set", "words_mean=20", "--set", "labels_min=1"]) == 0
        with open(os.path.join(out, LABELS_FILE)) as f:
            assert len(f.read().splitlines()) == 3


class TestPreprocess:

    def test_outputs(self, corpus_dir, tmp_path, capsys):
        code = main(["--quiet", "preprocess", "--data", data(corpus_dir, TRAIN_FILE), "--labels",
                     data(corpus_dir, LABELS_FILE), "--out-dir", str(tmp_path), "--set", "train.n_chunks=2",
                     "--set", "train.content_len=16"])
        assert code == 0
        with open(tmp_path / "chunks.jsonl") as f:
            records = [json.loads(line) for line in f]
        assert len(records) == 14
        assert all(len(r["token_ids"]) == 2 and len(r["token_ids"][0]) == 18 for r in records)
        assert os.path.exists(tmp_path / "vocab.json")
        assert "14 documents" in capsys.readouterr().out


class TestTrain:

    def test_run_outputs(self, trained):
        for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG, "config.json"):
            assert os.path.exists(os.path.join(trained, name))
        with open(os.path.join(trained, "config.json")) as f:
            config = json.load(f)
        assert config["train"]["total_steps"] == 6
        assert config["train"]["warmup_steps"] == 6
        with open(os.path.join(trained, TRAIN_LOG)) as f:
            steps = [json.loads(line)["step"] for line in f]
        assert steps == [1, 2, 3, 4, 5, 6]

    def test_zero_steps_checkpoint_is_init(self, corpus_dir, tmp_path, capsys):
        code = main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--run-dir", str(tmp_path), "--total-steps", "0"] + SMALL_MODEL)
        assert code == 0
        out = capsys.readouterr().out
        echoed = json.loads(next(line for line in out.splitlines() if line.startswith("{")))
        assert echoed["total_steps"] == 0 and echoed["warmup_steps"] == 0
        assert f"checkpoint: {os.path.join(str(tmp_path), BEST_CHECKPOINT)}" in out

        model = load_model(os.path.join(str(tmp_path), BEST_CHECKPOINT))
        fresh = build_classifier(model.config, model.vocab, model.label_codes)
        saved, _ = load_checkpoint(os.path.join(str(tmp_path), BEST_CHECKPOINT))
        for name, value in fresh.snapshot().items():
            np.testing.assert_array_equal(saved[name], value.astype(np.float32).astype(np.float64))

    def test_variant_recorded(self, corpus_dir, tmp_path):
        code = main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--run-dir", str(tmp_path), "--total-steps", "1", "--variant", "h"] + SMALL_MODEL)
        assert code == 0
        with open(tmp_path / "config.json") as f:
            train = json.load(f)["train"]
        assert train["variant"]["doc_repr"] == "mean_pool"
        assert train["variant_letter"] == "h"

    def test_label_embedding_variant(self, corpus_dir, tmp_path):
        code = main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--run-dir", str(tmp_path), "--total-steps", "1", "--variant", "f"] + SMALL_MODEL)
        assert code == 0
        assert load_model(os.path.join(str(tmp_path), BEST_CHECKPOINT)).variant.init_scheme == "label_embedding"

    def test_unknown_label_in_data(self, corpus_dir, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps({"id": "x", "text": "some words", "labels": ["NOPE"]}) + "\n")
        code = main(["--quiet", "train", "--train", str(bad), "--labels", data(corpus_dir, LABELS_FILE),
                     "--run-dir", str(tmp_path / "run"), "--total-steps", "1"] + SMALL_MODEL)
        assert code == EXIT_DATA
        assert "NOPE" in capsys.readouterr().err


class TestEval:

    def test_checkpoint_report(self, corpus_dir, trained, tmp_path, capsys):
        out = str(tmp_path / "eval")
        code = main(["--quiet", "eval", "--checkpoint", os.path.join(trained, BEST_CHECKPOINT),
                     "--data", data(corpus_dir, TEST_FILE), "--labels", data(corpus_dir, LABELS_FILE), "--out-dir", out])
        assert code == 0
        with open(os.path.join(out, "metrics.json")) as f:
            report = json.load(f)
        for key in ("auc_macro", "auc_micro", "p_macro", "p_micro", "r_macro", "r_micro", "f1_macro", "f1_micro", "p_at"):
            assert key in report
        assert report["n_docs"] == 3
        assert os.path.exists(os.path.join(out, "predictions.jsonl"))
        assert "F1 micro" in capsys.readouterr().out

    def test_compare_identical_predictions(self, corpus_dir, trained, tmp_path):
        out = str(tmp_path / "eval")
        main(["--quiet", "eval", "--checkpoint", os.path.join(trained, BEST_CHECKPOINT),
              "--data", data(corpus_dir, VAL_FILE), "--out-dir", out])
        preds = os.path.join(out, "predictions.jsonl")
        code = main(["--quiet", "eval", "--predictions", preds, "--compare", preds, "--data", data(corpus_dir, VAL_FILE),
                     "--iterations", "100", "--name", "compare", "--percent"])
        assert code == 0
        with open(os.path.join(out, "compare.json")) as f:
            significance = json.load(f)["significance"]
        assert significance["p_value"] == 1.0
        assert significance["n_iter"] == 100

    def test_label_mismatch(self, corpus_dir, trained, tmp_path, capsys):
        labels = tmp_path / "labels.txt"
        labels.write_text("C000\nC001\n")
        code = main(["--quiet", "eval", "--checkpoint", os.path.join(trained, BEST_CHECKPOINT),
                     "--data", data(corpus_dir, TEST_FILE), "--labels", str(labels)])
        assert code == EXIT_USAGE
        assert "label vocabulary" in capsys.readouterr().err

    def test_needs_one_source(self, corpus_dir):
        assert main(["--quiet", "eval", "--data", data(corpus_dir, TEST_FILE)]) == EXIT_USAGE

    def test_corrupt_checkpoint(self, corpus_dir, trained, tmp_path):
        broken = tmp_path / "broken.ckpt"
        with open(os.path.join(trained, BEST_CHECKPOINT), "rb") as f:
            broken.write_bytes(f.read()[:-4])
        assert main(["--quiet", "eval", "--checkpoint", str(broken), "--data", data(corpus_dir, TEST_FILE)]) == EXIT_DATA


class TestExplain:

    def test_writes_heatmap(self, corpus_dir, trained, tmp_path, capsys):
        out = str(tmp_path / "explain")
        code = main(["--quiet", "explain", "--checkpoint", os.path.join(trained, BEST_CHECKPOINT),
                     "--data", data(corpus_dir, TEST_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--doc-id", "doc00019", "--top-k", "1", "--out-dir", out])
        assert code == 0
        assert os.path.exists(os.path.join(out, "doc00019.html"))
        assert os.path.exists(os.path.join(out, "doc00019.weights.jsonl"))
        assert "doc00019:" in capsys.readouterr().out

    def test_unknown_document(self, corpus_dir, trained, capsys):
        code = main(["--quiet", "explain", "--checkpoint", os.path.join(trained, BEST_CHECKPOINT),
                     "--data", data(corpus_dir, TEST_FILE), "--doc-id", "doc99999"])
        assert code == EXIT_DATA
        assert "doc99999" in capsys.readouterr().err

    def test_nothing_above_threshold(self, corpus_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        assert main(["--quiet", "train", "--train", data(corpus_dir, TRAIN_FILE), "--labels", data(corpus_dir, LABELS_FILE),
                     "--run-dir", run_dir, "--total-steps", "0", "--set", "train.threshold=0.99"] + SMALL_MODEL) == 0
        capsys.readouterr()
        code = main(["--quiet", "explain", "--checkpoint", os.path.join(run_dir, BEST_CHECKPOINT),
                     "--data", data(corpus_dir, TRAIN_FILE), "--doc-id", "doc00000", "--out-dir", str(tmp_path / "x")])
        assert code == 0
        assert "no label reached the threshold" in capsys.readouterr().out
        assert not os.path.exists(tmp_path / "x" / "doc00000.html")


class TestGradCheck:

    def test_passes(self, capsys):
        assert main(["--quiet", "grad-check"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("PASS")
        assert "200 sampled coordinates" in out

    def test_mutation_fails(self, capsys):
        assert main(["--quiet", "grad-check", "--mutate-tanh"]) == EXIT_FAILURE
        assert capsys.readouterr().out.startswith("FAIL")
