import numpy as np
import pytest

from hilat.attention import init_head
from hilat.config import CorpusSpec, TrainConfig, VariantConfig
from hilat.models import EncoderOutput
from hilat.synthgen import LABELS_FILE, TRAIN_FILE, generate
from hilat.tensor import Tensor, reset_tape, set_check_finite
from hilat.textprep import build_dataset_vocab, chunk_dataset, load_dataset, load_label_vocab


@pytest.fixture(autouse=True)
def clean_tape():
    set_check_finite(True)
    reset_tape()
    yield
    reset_tape()


def random_outputs(rng, d_e, slots, n_chunks, pad_from=None):
    """Fixed encoder outputs; slots at index >= pad_from are PAD in the last chunk."""
    outputs = []
    for n in range(n_chunks):
        mask = np.ones(slots, dtype=bool)
        if pad_from is not None and n == n_chunks - 1:
            mask[pad_from:-1] = False
        outputs.append(EncoderOutput(H=Tensor(rng.normal(size=(d_e, slots))), pad_mask=mask))
    return outputs


def random_head(rng, d_e, n_labels, n_chunks, **variant):
    return init_head(d_e, n_labels, n_chunks, VariantConfig(**variant), rng)


@pytest.fixture
def tiny_config():
    return TrainConfig(
        d_e=8,
        n_chunks=2,
        content_len=30,
        batch_size=4,
        learning_rate=1e-2,
        weight_decay=0.0,
        total_steps=0,
        warmup_steps=0,
        dropout_p=0.0,
        eval_every=5,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("tiny_corpus"))
    spec = CorpusSpec(n_docs=40, n_labels=4, labels_min=1, labels_mean=1.5, words_mean=25, background_vocab=60, seed=3)
    return generate(spec, out)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("desk_corpus"))
    return generate(CorpusSpec(n_docs=200, n_labels=10, noise_rate=0.0, seed=0), out)


def prepare_corpus(corpus, config, files=(TRAIN_FILE,)):
    """(label codes, vocabulary, [chunked docs per file]) with the vocabulary built on the training split."""
    codes = load_label_vocab(corpus.path(LABELS_FILE))
    vocab = build_dataset_vocab(load_dataset(corpus.path(TRAIN_FILE), codes), config)
    chunked = [chunk_dataset(load_dataset(corpus.path(name), codes), vocab, codes, config) for name in files]
    return codes, vocab, chunked
