import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from hilat.attention import (
    HeadParams,
    chunk_attention,
    classify_all,
    document_repr_variant,
    init_head,
    multihead_token_attention,
    stack_label_chunks,
    token_attention,
)
from hilat.checkpoint import load_checkpoint, save_checkpoint
from hilat.config import TrainConfig, VariantConfig
from hilat.encoder import (
    EmbeddingEncoder,
    Encoder,
    EncoderParams,
    ExternalVectorEncoder,
    init_encoder_params,
    set_frozen,
)
from hilat.errors import CheckpointFormatError, ConfigError
from hilat.models import AttentionRecord, ChunkedDocument, EncoderOutput, Prediction
from hilat.tensor import Tensor, hstack, no_grad, reset_tape
from hilat.textprep import Vocabulary

logger = logging.getLogger(__name__)


def forward_encoded(
    outputs: Sequence[EncoderOutput],
    head: HeadParams,
    variant: VariantConfig,
    keep_record: bool = True,
) -> Tuple[Tensor, Optional[AttentionRecord]]:
    """Head forward pass over fixed encoder outputs; returns (1 x L probabilities, record)."""
    if variant.multihead:
        pairs = multihead_token_attention(outputs, head, variant.mask_pads)
    else:
        pairs = [token_attention(out, head, variant.mask_pads) for out in outputs]
    Cs = [C for C, _ in pairs]

    d_cols, o_rows = [], []
    for label in range(head.n_labels):
        M = stack_label_chunks(Cs, label)
        if variant.doc_repr == "attention":
            d, o = chunk_attention(M, head)
            o_rows.append(o.data[0])
        else:
            d = document_repr_variant(M, variant.doc_repr)
        d_cols.append(d)
    probs = classify_all(hstack(d_cols), head.beta, head.b)

    record = None
    if keep_record:
        if variant.doc_repr == "attention":
            o = np.stack(o_rows)
        elif variant.doc_repr == "mean_pool":
            o = np.full((head.n_labels, len(outputs)), 1.0 / len(outputs))
        else:
            o = None
        record = AttentionRecord(
            A=[A.data.copy() for _, A in pairs],
            C=[C.data.copy() for C in Cs],
            o=o,
            d=[d.data[:, 0].copy() for d in d_cols],
            pad_masks=[out.pad_mask for out in outputs],
        )
    return probs, record


def forward(
    doc: ChunkedDocument,
    encoder: Encoder,
    head: HeadParams,
    variant: VariantConfig,
    threshold: float = 0.5,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Prediction, AttentionRecord]:
    """Inference pass over one document; records nothing on the tape."""
    with no_grad():
        probs, record = forward_encoded(encoder.encode(doc, training, rng), head, variant)
    return Prediction(probs=probs.data[0].copy(), threshold=threshold), record


class HiLATClassifier:
    """Encoder + head + the variant and vocabulary needed to run them."""

    def __init__(
        self,
        encoder: Encoder,
        head: HeadParams,
        config: TrainConfig,
        vocab: Vocabulary,
        label_codes: Sequence[str],
    ):
        self.encoder = encoder
        self.head = head
        self.config = config
        self.vocab = vocab
        self.label_codes = list(label_codes)

    @property
    def variant(self) -> VariantConfig:
        return self.config.variant

    @property
    def n_labels(self) -> int:
        return len(self.label_codes)

    def parameters(self) -> Dict[str, Tensor]:
        params = dict(self.encoder.parameters())
        params.update(self.head.tensors())
        return params

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self.parameters().items() if t.requires_grad}

    def zero_grad(self) -> None:
        for tensor in self.parameters().values():
            tensor.zero_grad()

    def probabilities(
        self,
        doc: ChunkedDocument,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        keep_record: bool = False,
    ) -> Tuple[Tensor, Optional[AttentionRecord]]:
        outputs = self.encoder.encode(doc, training, rng)
        return forward_encoded(outputs, self.head, self.variant, keep_record)

    def forward(
        self,
        doc: ChunkedDocument,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Prediction, AttentionRecord]:
        return forward(doc, self.encoder, self.head, self.variant, self.config.threshold, training, rng)

    def predict_matrix(self, docs: Sequence[ChunkedDocument]) -> np.ndarray:
        """n_docs x L probabilities (inference mode)."""
        if not docs:
            return np.zeros((0, self.n_labels))
        with no_grad():
            rows = [self.probabilities(doc)[0].data[0] for doc in docs]
        return np.stack(rows)

    # ========================================================================
    # Persistence
    # ========================================================================

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def restore(self, values: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(values))
        if missing:
            raise CheckpointFormatError(f"missing tensors {', '.join(missing)}", field="tensors")
        for name, tensor in params.items():
            if values[name].shape != tensor.shape:
                raise CheckpointFormatError(
                    f"{name} has shape {values[name].shape}, model expects {tensor.shape}", field=name
                )
            tensor.data = np.array(values[name], dtype=np.float64)

    def save(self, path: str, extra_meta: Optional[dict] = None) -> dict:
        meta = {
            "encoder": getattr(self.encoder, "kind", "embedding"),
            "external_path": getattr(self.encoder, "path", None),
            "label_codes": self.label_codes,
            "train_config": self.config.model_dump(),
            "vocab": self.vocab.to_dict(),
        }
        if extra_meta:
            meta.update(extra_meta)
        return save_checkpoint(
            path,
            self.snapshot(),
            d_e=self.head.d_e,
            n_labels=self.n_labels,
            n_chunks=self.config.n_chunks,
            meta=meta,
        )

    @classmethod
    def load(cls, path: str, expected_label_codes: Optional[Sequence[str]] = None) -> "HiLATClassifier":
        values, manifest = load_checkpoint(path)
        meta = manifest.get("meta", {})
        try:
            config = TrainConfig.model_validate(meta["train_config"])
            vocab = Vocabulary.from_dict(meta["vocab"])
            label_codes = meta["label_codes"]
        except (KeyError, ValueError) as e:
            raise CheckpointFormatError(f"incomplete model metadata: {e}", field="meta")
        if manifest.get("d_e") != config.d_e:
            raise CheckpointFormatError(
                f"manifest d_e {manifest.get('d_e')} != config d_e {config.d_e}", field="d_e"
            )
        if expected_label_codes is not None and list(expected_label_codes) != list(label_codes):
            raise ConfigError("checkpoint label vocabulary differs from the dataset's")

        external = meta.get("external_path") if meta.get("encoder") == "external" else None
        model = build_classifier(config, vocab, label_codes, external_vectors=external, skip_label_init=True)
        model.restore(values)
        return model


def build_classifier(
    config: TrainConfig,
    vocab: Vocabulary,
    label_codes: Sequence[str],
    label_descriptions: Optional[Sequence[str]] = None,
    external_vectors: Optional[str] = None,
    skip_label_init: bool = False,
) -> HiLATClassifier:
    """Seeded initialization of encoder and head for `config`."""
    rng = np.random.default_rng(config.seed)
    if external_vectors is not None:
        encoder: Encoder = ExternalVectorEncoder(external_vectors, config.d_e, config.slots)
    else:
        params: EncoderParams = init_encoder_params(len(vocab), config.d_e, config.slots, config.mixing_layer, rng)
        set_frozen(params, config.variant.freeze)
        encoder = EmbeddingEncoder(params, dropout_p=config.dropout_p)

    variant = config.variant
    if skip_label_init and variant.init_scheme == "label_embedding":
        variant = variant.model_copy(update={"init_scheme": "random"})
    head = init_head(
        config.d_e,
        len(label_codes),
        config.n_chunks,
        variant,
        rng,
        label_descriptions=label_descriptions,
        encoder=encoder,
        vocab=vocab,
        content_len=config.content_len,
        prep=config.prep,
    )
    reset_tape()
    return HiLATClassifier(encoder, head, config, vocab, label_codes)
