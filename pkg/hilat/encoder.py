"""
Chunk encoders producing H_n (d_e x slots), one column per token slot.

EmbeddingEncoder is the trainable desk-scale stand-in for a pretrained
transformer: token embedding plus learned position, optionally through one tanh
mixing layer. ExternalVectorEncoder serves precomputed matrices from a file so
outputs of a real transformer can be plugged in unchanged.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Mapping, Optional, Protocol, Tuple, Union

import numpy as np

from hilat.checkpoint import TensorIndex, save_checkpoint
from hilat.errors import CheckpointFormatError, ConfigError, ShapeError
from hilat.models import PAD_ID, ChunkedDocument, EncoderOutput, TokenChunk
from hilat.tensor import Tensor, dropout, matmul, tanh, take_rows, transpose

logger = logging.getLogger(__name__)

FreezeMode = Literal["none", "all", "all_but_last"]


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class EncoderParams:
    embedding: Tensor  # |V| x d_e
    positional: Tensor  # slots x d_e
    mix_W: Optional[Tensor] = None  # d_e x d_e
    mix_b: Optional[Tensor] = None  # d_e x 1

    @property
    def d_e(self) -> int:
        return self.embedding.shape[1]

    @property
    def slots(self) -> int:
        return self.positional.shape[0]

    @property
    def mixing(self) -> bool:
        return self.mix_W is not None

    def tensors(self) -> Dict[str, Tensor]:
        out = {"encoder.embedding": self.embedding, "encoder.positional": self.positional}
        if self.mixing:
            out["encoder.mix_W"] = self.mix_W
            out["encoder.mix_b"] = self.mix_b
        return out


def init_encoder_params(
    vocab_size: int,
    d_e: int,
    slots: int,
    mixing: bool,
    rng: np.random.Generator,
) -> EncoderParams:
    embedding = xavier_uniform(rng, vocab_size, d_e)
    embedding[PAD_ID] = 0.0
    params = EncoderParams(
        embedding=Tensor(embedding, requires_grad=True, name="encoder.embedding"),
        positional=Tensor(xavier_uniform(rng, slots, d_e), requires_grad=True, name="encoder.positional"),
    )
    if mixing:
        params.mix_W = Tensor(xavier_uniform(rng, d_e, d_e), requires_grad=True, name="encoder.mix_W")
        params.mix_b = Tensor(np.zeros((d_e, 1)), requires_grad=True, name="encoder.mix_b")
    return params


def set_frozen(params: EncoderParams, mode: FreezeMode) -> None:
    """Frozen tensors get requires_grad=False: no grads, no optimizer updates."""
    if mode not in ("none", "all", "all_but_last"):
        raise ConfigError(f"unknown freeze mode {mode!r}")
    trainable_tables = mode == "none"
    trainable_mix = mode in ("none", "all_but_last")
    params.embedding.requires_grad = trainable_tables
    params.positional.requires_grad = trainable_tables
    if params.mixing:
        params.mix_W.requires_grad = trainable_mix
        params.mix_b.requires_grad = trainable_mix
    elif mode == "all_but_last":
        logger.warning("Freeze mode all_but_last without a mixing layer leaves the encoder fully frozen")


def encode_chunk(
    chunk: TokenChunk,
    params: EncoderParams,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> EncoderOutput:
    """H[:, j] = embed(token_ids[j]) + pos(j), then the optional mixing layer and dropout."""
    if chunk.slots != params.slots:
        raise ShapeError(f"chunk has {chunk.slots} slots, encoder expects {params.slots}")
    X = take_rows(params.embedding, chunk.token_ids) + params.positional
    H = transpose(X)
    if params.mixing:
        H = tanh(matmul(params.mix_W, H) + params.mix_b)
    if training and dropout_p > 0:
        if rng is None:
            raise ConfigError("dropout in training mode needs an rng")
        H = dropout(H, dropout_p, rng)
    return EncoderOutput(H=H, pad_mask=chunk.pad_mask)


class Encoder(Protocol):
    d_e: int

    def encode(self, doc: ChunkedDocument, training: bool = False, rng: Optional[np.random.Generator] = None) -> List[EncoderOutput]:
        ...

    def encode_chunk(self, chunk: TokenChunk, training: bool = False, rng: Optional[np.random.Generator] = None) -> EncoderOutput:
        ...

    def parameters(self) -> Dict[str, Tensor]:
        ...


class EmbeddingEncoder:
    kind = "embedding"

    def __init__(self, params: EncoderParams, dropout_p: float = 0.0):
        self.params = params
        self.dropout_p = dropout_p

    @property
    def d_e(self) -> int:
        return self.params.d_e

    def encode_chunk(self, chunk, training=False, rng=None) -> EncoderOutput:
        return encode_chunk(chunk, self.params, self.dropout_p, training, rng)

    def encode(self, doc, training=False, rng=None) -> List[EncoderOutput]:
        return [self.encode_chunk(chunk, training, rng) for chunk in doc.chunks]

    def parameters(self) -> Dict[str, Tensor]:
        return self.params.tensors()


# ============================================================================
# External vectors
# ============================================================================

def external_key(doc_id: str, chunk_index: int) -> str:
    return f"{doc_id}/{chunk_index}"


def save_external_vectors(path: str, vectors: Mapping[Tuple[str, int], np.ndarray]) -> None:
    """Write (doc_id, chunk_index) -> (d_e x slots) matrices in the checkpoint format."""
    shapes = {np.asarray(m).shape for m in vectors.values()}
    if len(shapes) > 1:
        raise ShapeError(f"external vectors disagree on shape: {sorted(shapes)}")
    d_e, slots = shapes.pop() if shapes else (None, None)
    save_checkpoint(
        path,
        {external_key(doc_id, index): m for (doc_id, index), m in vectors.items()},
        d_e=d_e,
        meta={"kind": "external_vectors", "slots": slots},
    )


def load_external_vectors(
    source: Union[str, TensorIndex],
    doc_id: str,
    chunk_index: int,
    expected_d_e: Optional[int] = None,
    slots: int = 512,
    pad_mask: Optional[np.ndarray] = None,
) -> EncoderOutput:
    """Frozen EncoderOutput for one chunk. Pass an open TensorIndex to skip the manifest parse."""
    index = source if isinstance(source, TensorIndex) else TensorIndex(source)
    matrix = index.read(external_key(doc_id, chunk_index))
    if expected_d_e is not None and matrix.shape[0] != expected_d_e:
        raise CheckpointFormatError(f"rows {matrix.shape[0]} != configured d_e {expected_d_e}", field="d_e")
    if matrix.shape[1] != slots:
        raise CheckpointFormatError(f"{matrix.shape[1]} columns, expected {slots}", field="shape")
    if pad_mask is None:
        pad_mask = np.ones(slots, dtype=bool)
    return EncoderOutput(H=Tensor(matrix, requires_grad=False), pad_mask=pad_mask, frozen=True)


class ExternalVectorEncoder:
    kind = "external"

    def __init__(self, path: str, d_e: int, slots: int):
        self.index = TensorIndex(path)
        file_d_e = self.index.manifest.get("d_e")
        if file_d_e not in (None, d_e):
            raise CheckpointFormatError(f"file d_e {file_d_e} != configured {d_e}", field="d_e")
        self.path = path
        self.d_e = d_e
        self.slots = slots

    def encode(self, doc, training=False, rng=None) -> List[EncoderOutput]:
        return [
            load_external_vectors(self.index, doc.id, chunk.chunk_index, self.d_e, self.slots, chunk.pad_mask)
            for chunk in doc.chunks
        ]

    def encode_chunk(self, chunk, training=False, rng=None) -> EncoderOutput:
        raise ConfigError("external vectors are keyed by document; they cannot encode free text")

    def parameters(self) -> Dict[str, Tensor]:
        return {}
