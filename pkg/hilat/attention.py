"""
Hierarchical label-wise attention head.

Token level, per chunk n:   Z_n = tanh(W H_n),  A_n = softmax_rows(U^T Z_n),  C_n = H_n A_n^T
Stacking, per label l:      M_l = [c_1l, ..., c_Nl]
Chunk level, per label l:   S_l = tanh(K M_l),  o_l = softmax(v^T S_l),  d_l = M_l o_l^T
Classifier:                 y_l = sigmoid(beta_l^T d_l + b_l)
Loss:                       -sum_l [y_l log p_l + (1 - y_l) log(1 - p_l)], mean over the batch

W, K and v are shared by all labels; U and beta carry one column per label.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from hilat.config import PrepConfig, VariantConfig
from hilat.encoder import Encoder, xavier_uniform
from hilat.errors import ConfigError, IndexOutOfRangeError, ShapeError
from hilat.models import EncoderOutput, LossValue
from hilat.tensor import (
    Tensor,
    add,
    affine,
    clip,
    col_sum,
    flatten_columns,
    hstack,
    log,
    matmul,
    mul,
    no_grad,
    row_max,
    row_mean,
    scale,
    select_columns,
    sigmoid,
    softmax_rows,
    sum_all,
    tanh,
    transpose,
)
from hilat.textprep import Vocabulary, build_chunk, clean_text, tokenize

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-7


@dataclass
class HeadParams:
    W: Tensor  # d_e x d_e
    U: Tensor  # d_e x L
    K: Tensor  # d_e x d_e
    v: Tensor  # d_e x 1
    beta: Tensor  # d_e x L (N_c * d_e x L for flat concatenation)
    b: Tensor  # 1 x L
    W_heads: Optional[List[Tensor]] = None
    U_heads: Optional[List[Tensor]] = None

    @property
    def d_e(self) -> int:
        return self.W.shape[0]

    @property
    def n_labels(self) -> int:
        return self.U.shape[1]

    def tensors(self) -> Dict[str, Tensor]:
        out = {
            "head.W": self.W,
            "head.U": self.U,
            "head.K": self.K,
            "head.v": self.v,
            "head.beta": self.beta,
            "head.b": self.b,
        }
        for n, (W_n, U_n) in enumerate(zip(self.W_heads or [], self.U_heads or [])):
            out[f"head.W_{n}"] = W_n
            out[f"head.U_{n}"] = U_n
        return out


# ============================================================================
# Initialization
# ============================================================================

def _param(rng: np.random.Generator, rows: int, cols: int, name: str) -> Tensor:
    return Tensor(xavier_uniform(rng, rows, cols), requires_grad=True, name=name)


def description_chunk(text: str, vocab: Vocabulary, content_len: int, prep: Optional[PrepConfig] = None):
    prep = prep or PrepConfig()
    words = clean_text(text, prep.keep_nonalpha, prep.remove_stopwords, prep.deid_pattern).split()
    stream = [(vocab.encode(t), w) for t, w in tokenize(words, prep.subword_threshold)]
    return build_chunk(stream[:content_len], 0, content_len)


def label_representation(output: EncoderOutput) -> np.ndarray:
    """Mean of the encoder's unmasked token columns."""
    return output.H.data[:, output.pad_mask].mean(axis=1)


def init_head(
    d_e: int,
    n_labels: int,
    n_chunks: int,
    variant: VariantConfig,
    rng: np.random.Generator,
    label_descriptions: Optional[Sequence[str]] = None,
    encoder: Optional[Encoder] = None,
    vocab: Optional[Vocabulary] = None,
    content_len: int = 510,
    prep: Optional[PrepConfig] = None,
) -> HeadParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) per tensor; optionally seed U from label descriptions."""
    beta_rows = n_chunks * d_e if variant.doc_repr == "flat_concat" else d_e
    head = HeadParams(
        W=_param(rng, d_e, d_e, "head.W"),
        U=_param(rng, d_e, n_labels, "head.U"),
        K=_param(rng, d_e, d_e, "head.K"),
        v=_param(rng, d_e, 1, "head.v"),
        beta=_param(rng, beta_rows, n_labels, "head.beta"),
        b=_param(rng, 1, n_labels, "head.b"),
    )
    if variant.multihead:
        head.W_heads = [_param(rng, d_e, d_e, f"head.W_{n}") for n in range(n_chunks)]
        head.U_heads = [_param(rng, d_e, n_labels, f"head.U_{n}") for n in range(n_chunks)]

    if variant.init_scheme == "label_embedding":
        if label_descriptions is None or len(label_descriptions) != n_labels:
            raise ConfigError("label_embedding initialization needs one description per label")
        if encoder is None or vocab is None:
            raise ConfigError("label_embedding initialization needs an encoder and vocabulary")
        columns = []
        with no_grad():
            for text in label_descriptions:
                if not text:
                    raise ConfigError("label_embedding initialization got an empty description")
                chunk = description_chunk(text, vocab, content_len, prep)
                columns.append(label_representation(encoder.encode_chunk(chunk, training=False)))
        U = np.stack(columns, axis=1)
        head.U = Tensor(U, requires_grad=True, name="head.U")
        if head.U_heads is not None:
            head.U_heads = [Tensor(U, requires_grad=True, name=f"head.U_{n}") for n in range(n_chunks)]
    elif variant.init_scheme != "random":
        raise ConfigError(f"unknown init scheme {variant.init_scheme!r}")
    return head


# ============================================================================
# Token-level attention
# ============================================================================

def _label_attention(H: Tensor, W: Tensor, U: Tensor, mask: Optional[np.ndarray]) -> Tuple[Tensor, Tensor]:
    if H.shape[0] != W.shape[1] or U.shape[0] != W.shape[0]:
        raise ShapeError(f"H {H.shape} does not fit W {W.shape} / U {U.shape}")
    Z = tanh(matmul(W, H))
    A = softmax_rows(matmul(transpose(U), Z), mask)
    C = matmul(H, transpose(A))
    return C, A


def token_attention(output: EncoderOutput, head: HeadParams, mask_pads: bool = True) -> Tuple[Tensor, Tensor]:
    """(C_n, A_n) for one chunk with the shared W, U."""
    return _label_attention(output.H, head.W, head.U, output.pad_mask if mask_pads else None)


def multihead_token_attention(
    outputs: Sequence[EncoderOutput],
    head: HeadParams,
    mask_pads: bool = True,
) -> List[Tuple[Tensor, Tensor]]:
    """Token attention with chunk-indexed (W_n, U_n)."""
    if head.W_heads is None or head.U_heads is None:
        raise ConfigError("multi-head attention needs per-chunk W_n, U_n")
    if len(head.W_heads) != len(outputs) or len(head.U_heads) != len(outputs):
        raise ConfigError(f"{len(head.W_heads)} parameter sets for {len(outputs)} chunks")
    return [
        _label_attention(out.H, W_n, U_n, out.pad_mask if mask_pads else None)
        for out, W_n, U_n in zip(outputs, head.W_heads, head.U_heads)
    ]


# ============================================================================
# Stacking and chunk-level attention
# ============================================================================

def _check_stack(Cs: Sequence[Tensor], label: int) -> Tuple[int, int]:
    if not Cs:
        raise ShapeError("no chunk representations to stack")
    shape = Cs[0].shape
    if any(C.shape != shape for C in Cs):
        raise ShapeError(f"chunk representations differ in shape: {[C.shape for C in Cs]}")
    if not 0 <= label < shape[1]:
        raise IndexOutOfRangeError(f"label {label} out of range for {shape[1]} labels")
    return shape


def stack_label_chunks(Cs: Sequence[Tensor], label: int) -> Tensor:
    """M_l: column n is column l of C_n."""
    _, n_labels = _check_stack(Cs, label)
    return select_columns(hstack(Cs), [n * n_labels + label for n in range(len(Cs))])


def chunk_attention(M: Tensor, head: HeadParams) -> Tuple[Tensor, Tensor]:
    """(d_l, o_l) with o_l a (1 x N_c) row summing to 1."""
    if M.shape[0] != head.K.shape[1]:
        raise ShapeError(f"M {M.shape} does not fit K {head.K.shape}")
    S = tanh(matmul(head.K, M))
    o = softmax_rows(matmul(transpose(head.v), S))
    d = matmul(M, transpose(o))
    return d, o


def document_repr_variant(M: Tensor, kind: str) -> Tensor:
    if kind == "mean_pool":
        return row_mean(M)
    if kind == "max_pool":
        return row_max(M)
    if kind == "flat_concat":
        return flatten_columns(M)
    raise ConfigError(f"unknown document representation {kind!r}")


# ============================================================================
# Classifier and loss
# ============================================================================

def classify(d: Tensor, beta_l: Tensor, b_l: Union[Tensor, float]) -> Tensor:
    """sigmoid(beta_l^T d_l + b_l) as a 1 x 1 tensor."""
    if d.shape != beta_l.shape:
        raise ShapeError(f"d {d.shape} and beta {beta_l.shape} differ")
    return sigmoid(add(matmul(transpose(beta_l), d), b_l))


def classify_all(D: Tensor, beta: Tensor, b: Tensor) -> Tensor:
    """Every label at once: D holds d_l as column l; returns 1 x L probabilities."""
    if D.shape != beta.shape:
        raise ShapeError(f"D {D.shape} and beta {beta.shape} differ")
    return sigmoid(add(col_sum(mul(beta, D)), b))


def bce_loss(
    probs: Union[Tensor, Sequence[Tensor]],
    targets: np.ndarray,
    eps: float = DEFAULT_EPS,
) -> LossValue:
    """Sum of per-label binary cross entropy, averaged over examples."""
    batch = [probs] if isinstance(probs, Tensor) else list(probs)
    y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if y.shape[0] != len(batch):
        raise ShapeError(f"{len(batch)} predictions for {y.shape[0]} target rows")

    total = None
    for p, y_row in zip(batch, y):
        if p.shape != (1, y_row.shape[0]):
            raise ShapeError(f"prediction shape {p.shape} does not match {y_row.shape[0]} labels")
        p = clip(p, eps, 1.0 - eps)
        y_t = y_row.reshape(1, -1)
        ll = add(mul(y_t, log(p)), mul(1.0 - y_t, log(affine(p, -1.0, 1.0))))
        example = scale(sum_all(ll), -1.0)
        total = example if total is None else add(total, example)
    return LossValue(value=scale(total, 1.0 / len(batch)), targets=y, eps=eps)
