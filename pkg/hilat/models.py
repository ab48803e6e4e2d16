from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from pydantic import AliasChoices, BaseModel, ConfigDict, Field

from hilat.tensor import Tensor

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
RESERVED_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]


class Document(BaseModel):
    """A raw labeled text record, one line of the JSON-lines dataset."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    raw_text: str = Field(validation_alias=AliasChoices("text", "raw_text"))
    labels: FrozenSet[str]


@dataclass
class TokenChunk:
    """One fixed-length window: CLS at slot 0, content, SEP at the last slot."""
    token_ids: np.ndarray  # int64, slots
    pad_mask: np.ndarray  # bool, slots; True = real token
    word_spans: List[Tuple[int, int, int]]  # (word_index, start_slot, end_slot) end exclusive
    chunk_index: int

    @property
    def slots(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def n_real_content(self) -> int:
        # CLS and SEP are always real
        return int(self.pad_mask.sum()) - 2


@dataclass
class ChunkedDocument:
    id: str
    chunks: List[TokenChunk]
    labels: np.ndarray  # float64 binary vector over the label vocabulary
    words: List[str] = field(default_factory=list)


@dataclass
class EncoderOutput:
    H: Tensor  # d_e x slots, columns are token vectors
    pad_mask: np.ndarray
    frozen: bool = False

    @property
    def d_e(self) -> int:
        return self.H.shape[0]


@dataclass
class AttentionRecord:
    """Attention matrices retained from one forward pass (numpy copies)."""
    A: List[np.ndarray]  # per chunk: labels x slots
    C: List[np.ndarray]  # per chunk: d_e x labels
    o: Optional[np.ndarray]  # labels x chunks; None for pooling variants
    d: List[np.ndarray]  # per label: document representation
    pad_masks: List[np.ndarray]

    @property
    def n_chunks(self) -> int:
        return len(self.A)

    def M(self, label: int) -> np.ndarray:
        return np.stack([c[:, label] for c in self.C], axis=1)


@dataclass
class Prediction:
    probs: np.ndarray
    threshold: float = 0.5

    @property
    def binary(self) -> np.ndarray:
        return self.probs >= self.threshold


@dataclass
class LossValue:
    value: Tensor  # scalar
    targets: np.ndarray
    eps: float = 1e-7

    def item(self) -> float:
        return self.value.item()


class MetricsReport(BaseModel):
    auc_macro: Optional[float] = None
    auc_micro: Optional[float] = None
    p_macro: float
    p_micro: float
    r_macro: float
    r_micro: float
    f1_macro: float
    f1_micro: float
    p_at: Dict[int, Optional[float]] = Field(default_factory=dict)
    per_label: List[Dict[str, object]] = Field(default_factory=list)
    skipped_labels: List[str] = Field(default_factory=list)
    significance: Optional[Dict[str, object]] = None
    n_docs: int = 0
