import os
import json
from pathlib import Path
from typing import Optional, List, Dict, Literal, Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from hilat.errors import ConfigError

# Config from environment
RUNS_DIR = os.getenv("HILAT_RUNS_DIR", "runs")
CHECK_FINITE = os.getenv("HILAT_CHECK_FINITE", "1") not in ("0", "false", "no")
LOG_LEVEL = os.getenv("HILAT_LOG_LEVEL", "INFO")
SECTION_GROUPS_PATH = os.getenv(
    "HILAT_SECTION_GROUPS",
    os.path.join(os.path.dirname(__file__), "data", "section_groups.json"),
)

DEFAULT_FRONT_SECTIONS = [
    "discharge diagnosis",
    "discharge disposition",
    "discharge conditions",
]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============================================================================
# Preprocessing / model variant configuration
# ============================================================================

class PrepConfig(StrictModel):
    keep_nonalpha: bool = False
    remove_stopwords: bool = False
    raw_order: bool = False
    strategy: Literal["sequential", "meaningful"] = "sequential"
    front_sections: List[str] = Field(default_factory=lambda: list(DEFAULT_FRONT_SECTIONS))
    deid_pattern: str = r"\[\*\*.*?\*\*\]"
    section_groups_path: Optional[str] = None
    # Split words longer than this into two tokens (test/inspection mode)
    subword_threshold: Optional[int] = None


class VariantConfig(StrictModel):
    freeze: Literal["none", "all", "all_but_last"] = "none"
    init_scheme: Literal["random", "label_embedding"] = "random"
    multihead: bool = False
    doc_repr: Literal["attention", "mean_pool", "max_pool", "flat_concat"] = "attention"
    mask_pads: bool = True


# Ablation letters -> partial overrides of (prep, variant)
VARIANTS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "a": {"prep": {"keep_nonalpha": True}},
    "b": {"prep": {"remove_stopwords": True}},
    "c": {"prep": {"raw_order": True}},
    "d": {"prep": {"strategy": "meaningful"}},
    "e": {"variant": {"freeze": "all_but_last"}},
    "f": {"variant": {"init_scheme": "label_embedding"}},
    "g": {"variant": {"multihead": True}},
    "h": {"variant": {"doc_repr": "mean_pool"}},
    "i": {"variant": {"doc_repr": "max_pool"}},
    "j": {"variant": {"doc_repr": "flat_concat"}},
}

VARIANT_DESCRIPTIONS = {
    "a": "keeping non-alphabetic characters",
    "b": "further removing stop words",
    "c": "raw text order",
    "d": "meaningful chunking",
    "e": "only fine-tuning the last encoder layer",
    "f": "label embedding initialization",
    "g": "multi-head token-level attention",
    "h": "mean pooling for document representations",
    "i": "maximum pooling for document representations",
    "j": "flat concatenation for document representations",
}


# ============================================================================
# Training configuration
# ============================================================================

class TrainConfig(StrictModel):
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=5e-5, gt=0)
    weight_decay: float = Field(default=0.1, ge=0)
    total_steps: int = Field(default=2500, ge=0)
    warmup_steps: int = Field(default=500, ge=0)
    dropout_p: float = Field(default=0.1, ge=0, lt=1)
    seed: int = Field(default=0, ge=0)
    n_chunks: int = Field(default=10, ge=1)
    content_len: int = Field(default=510, ge=1)
    d_e: int = Field(default=32, ge=1)
    mixing_layer: bool = True
    min_freq: int = Field(default=1, ge=1)
    eval_every: int = Field(default=100, ge=1)
    threshold: float = Field(default=0.5, gt=0, lt=1)
    workers: int = Field(default=1, ge=1)
    variant_letter: Optional[str] = None
    prep: PrepConfig = Field(default_factory=PrepConfig)
    variant: VariantConfig = Field(default_factory=VariantConfig)

    @model_validator(mode="after")
    def check_schedule(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError(
                f"warmup_steps ({self.warmup_steps}) exceeds total_steps ({self.total_steps})"
            )
        if self.variant_letter is not None and self.variant_letter not in VARIANTS:
            raise ValueError(f"unknown variant letter {self.variant_letter!r}")
        return self

    @property
    def slots(self) -> int:
        """Token slots per chunk: content plus CLS and SEP."""
        return self.content_len + 2


PROFILES: Dict[str, Dict[str, Any]] = {
    # Hyperparameters reported for the full-scale model
    "paper": {
        "batch_size": 16,
        "learning_rate": 5e-5,
        "weight_decay": 0.1,
        "total_steps": 2500,
        "warmup_steps": 500,
        "dropout_p": 0.1,
        "n_chunks": 10,
        "content_len": 510,
    },
    # Desk-scale: small trainable encoder needs a larger step size
    "desk": {
        "batch_size": 16,
        "learning_rate": 5e-3,
        "weight_decay": 0.01,
        "total_steps": 400,
        "warmup_steps": 40,
        "dropout_p": 0.1,
        "n_chunks": 10,
        "content_len": 510,
        "d_e": 32,
        "eval_every": 50,
    },
}


# ============================================================================
# Synthetic corpus specification
# ============================================================================

class CorpusSpec(StrictModel):
    n_docs: int = Field(default=200, ge=1)
    n_labels: int = Field(default=10, ge=1)
    keywords: Optional[Dict[str, List[str]]] = None
    phrases_per_label: int = Field(default=2, ge=1)
    labels_min: int = Field(default=2, ge=0)
    labels_mean: float = Field(default=3.0, gt=0)
    labels_max: Optional[int] = None
    words_mean: int = Field(default=300, ge=10)
    background_vocab: int = Field(default=1500, ge=10)
    noise_rate: float = Field(default=0.0, ge=0, le=1)
    diagnosis_fraction: float = Field(default=0.3, ge=0, le=1)
    split: List[float] = Field(default_factory=lambda: [0.7, 0.15, 0.15])
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_counts(self):
        if self.labels_min > self.n_labels:
            raise ValueError("labels_min exceeds n_labels")
        if self.labels_max is not None and self.labels_max < self.labels_min:
            raise ValueError("labels_max is below labels_min")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split must be three fractions summing to 1")
        return self


CORPUS_PROFILES: Dict[str, Dict[str, Any]] = {
    "desk": {},
    # Coarse shape of a discharge-summary corpus
    "mimic_shape": {"n_labels": 50, "labels_mean": 15.0, "words_mean": 2000},
}


class RunConfig(StrictModel):
    train: TrainConfig = Field(default_factory=TrainConfig)
    corpus: CorpusSpec = Field(default_factory=CorpusSpec)


# ============================================================================
# Loading helpers
# ============================================================================

def deep_merge(base: dict, overrides: dict) -> dict:
    """Recursively merge overrides into a copy of base."""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(
    path: Optional[str] = None,
    profile: Optional[str] = None,
    variant_letter: Optional[str] = None,
    overrides: Optional[dict] = None,
) -> RunConfig:
    """Build the effective config: profile < file < variant < flag overrides."""
    data: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        data = {"train": dict(PROFILES[profile])}
    if path is not None:
        try:
            file_data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(file_data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        data = deep_merge(data, file_data)
    if variant_letter is not None:
        if variant_letter not in VARIANTS:
            raise ConfigError(f"unknown variant {variant_letter!r} (expected one of a-j)")
        data = deep_merge(data, {"train": dict(VARIANTS[variant_letter], variant_letter=variant_letter)})
    if overrides:
        data = deep_merge(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}")


def apply_variant(config: TrainConfig, letter: str) -> TrainConfig:
    """Return a copy of config with ablation `letter` applied."""
    if letter not in VARIANTS:
        raise ConfigError(f"unknown variant {letter!r} (expected one of a-j)")
    data = deep_merge(config.model_dump(), dict(VARIANTS[letter], variant_letter=letter))
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}")
