"""claimsml: Configuration

Default constants live at module level (one block per pipeline stage); the
frozen dataclasses below are built from them and are what the rest of the
package receives. ``load_pipeline_config`` reads the JSON document checked in
as ``configs/default.json`` and applies CLI overrides.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from claimsml.errors import ConfigError

# ── Global ───────────────────────────────────────────────────────────────────
DEFAULT_SEED = 20201
DEFAULT_THREADS = 1
DEFAULT_DETERMINISTIC = True

# Module seeds are derived from the global seed so that --seed reaches all of them.
SEED_OFFSETS = {
    "generator": 0,
    "cbow": 101,
    "split": 202,
    "logit": 303,
    "svm": 404,
    "gbm": 505,
    "transformer": 606,
    "lime": 707,
    "stability": 808,
    "sanity": 909,
    "explain": 1010,
}

# ── Preprocessing ────────────────────────────────────────────────────────────
# Lower bounds (years) of the age buckets; the last bucket is open-ended.
AGE_BUCKET_LOWER_BOUNDS = (0, 3, 6, 14, 19, 34, 49, 65, 79)
LEAKAGE_WINDOW_DAYS = 7
LOOKBACK_YEARS = 3
LABEL_WINDOW_DAYS = 30
COVID_CODES = ("U071", "U072", "B9729")

# ── Narrative / Vocabulary ───────────────────────────────────────────────────
VOCAB_MIN_COUNT = 5
HISTORY_MAX_LEN = 256

# ── CBOW Embeddings ──────────────────────────────────────────────────────────
CBOW_DIM = 64           # 1000 reproduces the published embedding size
CBOW_WINDOW = 10
CBOW_NEGATIVES = 5
CBOW_LEARNING_RATE = 0.05
CBOW_MIN_LEARNING_RATE = 0.0001
CBOW_EPOCHS = 5
CBOW_NOISE_POWER = 0.75

# ── Train / Test Split ───────────────────────────────────────────────────────
TRAIN_FRACTION = 0.70

# ── Risk-factor Logistic Regression ──────────────────────────────────────────
LOGIT_L2 = 1e-4
LOGIT_MAX_ITER = 500
LOGIT_LEARNING_RATE = 0.5
LOGIT_TOL = 1e-6

# ── Bag-of-words SVM ─────────────────────────────────────────────────────────
SVM_LAMBDA = 1e-4
SVM_EPOCHS = 10
SVM_BATCH_SIZE = 256
SVM_CALIBRATION_FRACTION = 0.10

# ── Embedding GBM ────────────────────────────────────────────────────────────
GBM_N_TREES = 100
GBM_MAX_DEPTH = 3
GBM_LEARNING_RATE = 0.1
GBM_MIN_SAMPLES_LEAF = 20
GBM_SUBSAMPLE = 1.0

# ── Masked-LM Transformer ────────────────────────────────────────────────────
TRANSFORMER_LAYERS = 2
TRANSFORMER_HEADS = 4
TRANSFORMER_DIM = 64
TRANSFORMER_FFN_DIM = 256
TRANSFORMER_MAX_LEN = 256
MLM_MASK_RATE = 0.30
MLM_PRETRAIN_LR = 1e-3
MLM_FINETUNE_LR = 5e-4
MLM_PRETRAIN_EPOCHS = 1
MLM_FINETUNE_EPOCHS = 3
MLM_BATCH_SIZE = 64
MLM_FINETUNE_BATCH_SIZE = 32
MLM_VALIDATION_FRACTION = 0.10
MLM_WEIGHT_DECAY = 0.01

# ── LIME / Stability / Sanity ────────────────────────────────────────────────
LIME_SAMPLES = 1000
LIME_KERNEL_WIDTH_FACTOR = 0.25   # width = factor * sqrt(n_features)
LIME_RIDGE_ALPHA = 1.0
LIME_DROP_PROBABILITY = 0.5
STABILITY_PAIRS = 5000
STABILITY_MODELS = ("bow-svm", "embed-gbm", "mlm")
SANITY_VARIATIONS = 20
EXPLAIN_POSITIVES = 100
EXPLAIN_NEGATIVES = 100

MODEL_KINDS = ("risk-logit", "bow-svm", "embed-gbm", "mlm")


def _require(condition: bool, key: str, message: str):
    if not condition:
        raise ConfigError(key, message)


@dataclass(frozen=True)
class NarrativeConfig:
    min_count: int = VOCAB_MIN_COUNT
    max_len: int = HISTORY_MAX_LEN

    def __post_init__(self):
        _require(self.min_count >= 1, "min_count", "must be >= 1")
        _require(self.max_len >= 4, "max_len", "must leave room for [CLS], AGE, SEX and one code")


@dataclass(frozen=True)
class CbowConfig:
    dim: int = CBOW_DIM
    window: int = CBOW_WINDOW
    negatives: int = CBOW_NEGATIVES
    learning_rate: float = CBOW_LEARNING_RATE
    min_learning_rate: float = CBOW_MIN_LEARNING_RATE
    epochs: int = CBOW_EPOCHS
    noise_power: float = CBOW_NOISE_POWER
    seed: int = DEFAULT_SEED + SEED_OFFSETS["cbow"]

    def __post_init__(self):
        _require(self.dim >= 1, "dim", "must be >= 1")
        _require(self.window >= 1, "window", "must be >= 1")
        _require(self.negatives >= 1, "negatives", "must be >= 1")
        _require(self.epochs >= 1, "epochs", "must be >= 1")
        _require(0 < self.learning_rate, "learning_rate", "must be positive")
        _require(0 <= self.min_learning_rate <= self.learning_rate,
                 "min_learning_rate", "must be in [0, learning_rate]")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = TRAIN_FRACTION
    stratify_by_label: bool = True
    seed: int = DEFAULT_SEED + SEED_OFFSETS["split"]

    def __post_init__(self):
        _require(0.0 < self.train_fraction <= 1.0, "train_fraction", "must be in (0, 1]")


@dataclass(frozen=True)
class LogitConfig:
    l2: float = LOGIT_L2
    max_iter: int = LOGIT_MAX_ITER
    learning_rate: float = LOGIT_LEARNING_RATE
    tol: float = LOGIT_TOL
    seed: int = DEFAULT_SEED + SEED_OFFSETS["logit"]

    def __post_init__(self):
        _require(self.l2 >= 0, "l2", "must be >= 0")
        _require(self.max_iter >= 1, "max_iter", "must be >= 1")
        _require(self.learning_rate > 0, "learning_rate", "must be positive")


@dataclass(frozen=True)
class SvmConfig:
    lam: float = SVM_LAMBDA
    epochs: int = SVM_EPOCHS
    batch_size: int = SVM_BATCH_SIZE
    calibration_fraction: float = SVM_CALIBRATION_FRACTION
    seed: int = DEFAULT_SEED + SEED_OFFSETS["svm"]

    def __post_init__(self):
        _require(self.lam > 0, "lam", "must be positive")
        _require(self.epochs >= 1, "epochs", "must be >= 1")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(0.0 < self.calibration_fraction < 1.0, "calibration_fraction", "must be in (0, 1)")


@dataclass(frozen=True)
class GbmConfig:
    n_trees: int = GBM_N_TREES
    max_depth: int = GBM_MAX_DEPTH
    learning_rate: float = GBM_LEARNING_RATE
    min_samples_leaf: int = GBM_MIN_SAMPLES_LEAF
    subsample: float = GBM_SUBSAMPLE
    seed: int = DEFAULT_SEED + SEED_OFFSETS["gbm"]

    def __post_init__(self):
        _require(self.n_trees >= 1, "n_trees", "must be >= 1")
        _require(self.max_depth >= 1, "max_depth", "must be >= 1")
        _require(0.0 < self.learning_rate <= 1.0, "learning_rate", "must be in (0, 1]")
        _require(self.min_samples_leaf >= 1, "min_samples_leaf", "must be >= 1")
        _require(0.0 < self.subsample <= 1.0, "subsample", "must be in (0, 1]")


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = TRANSFORMER_LAYERS
    heads: int = TRANSFORMER_HEADS
    d_model: int = TRANSFORMER_DIM
    ffn_dim: int = TRANSFORMER_FFN_DIM
    max_len: int = TRANSFORMER_MAX_LEN
    mask_rate: float = MLM_MASK_RATE
    dropout: float = 0.0
    pretrain_lr: float = MLM_PRETRAIN_LR
    finetune_lr: float = MLM_FINETUNE_LR
    pretrain_epochs: int = MLM_PRETRAIN_EPOCHS
    finetune_epochs: int = MLM_FINETUNE_EPOCHS
    batch_size: int = MLM_BATCH_SIZE
    finetune_batch_size: int = MLM_FINETUNE_BATCH_SIZE
    validation_fraction: float = MLM_VALIDATION_FRACTION
    weight_decay: float = MLM_WEIGHT_DECAY
    freeze_encoder: bool = False
    seed: int = DEFAULT_SEED + SEED_OFFSETS["transformer"]

    def __post_init__(self):
        _require(self.layers >= 1, "layers", "must be >= 1")
        _require(self.heads >= 1, "heads", "must be >= 1")
        _require(self.d_model % self.heads == 0, "d_model", "must be divisible by heads")
        _require(0.0 < self.mask_rate < 1.0, "mask_rate", "must be in (0, 1)")
        _require(self.max_len >= 4, "max_len", "must be >= 4")
        _require(0.0 <= self.dropout < 1.0, "dropout", "must be in [0, 1)")
        _require(0.0 <= self.validation_fraction < 1.0, "validation_fraction", "must be in [0, 1)")


@dataclass(frozen=True)
class LimeConfig:
    n_samples: int = LIME_SAMPLES
    kernel_width: float | None = None
    ridge_alpha: float = LIME_RIDGE_ALPHA
    drop_probability: float = LIME_DROP_PROBABILITY
    seed: int = DEFAULT_SEED + SEED_OFFSETS["lime"]

    def __post_init__(self):
        _require(self.n_samples >= 2, "n_samples", "must be >= 2")
        _require(self.kernel_width is None or self.kernel_width > 0, "kernel_width", "must be positive")
        _require(0.0 < self.drop_probability < 1.0, "drop_probability", "must be in (0, 1)")

    def width_for(self, n_features: int) -> float:
        if self.kernel_width is not None:
            return self.kernel_width
        return LIME_KERNEL_WIDTH_FACTOR * max(n_features, 1) ** 0.5


@dataclass(frozen=True)
class StabilityConfig:
    n_pairs: int = STABILITY_PAIRS
    models: tuple[str, ...] = STABILITY_MODELS
    seed: int = DEFAULT_SEED + SEED_OFFSETS["stability"]

    def __post_init__(self):
        _require(self.n_pairs >= 1, "n_pairs", "must be >= 1")
        unknown = [m for m in self.models if m not in MODEL_KINDS]
        _require(not unknown, "models", f"unknown model kinds {unknown}")


@dataclass(frozen=True)
class SanityConfig:
    n_variations: int = SANITY_VARIATIONS
    seed: int = DEFAULT_SEED + SEED_OFFSETS["sanity"]

    def __post_init__(self):
        _require(self.n_variations >= 1, "n_variations", "must be >= 1")


@dataclass(frozen=True)
class ExplainConfig:
    n_positive: int = EXPLAIN_POSITIVES
    n_negative: int = EXPLAIN_NEGATIVES
    seed: int = DEFAULT_SEED + SEED_OFFSETS["explain"]


@dataclass(frozen=True)
class PathsConfig:
    """Artifact locations; relative paths are resolved against ``workdir``."""

    workdir: str = "artifacts"
    pretrain_corpus: str = "data/pretrain.jsonl"
    cohort_corpus: str = "data/cohort.jsonl"
    vocab: str = "vocab.tsv"
    embeddings: str = "embeddings.clem"
    models_dir: str = "models"
    reports_dir: str = "reports"
    risk_map: str | None = None

    def resolve(self, name: str) -> Path:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"paths.{name}", "not set")
        path = Path(value)
        return path if path.is_absolute() else Path(self.workdir) / path


def _default_generator():
    from claimsml.synthgen.profiles import GeneratorConfig
    return GeneratorConfig()


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = DEFAULT_SEED
    deterministic: bool = DEFAULT_DETERMINISTIC
    threads: int = DEFAULT_THREADS
    age_lower_bounds: tuple[int, ...] = AGE_BUCKET_LOWER_BOUNDS
    covid_codes: tuple[str, ...] = COVID_CODES
    paths: PathsConfig = field(default_factory=PathsConfig)
    generator: Any = field(default_factory=_default_generator)
    narrative: NarrativeConfig = field(default_factory=NarrativeConfig)
    cbow: CbowConfig = field(default_factory=CbowConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    logit: LogitConfig = field(default_factory=LogitConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    gbm: GbmConfig = field(default_factory=GbmConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    lime: LimeConfig = field(default_factory=LimeConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    sanity: SanityConfig = field(default_factory=SanityConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def __post_init__(self):
        _require(self.threads >= 1, "threads", "must be >= 1")

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Return a copy whose global seed and every module seed derive from ``seed``."""
        sections = {
            name: dataclasses.replace(getattr(self, name), seed=seed + offset)
            for name, offset in SEED_OFFSETS.items()
            if hasattr(self, name)
        }
        return dataclasses.replace(self, seed=seed, **sections)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "paths": PathsConfig,
    "narrative": NarrativeConfig,
    "cbow": CbowConfig,
    "split": SplitSpec,
    "logit": LogitConfig,
    "svm": SvmConfig,
    "gbm": GbmConfig,
    "transformer": TransformerConfig,
    "lime": LimeConfig,
    "stability": StabilityConfig,
    "sanity": SanityConfig,
    "explain": ExplainConfig,
}


def section_from_dict(cls, data: dict, prefix: str):
    """Build a config dataclass from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(prefix, "must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown key")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"{prefix}.{e.key}", str(e).split(": ", 1)[-1]) from None
    except TypeError as e:
        raise ConfigError(prefix, str(e)) from None


def load_pipeline_config(
    path: str | Path | None = None,
    seed: int | None = None,
    threads: int | None = None,
    deterministic: bool | None = None,
) -> PipelineConfig:
    """Read a pipeline config document and apply command-line overrides.

    A missing ``path`` yields the built-in defaults. A module section keeps a
    ``seed`` it names; the others derive from the document's global seed. An
    explicit ``seed`` argument overrides the global seed and every module seed.
    """
    from claimsml.synthgen.profiles import GeneratorConfig

    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON at line {e.lineno}: {e.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")

    kwargs: dict = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = section_from_dict(_SECTIONS[key], value, key)
        elif key == "generator":
            kwargs[key] = GeneratorConfig.from_dict(value)
        elif key in ("seed", "threads"):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(key, "must be an integer")
            kwargs[key] = value
        elif key == "deterministic":
            if not isinstance(value, bool):
                raise ConfigError(key, "must be a boolean")
            kwargs[key] = value
        elif key in ("age_lower_bounds", "covid_codes"):
            if not isinstance(value, list) or not value:
                raise ConfigError(key, "must be a non-empty list")
            kwargs[key] = tuple(value)
        elif key.startswith("_"):
            continue  # comment keys
        else:
            raise ConfigError(key, "unknown key")

    if threads is not None:
        kwargs["threads"] = threads
    if deterministic is not None:
        kwargs["deterministic"] = deterministic
    config = PipelineConfig(**kwargs)
    if seed is not None:
        return config.with_seed(seed)
    return _derive_module_seeds(config, raw)


def _derive_module_seeds(config: PipelineConfig, raw: dict) -> PipelineConfig:
    """Seed every module section that does not name its own ``seed`` from the global seed."""
    sections = {}
    for name, offset in SEED_OFFSETS.items():
        given = raw.get(name)
        if isinstance(given, dict) and "seed" in given:
            continue
        sections[name] = dataclasses.replace(getattr(config, name), seed=config.seed + offset)
    return dataclasses.replace(config, **sections)
