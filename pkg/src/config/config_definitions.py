"""
This module provides the typed configuration of a pipeline run.

Classes:
    - `PathConfig`: Data, output and checkpoint locations.
    - `ModelConfig`: Network and optimisation hyperparameters.
    - `SplitConfig`: Chronological split ratios.
    - `PreprocessConfig`: Sale cleaning and embedding parameters.
    - `RunSettings`: Seeds, variants, task and prediction step.
    - `ImportanceConfig`: Permutation importance settings.
    - `SyntheticSpec`: Parameters of the synthetic market generator.
    - `LoggingConfig`: Log level and directory.
    - `RunConfig`: The complete configuration combining all sections.

Every model forbids unknown keys so that a typo in `config.yaml` is a
configuration error instead of a silently ignored value.
"""
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config.enums import Task, Variant


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PathConfig(_Section):
    """
    Attributes:
        data_dir (str): Directory holding the ingest-format input files.
        output_dir (str): Root of all stage outputs.
        checkpoint (str | None): Explicit checkpoint file, defaults to the train stage output.
    """
    data_dir: str = "data"
    output_dir: str = "output"
    checkpoint: Optional[str] = None


class ModelConfig(_Section):
    """
    Network and optimisation hyperparameters.

    hidden_dim = 64, gnn_layers = 2, dropout = 0.5, l2_weight = 5e-4,
    lr = 1e-3, batch = 64, history H = 14 and step N in {1, 3, 5}.
    """
    hidden_dim: int = Field(64, gt=0)
    gnn_layers: int = Field(2, gt=0)
    dropout: float = 0.5
    l2_weight: float = Field(5e-4, ge=0)
    lr: float = Field(1e-3, gt=0)
    batch: int = Field(64, gt=0)
    history: int = Field(14, ge=0)
    step: int = Field(1, gt=0)
    transformer_layers: int = Field(1, gt=0)
    transformer_heads: int = Field(2, gt=0)
    max_sale_length: int = Field(16, gt=0)
    max_epochs: int = Field(100, gt=0)
    patience: int = Field(10, gt=0)

    @field_validator("dropout")
    @classmethod
    def check_dropout(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {value}")
        return value

    @model_validator(mode="after")
    def check_heads(self) -> "ModelConfig":
        if self.hidden_dim % self.transformer_heads:
            raise ValueError("hidden_dim must be divisible by transformer_heads")
        return self


class SplitConfig(_Section):
    train: float = 0.70
    validation: float = 0.15
    test: float = 0.15
    min_extra_days: int = Field(10, ge=0)

    @model_validator(mode="after")
    def check_ratios(self) -> "SplitConfig":
        ratios = (self.train, self.validation, self.test)
        if any(r <= 0 for r in ratios):
            raise ValueError(f"split ratios must be positive, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
        return self


class PreprocessConfig(_Section):
    box_whisker_k: float = Field(1.5, gt=0)
    outlier_half_window: int = Field(3, ge=0)
    outlier_min_samples: int = Field(4, ge=1)
    embedding_dim: int = Field(8, gt=0)
    visual_embeddings: str = "visual_embeddings.csv"
    textual_embeddings: str = "textual_embeddings.csv"


class RunSettings(_Section):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    steps: list[int] = Field(default_factory=lambda: [1, 3, 5])
    variants: list[Variant] = Field(default_factory=lambda: [Variant.FULL, Variant.ALSTM])
    task: Task = Task.COLLECTION
    variant: Variant = Variant.FULL
    workers: int = Field(1, gt=0)

    @field_validator("seeds", "steps")
    @classmethod
    def check_nonempty(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("list must not be empty")
        return value


class ImportanceConfig(_Section):
    repeats: int = Field(5, gt=0)
    features: list[str] = Field(default_factory=lambda: [
        "collection.daily_price",
        "collection.sale_volume",
        "wallet.asset_value",
        "collection.visual_embedding",
        "collection.textual_embedding",
    ])


class SyntheticSpec(_Section):
    """
    Parameters of the synthetic market.

    Activity budgets follow a discrete power law with `activity_exponent`
    starting at `activity_xmin`. Smart-money wallets are the most active ones;
    when their net buys of a collection on day d exceed `smart_threshold`, the
    collection's latent price is multiplied by (1 + `bump`) from day d + `lag`.
    """
    n_collections: int = Field(20, gt=0)
    n_wallets: int = Field(500, gt=1)
    n_days: int = Field(365, gt=1)
    tokens_per_collection: int = Field(120, gt=0)
    properties_per_collection: int = Field(12, gt=0)
    activity_exponent: float = Field(2.5, gt=1.0)
    activity_xmin: int = Field(12, gt=0)
    smart_wallets: int = Field(25, ge=0)
    smart_threshold: int = Field(3, gt=0)
    smart_focus_prob: float = Field(0.6, ge=0, le=1)
    lag: int = Field(3, gt=0)
    bump: float = Field(0.5, gt=0)
    wash_rings: int = Field(3, ge=0)
    ring_size: int = 2
    ring_cycles: int = Field(1, gt=0)
    outlier_rate: float = Field(0.01, ge=0, lt=1)
    price_volatility: float = Field(0.02, ge=0)
    rarity_strength: float = Field(0.3, ge=0)
    embedding_dim: int = Field(8, gt=0)
    start_timestamp: int = 1609459200
    seed: int = 7

    @model_validator(mode="after")
    def check_feasible(self) -> "SyntheticSpec":
        if self.ring_size < 2:
            raise ValueError("ring_size must be at least 2")
        if self.lag >= self.n_days:
            raise ValueError("lag must be smaller than the number of days")
        if self.smart_wallets > self.n_wallets:
            raise ValueError("more smart-money wallets than wallets")
        return self


class LoggingConfig(_Section):
    level: str = "INFO"
    log_dir: str = "logs"


class RunConfig(_Section):
    """
    The complete configuration of a run.

    Attributes:
        paths (PathConfig): File locations.
        model (ModelConfig): Model hyperparameters.
        split (SplitConfig): Split ratios.
        preprocess (PreprocessConfig): Cleaning parameters.
        run (RunSettings): Seeds, variants and task selection.
        importance (ImportanceConfig): Permutation importance settings.
        synthetic (SyntheticSpec): Generator parameters.
        logging (LoggingConfig): Logging parameters.
    """
    paths: PathConfig = PathConfig()
    model: ModelConfig = ModelConfig()
    split: SplitConfig = SplitConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    run: RunSettings = RunSettings()
    importance: ImportanceConfig = ImportanceConfig()
    synthetic: SyntheticSpec = SyntheticSpec()
    logging: LoggingConfig = LoggingConfig()
