"""Experiment configuration (a JSON document mirroring these dataclasses)."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..encoder import EncoderConfig
from ..heads import LossWeights
from ..hrca import HrcaConfig
from ..relgraph import RgcnConfig
from ..schema import LabelSchema, load_schema, rlls_schema
from ..synthgen import FeatureConfig, GenConfig

SEED_ENV = "MURPHY_SEED"


@dataclass(frozen=True)
class DataConfig:
    data_dir: str | None = None  # pre-generated dataset; generated on the fly when None
    num_train: int = 40
    num_test: int = 20
    train_styles: tuple[int, ...] = (1, 2)
    test_styles: tuple[int, ...] = (0, 3, 4)
    val_sequences: int = 4  # held out from the train side for checkpoint selection
    gen: GenConfig = field(default_factory=GenConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    @classmethod
    def from_dict(cls, d: dict) -> DataConfig:
        d = dict(d)
        if "gen" in d:
            d["gen"] = GenConfig.from_dict(d["gen"])
        if "features" in d:
            d["features"] = FeatureConfig.from_dict(d["features"])
        for key in ("train_styles", "test_styles"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    decay: float = 0.99  # multiplicative, applied once per epoch
    momentum: float = 0.0
    clip_grad_norm: float | None = None  # global L2 clip applied before each step

    def __post_init__(self) -> None:
        if self.lr <= 0 or not 0 < self.decay <= 1:
            raise ValueError("lr must be positive and decay in (0, 1]")
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ValueError("clip_grad_norm must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> OptimizerConfig:
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    schema: str | None = None  # None selects the bundled RLLS-shaped schema
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    rgcn: RgcnConfig = field(default_factory=RgcnConfig)
    hrca: HrcaConfig = field(default_factory=HrcaConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 10
    batch_size: int = 32
    eval_batch_size: int = 32
    seed: int = 0
    ablation_seeds: tuple[int, ...] = (0, 1, 2)
    output_dir: str = "runs/default"

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.schema is not None and not Path(self.schema).exists():
            raise FileNotFoundError(f"schema file {self.schema} does not exist")
        if self.data.data_dir is not None and not Path(self.data.data_dir).exists():
            raise FileNotFoundError(f"data directory {self.data.data_dir} does not exist")
        if not self.ablation_seeds:
            raise ValueError("ablation_seeds must not be empty")
        if self.encoder.input_dim != self.data.features.feature_dim:
            raise ValueError("encoder.input_dim must equal data.features.feature_dim")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        parsers = {
            "data": DataConfig.from_dict,
            "encoder": EncoderConfig.from_dict,
            "rgcn": RgcnConfig.from_dict,
            "hrca": HrcaConfig.from_dict,
            "loss_weights": LossWeights.from_dict,
            "optimizer": OptimizerConfig.from_dict,
        }
        for key, parse in parsers.items():
            if key in d:
                d[key] = parse(d[key])
        if "ablation_seeds" in d:
            d["ablation_seeds"] = tuple(d["ablation_seeds"])
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def load_schema(self) -> LabelSchema:
        return rlls_schema() if self.schema is None else load_schema(self.schema)

    def config_hash(self) -> str:
        """Hash of everything that defines the model and its data (not epochs, paths or ablation seeds)."""
        d = self.to_dict()
        for key in ("output_dir", "epochs", "ablation_seeds"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def merge(base: dict, overrides: dict) -> dict:
    """Recursive dict update returning a new dict."""
    out = copy.deepcopy(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file; the MURPHY_SEED environment variable overrides ``seed``."""
    doc = json.loads(Path(path).read_text())
    if overrides:
        doc = merge(doc, overrides)
    if os.environ.get(SEED_ENV):
        doc["seed"] = int(os.environ[SEED_ENV])
    return ExperimentConfig.from_dict(doc)
