"""
Pipeline configuration models.

Defaults follow the curation and training settings the benchmark was defined
with: 336 px outputs at JPEG quality 95, 70/30 splits, seed 42, and the
20-epoch cosine schedule.
"""

import json
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

FEATURE_SPEC_VERSION = "hist16x3+orient8/v1"


class TrainConfig(BaseModel):
    """Reference classifier schedule."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(20, ge=1)
    batch_size: int = Field(32, ge=1)
    # 1e-4 suits deep backbones; a linear head on L1-normalised features stalls there
    lr0: float = 1e-2
    lr_min: float = 1e-6
    weight_decay: float = Field(1e-4, ge=0.0)
    dropout: float = 0.3
    seed: int = 42
    optimizer: Literal["adamw", "sgd"] = "adamw"

    @field_validator("dropout")
    @classmethod
    def _check_dropout(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        return value

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if not self.lr0 > self.lr_min > 0:
            raise ValueError("learning rates must satisfy lr0 > lr_min > 0")
        return self


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset_root: Optional[Path] = None
    workdir: Path = Path("work")
    outputs: Optional[Path] = None

    @property
    def reports_dir(self) -> Path:
        return self.outputs if self.outputs is not None else self.workdir / "reports"


class NormalizeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target: int = Field(336, ge=1)
    quality: int = Field(95, ge=50, le=100)


class SplitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_frac: float = 0.7
    seed: int = 42
    protocols: List[Literal["toto", "loto"]] = ["toto", "loto"]

    @field_validator("train_frac")
    @classmethod
    def _check_frac(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("train_frac must lie strictly between 0 and 1")
        return value


class PipelineConfig(BaseModel):
    """Single configuration file shared by every subcommand."""

    model_config = ConfigDict(extra="forbid")

    paths: PathsConfig = PathsConfig()
    label_map: Optional[Path] = None
    normalize: NormalizeConfig = NormalizeConfig()
    split: SplitConfig = SplitConfig()
    train: TrainConfig = TrainConfig()
    synth_spec: Optional[Path] = None
    threads: int = Field(1, ge=1)
    # 0 = exact-hash grouping
    near_duplicate_distance: int = Field(0, ge=0, le=64)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        try:
            config = cls.model_validate(raw)
        except ValidationError as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from exc
        return config.resolved_against(path.parent)

    def resolved_against(self, base: Path) -> "PipelineConfig":
        """Make relative paths relative to the config file's directory."""

        def fix(p: Optional[Path]) -> Optional[Path]:
            return p if p is None or p.is_absolute() else base / p

        paths = self.paths.model_copy(
            update={
                "dataset_root": fix(self.paths.dataset_root),
                "workdir": fix(self.paths.workdir),
                "outputs": fix(self.paths.outputs),
            }
        )
        return self.model_copy(
            update={"paths": paths, "label_map": fix(self.label_map), "synth_spec": fix(self.synth_spec)}
        )

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None) -> "PipelineConfig":
        """Apply CLI overrides; --seed drives both split and training seeds."""
        update = {}
        if seed is not None:
            update["split"] = self.split.model_copy(update={"seed": seed})
            update["train"] = self.train.model_copy(update={"seed": seed})
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be at least 1")
            update["threads"] = threads
        return self.model_copy(update=update)
