"""
Core data models for ctvbench.

Accuracies are fractions in [0, 1]; VTG values are percentage points.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Tuple

from .errors import CatalogError, ArtifactError
from ..utils.validation import validate_fraction

TeamId = str
ClassLabel = str

DEFAULT_CLASSES: Tuple[ClassLabel, ...] = ("carob", "oak", "pepper", "ash", "pistachio", "tipu")


def hash_to_hex(value: Optional[int]) -> Optional[str]:
    """Serialize a 64-bit hash as 16 lowercase hex characters."""
    return None if value is None else f"{value:016x}"


def hash_from_hex(text: Optional[str]) -> Optional[int]:
    """Parse a hash serialized by hash_to_hex."""
    return None if text is None else int(text, 16)


def safe_name(team: TeamId) -> str:
    """Filesystem-safe rendering of a team name for artifact file names."""
    return "".join(c if c.isalnum() or c in "-." else "_" for c in team)


class ImageFormat(Enum):
    JPEG = "JPEG"
    PNG = "PNG"
    HEIC = "HEIC"
    BMP = "BMP"
    TIFF = "TIFF"
    UNKNOWN = "UNKNOWN"


class Protocol(Enum):
    TOTO = "TOTO"
    LOTO = "LOTO"


class Partition(Enum):
    VAL = "val"
    TEST = "test"


@dataclass
class PipelineWarning:
    """A data anomaly reported by a stage (not an error)."""

    code: str  # unreadable_file, empty_cell, normalize_failure, ...
    message: str
    stage: str
    subject: Optional[str] = None


@dataclass(frozen=True)
class ImageRecord:
    """One catalogued image."""

    image_id: str
    team: TeamId
    label: ClassLabel
    rel_path: str
    format: ImageFormat
    width_px: int = 0
    height_px: int = 0
    file_size_bytes: int = 0
    device: Optional[str] = None
    phash: Optional[int] = None
    readable: bool = True

    def __post_init__(self):
        if not self.readable and (self.width_px or self.height_px or self.phash is not None):
            raise CatalogError(f"{self.rel_path}: unreadable record must have 0x0 size and no hash")
        if self.readable and (self.width_px <= 0 or self.height_px <= 0):
            raise CatalogError(f"{self.rel_path}: readable record needs positive dimensions")

    @property
    def pixels(self) -> int:
        return self.width_px * self.height_px

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "team": self.team,
            "class": self.label,
            "rel_path": self.rel_path,
            "format": self.format.value,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "file_size_bytes": self.file_size_bytes,
            "device": self.device,
            "phash": hash_to_hex(self.phash),
            "readable": self.readable,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ImageRecord":
        try:
            return cls(
                image_id=data["image_id"],
                team=data["team"],
                label=data["class"],
                rel_path=data["rel_path"],
                format=ImageFormat(data["format"]),
                width_px=int(data["width_px"]),
                height_px=int(data["height_px"]),
                file_size_bytes=int(data["file_size_bytes"]),
                device=data.get("device"),
                phash=hash_from_hex(data.get("phash")),
                readable=bool(data["readable"]),
            )
        except (KeyError, ValueError) as exc:
            raise ArtifactError(f"malformed catalog record: {exc}") from exc


@dataclass
class Catalog:
    """
    Ordered collection of image records with team and cell indexes.

    Records are kept sorted by rel_path; that ordering is what makes every
    downstream artifact reproducible.
    """

    records: List[ImageRecord] = field(default_factory=list)
    team_index: Dict[TeamId, List[str]] = field(init=False, repr=False)
    cell_index: Dict[Tuple[TeamId, ClassLabel], List[str]] = field(init=False, repr=False)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.rel_path)
        self._by_id: Dict[str, ImageRecord] = {}
        self.team_index = {}
        self.cell_index = {}
        for record in self.records:
            if record.image_id in self._by_id:
                raise CatalogError(f"duplicate image_id {record.image_id} ({record.rel_path})")
            self._by_id[record.image_id] = record
            self.team_index.setdefault(record.team, []).append(record.image_id)
            self.cell_index.setdefault((record.team, record.label), []).append(record.image_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self.records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def get(self, image_id: str) -> ImageRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise CatalogError(f"unknown image_id {image_id}") from None

    @property
    def teams(self) -> List[TeamId]:
        return sorted(self.team_index)

    @property
    def classes(self) -> List[ClassLabel]:
        return sorted({label for _, label in self.cell_index})



@dataclass(frozen=True)
class DuplicateGroup:
    """Records sharing one perceptual hash, plus the retained representative."""

    hash: int
    member_ids: Tuple[str, ...]
    representative_id: str

    @property
    def size(self) -> int:
        return len(self.member_ids)


@dataclass
class DedupResult:
    retained: Catalog
    removed_ids: List[str]
    groups: List[DuplicateGroup]
    bytes_recovered: int
    # removed_id -> priority level (1-5) that decided against it
    removal_levels: Dict[str, int] = field(default_factory=dict)
    # records dropped for being unreadable, never part of a group
    unreadable_ids: List[str] = field(default_factory=list)

    @property
    def involved(self) -> int:
        return sum(g.size for g in self.groups)

    def summary(self, raw_count: Optional[int] = None) -> Dict[str, Any]:
        sizes: Dict[str, int] = {}
        for group in self.groups:
            sizes[str(group.size)] = sizes.get(str(group.size), 0) + 1
        return {
            "raw_count": raw_count,
            "retained_count": len(self.retained),
            "unreadable_dropped": len(self.unreadable_ids),
            "records_involved": self.involved,
            "group_count": len(self.groups),
            "removed_count": len(self.removed_ids),
            "group_size_histogram": dict(sorted(sizes.items(), key=lambda kv: int(kv[0]))),
            "bytes_recovered": self.bytes_recovered,
        }


@dataclass
class NormalizeReport:
    images_processed: int = 0
    input_bytes: int = 0
    output_bytes: int = 0
    failures: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def reduction_percent(self) -> float:
        if self.input_bytes == 0:
            return 0.0
        return 100.0 * (1.0 - self.output_bytes / self.input_bytes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "images_processed": self.images_processed,
            "input_bytes": self.input_bytes,
            "output_bytes": self.output_bytes,
            "reduction_percent": round(self.reduction_percent, 2),
            "failures": [{"image_id": i, "reason": r} for i, r in self.failures],
        }


@dataclass
class SplitManifest:
    """One CTV fold."""

    protocol: Protocol
    focal_team: TeamId
    train_ids: List[str]
    val_ids: List[str]
    test_ids: List[str]
    seed: int
    train_frac: float = 0.7

    @property
    def file_name(self) -> str:
        return f"{self.protocol.value.lower()}_{safe_name(self.focal_team)}.json"

    def partition(self, name: str) -> List[str]:
        return {"train": self.train_ids, "val": self.val_ids, "test": self.test_ids}[name]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "focal_team": self.focal_team,
            "train_ids": list(self.train_ids),
            "val_ids": list(self.val_ids),
            "test_ids": list(self.test_ids),
            "seed": self.seed,
            "train_frac": self.train_frac,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SplitManifest":
        try:
            return cls(
                protocol=Protocol(data["protocol"]),
                focal_team=data["focal_team"],
                train_ids=list(data["train_ids"]),
                val_ids=list(data["val_ids"]),
                test_ids=list(data["test_ids"]),
                seed=int(data["seed"]),
                train_frac=float(data.get("train_frac", 0.7)),
            )
        except (KeyError, ValueError) as exc:
            raise ArtifactError(f"malformed manifest: {exc}") from exc


@dataclass(frozen=True)
class ManifestRef:
    protocol: Protocol
    focal_team: TeamId
    partition: Partition


@dataclass(frozen=True)
class Prediction:
    image_id: str
    true: ClassLabel
    predicted: ClassLabel

    @property
    def correct(self) -> bool:
        return self.true == self.predicted


@dataclass
class PredictionSet:
    manifest_ref: ManifestRef
    items: List[Prediction]

    def __post_init__(self):
        seen = set()
        for item in self.items:
            if item.image_id in seen:
                raise ArtifactError(f"duplicate prediction for {item.image_id}")
            seen.add(item.image_id)

    def __len__(self) -> int:
        return len(self.items)

    def check_against(self, manifest: SplitManifest, catalog: Catalog):
        """Raise ArtifactError unless every item is in the referenced partition with its catalog label."""
        ref = self.manifest_ref
        if (manifest.protocol, manifest.focal_team) != (ref.protocol, ref.focal_team):
            raise ArtifactError(f"{ref.protocol.value} {ref.focal_team}: manifest is for {manifest.file_name}")
        allowed = set(manifest.partition(ref.partition.value))
        for item in self.items:
            if item.image_id not in allowed:
                where = f"{ref.protocol.value} {ref.focal_team} {ref.partition.value}"
                raise ArtifactError(f"{item.image_id} is not in the {where} partition")
            if item.image_id not in catalog or catalog.get(item.image_id).label != item.true:
                raise ArtifactError(f"{item.image_id}: true label {item.true!r} does not match the catalog")


@dataclass
class RunResult:
    """Outcome of one fold: validation and cross-team test accuracies."""

    protocol: Protocol
    focal_team: TeamId
    val_acc: float
    per_team_test_acc: Dict[TeamId, float]
    pooled_test_acc: float
    macro_test_acc: float

    def __post_init__(self):
        values = [self.val_acc, self.pooled_test_acc, self.macro_test_acc]
        values.extend(self.per_team_test_acc.values())
        if not all(validate_fraction(v) for v in values):
            raise ArtifactError(f"{self.focal_team}: accuracies must lie in [0, 1]")

    @property
    def vtg(self) -> float:
        """Validation-test gap in percentage points (pooled test accuracy)."""
        return 100.0 * self.val_acc - 100.0 * self.pooled_test_acc

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "focal_team": self.focal_team,
            "val_acc": self.val_acc,
            "per_team_test_acc": dict(sorted(self.per_team_test_acc.items())),
            "pooled_test_acc": self.pooled_test_acc,
            "macro_test_acc": self.macro_test_acc,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunResult":
        try:
            return cls(
                protocol=Protocol(data["protocol"]),
                focal_team=data["focal_team"],
                val_acc=float(data["val_acc"]),
                per_team_test_acc={k: float(v) for k, v in data["per_team_test_acc"].items()},
                pooled_test_acc=float(data["pooled_test_acc"]),
                macro_test_acc=float(data["macro_test_acc"]),
            )
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise ArtifactError(f"malformed run result: {exc}") from exc


@dataclass
class CrossTeamMatrix:
    """n x n accuracy grid; rows are training teams, columns are test teams."""

    teams: List[TeamId]
    values: List[List[float]]
    diagonal_semantics: str = "validation accuracy"

    def __post_init__(self):
        n = len(self.teams)
        if len(self.values) != n or any(len(row) != n for row in self.values):
            raise ArtifactError(f"matrix must be {n}x{n}")
        if not all(validate_fraction(v) for row in self.values for v in row):
            raise ArtifactError("matrix values must lie in [0, 1]")

    @property
    def size(self) -> int:
        return len(self.teams)
