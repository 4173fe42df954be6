"""
Synthetic multi-team leaf datasets.

Each class is a lobed silhouette with its own hue, lobe count and vein
texture; each team applies its own capture conditions (hue cast, exposure,
sensor noise, blur, JPEG quality, camera model). Every image is rendered from
its own random stream keyed by (seed, team, class, index), so output does not
depend on thread scheduling.
"""

import io
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image, ImageFilter
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..core.errors import ConfigError
from ..core.events import EventBus
from ..core.models import Catalog, ClassLabel, DEFAULT_CLASSES, TeamId
from ..utils.logging import get_logger
from .catalog import EXIF_MODEL_TAG, CatalogScanner, fold_label, image_id_for
from .phash import resample_bicubic
from .splits import make_rng

logger = get_logger(__name__)

DEFAULT_IMAGE_SIZE = 96
DEFAULT_COUNT = 40
LEAF_SATURATION = 0.75
LEAF_VALUE = 0.8
BACKGROUND_SATURATION = 0.35
BACKGROUND_VALUE = 0.55


class ClassParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lobe_count: int = Field(ge=1)
    base_hue: float = Field(ge=0.0, lt=360.0)
    texture_freq: float = Field(gt=0.0)


class DomainParams(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    hue_shift: float = 0.0
    brightness_gain: float = Field(1.0, gt=0.0)
    noise_sigma: float = Field(0.0, ge=0.0)
    blur_radius: float = Field(0.0, ge=0.0)
    encode_quality: int = Field(90, ge=50, le=100)
    device: Optional[str] = None


class ClassSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: ClassLabel
    params: ClassParams


class TeamSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: TeamId
    domain: DomainParams = DomainParams()
    counts: Dict[ClassLabel, int] = {}
    outlier: bool = False


class SynthSpec(BaseModel):
    """Full description of a synthetic dataset."""

    model_config = ConfigDict(extra="forbid")

    teams: List[TeamSpec]
    classes: List[ClassSpec]
    image_size: int = Field(DEFAULT_IMAGE_SIZE, ge=16)
    seed: int = 42
    planted_duplicates: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_shape(self) -> "SynthSpec":
        if len(self.teams) < 2:
            raise ValueError("a synthetic dataset needs at least 2 teams")
        if len(self.classes) < 2:
            raise ValueError("a synthetic dataset needs at least 2 classes")
        labels = {c.label for c in self.classes}
        if len(labels) != len(self.classes):
            raise ValueError("class labels must be unique")
        if len({t.name for t in self.teams}) != len(self.teams):
            raise ValueError("team names must be unique")
        for team in self.teams:
            unknown = set(team.counts) - labels
            if unknown:
                raise ValueError(f"team {team.name} has counts for unknown classes {sorted(unknown)}")
            if any(n < 0 for n in team.counts.values()):
                raise ValueError(f"team {team.name} has a negative count")
        return self

    @property
    def outlier_teams(self) -> List[TeamId]:
        return [t.name for t in self.teams if t.outlier]

    def class_params(self, label: ClassLabel) -> ClassParams:
        return next(c.params for c in self.classes if c.label == label)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

    @classmethod
    def from_json(cls, source: Union[str, Path]) -> "SynthSpec":
        """Parse a spec from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or not str(source).lstrip().startswith("{"):
            try:
                source = Path(source).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read synth spec {source}: {exc}") from exc
        try:
            return cls.model_validate_json(source)
        except ValidationError as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from exc


def default_spec(seed: int = 42, count: int = DEFAULT_COUNT) -> SynthSpec:
    """Twelve teams, six classes, graduated domain shift, team-12 as the outlier."""
    classes = [
        ClassSpec(label=label, params=ClassParams(lobe_count=2 + i, base_hue=60.0 * i, texture_freq=2.0 + i))
        for i, label in enumerate(DEFAULT_CLASSES)
    ]
    shifts = np.linspace(-24.0, 24.0, 11)
    gains = np.linspace(0.85, 1.15, 11)
    devices = ["SM-A515F", "iPhone 12", None, "Redmi Note 9", "Pixel 4a", None,
               "SM-G991B", "iPhone XR", None, "Galaxy A12", "Nokia 5.4"]
    teams = []
    for i in range(11):
        domain = DomainParams(
            hue_shift=float(round(shifts[i], 2)),
            brightness_gain=float(round(gains[(i * 4) % 11], 3)),
            noise_sigma=float(2 + i % 4 * 2),
            blur_radius=float(i % 2),
            encode_quality=95 - (i % 5) * 5,
            device=devices[i],
        )
        teams.append(TeamSpec(name=f"team-{i + 1:02d}", domain=domain, counts={c.label: count for c in classes}))
    outlier = DomainParams(
        hue_shift=45.0, brightness_gain=1.45, noise_sigma=18.0, blur_radius=2.0, encode_quality=55, device=None
    )
    teams.append(TeamSpec(name="team-12", domain=outlier, counts={c.label: count for c in classes}, outlier=True))
    return SynthSpec(teams=teams, classes=classes, image_size=DEFAULT_IMAGE_SIZE, seed=seed)


def leaf_mask(lobe_count: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Boolean silhouette r(t) = R (1 - d + d cos(L (t - t0))).

    Lobe depth d grows with the lobe count, so more lobes means less area.
    """
    radius = rng.uniform(0.55, 0.8)
    cx, cy = rng.uniform(-0.1, 0.1, size=2)
    rotation = rng.uniform(0.0, 2.0 * np.pi)
    depth = min(0.15 + 0.05 * lobe_count, 0.6)
    axis = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    y, x = np.meshgrid(axis - cy, axis - cx, indexing="ij")
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    edge = radius * (1.0 - depth + depth * np.cos(lobe_count * (theta - rotation)))
    return rho <= edge


def _texture(size: int, freq: float, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    axis = (np.arange(size) + 0.5) / size
    y, x = np.meshgrid(axis, axis, indexing="ij")
    return np.sin(2.0 * np.pi * freq * (x * np.cos(angle) + y * np.sin(angle)) + phase)


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.random((6, 6)) * 255.0
    return resample_bicubic(coarse, size, size) / 255.0


def render_pixels(
    params: ClassParams, domain: DomainParams, rng: np.random.Generator, size: int = DEFAULT_IMAGE_SIZE
) -> np.ndarray:
    """Render one sample as an HxWx3 uint8 array (before blur and encoding)."""
    mask = leaf_mask(params.lobe_count, size, rng)
    veins = _texture(size, params.texture_freq, rng)
    ground = _background(size, rng)

    hue = np.full((size, size), (params.base_hue + domain.hue_shift) % 360.0)
    hue[~mask] = (params.base_hue + 180.0 + domain.hue_shift) % 360.0
    saturation = np.where(mask, LEAF_SATURATION, BACKGROUND_SATURATION)
    value = np.where(mask, LEAF_VALUE * (0.85 + 0.15 * veins), BACKGROUND_VALUE * (0.7 + 0.6 * ground))
    hsv = np.stack([hue / 360.0, saturation, np.clip(value, 0.0, 1.0)], axis=-1)

    rgb = hsv_to_rgb(hsv) * 255.0 * domain.brightness_gain
    noise = rng.normal(0.0, domain.noise_sigma, size=rgb.shape) if domain.noise_sigma > 0 else 0.0
    return np.clip(np.floor(rgb + noise + 0.5), 0, 255).astype(np.uint8)


def render_sample(
    params: ClassParams, domain: DomainParams, rng: np.random.Generator, size: int = DEFAULT_IMAGE_SIZE
) -> bytes:
    """Render, blur and JPEG-encode one sample; returns the file bytes."""
    image = Image.fromarray(render_pixels(params, domain, rng, size))
    if domain.blur_radius > 0:
        image = image.filter(ImageFilter.BoxBlur(domain.blur_radius))
    buffer = io.BytesIO()
    options = {"format": "JPEG", "quality": domain.encode_quality, "optimize": False}
    if domain.device:
        exif = Image.Exif()
        exif[EXIF_MODEL_TAG] = domain.device
        options["exif"] = exif.tobytes()
    image.save(buffer, **options)
    return buffer.getvalue()


@dataclass
class GeneratedDataset:
    """Output of generate(): the tree root, its catalog and the planted ground truth."""

    root: Path
    catalog: Catalog
    planted_groups: List[List[str]] = field(default_factory=list)
    outlier_teams: List[TeamId] = field(default_factory=list)


class DatasetSynthesizer:
    """Writes a synthetic dataset tree and catalogs it."""

    def __init__(self, event_bus: Optional[EventBus] = None, threads: int = 1):
        self.event_bus = event_bus or EventBus()
        self.threads = max(1, threads)
        self.images_written = 0

    def _jobs(self, spec: SynthSpec) -> List[Tuple[TeamSpec, ClassLabel, int]]:
        return [
            (team, c.label, index)
            for team in spec.teams
            for c in spec.classes
            for index in range(team.counts.get(c.label, 0))
        ]

    def generate(self, spec: SynthSpec, root: Union[str, Path], overwrite: bool = False) -> GeneratedDataset:
        """
        Render every image under root/<team>/<class>/ and return the catalog.

        A non-empty root is refused unless overwrite is set, in which case it
        is removed first.
        """
        root = Path(root)
        if root.exists() and any(root.iterdir()):
            if not overwrite:
                raise ConfigError(f"synthetic dataset root {root} is not empty")
            shutil.rmtree(root)
        root.mkdir(parents=True, exist_ok=True)

        def render(job: Tuple[TeamSpec, ClassLabel, int]) -> Path:
            team, label, index = job
            rng = make_rng(spec.seed, "synth", team.name, label, str(index))
            payload = render_sample(spec.class_params(label), team.domain, rng, spec.image_size)
            path = root / team.name / label / f"{label}_{index:04d}.jpg"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(payload)
            return path

        jobs = self._jobs(spec)
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                written = list(pool.map(render, jobs))
        else:
            written = [render(job) for job in jobs]
        self.images_written = len(written)

        planted = self._plant_duplicates(spec, root, written)
        label_map = {fold_label(c.label): c.label for c in spec.classes}
        catalog = CatalogScanner(self.event_bus, self.threads).scan_dataset(root, label_map)
        logger.info(
            "generated %d images for %d teams (%d planted duplicate groups)",
            len(catalog), len(spec.teams), len(planted),
        )
        return GeneratedDataset(root, catalog, planted, spec.outlier_teams)

    def _plant_duplicates(self, spec: SynthSpec, root: Path, originals: List[Path]) -> List[List[str]]:
        """
        Copy planted_duplicates distinct originals into other teams' folders.

        Group sizes cycle through 2..7, capped by the team count.
        """
        if spec.planted_duplicates == 0:
            return []
        if spec.planted_duplicates > len(originals):
            raise ConfigError(f"cannot plant {spec.planted_duplicates} groups from {len(originals)} images")
        rng = make_rng(spec.seed, "planted")
        team_names = [t.name for t in spec.teams]
        sources = rng.choice(len(originals), size=spec.planted_duplicates, replace=False)
        groups = []
        for g, source_index in enumerate(sources):
            source = originals[int(source_index)]
            team, label = source.parent.parent.name, source.parent.name
            size = min(2 + g % 6, len(team_names))
            others = [t for t in team_names if t != team]
            targets = [others[int(i)] for i in rng.permutation(len(others))[: size - 1]]
            members = [source]
            for target in targets:
                copy = root / target / label / f"dup{g:04d}_{source.name}"
                copy.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(source, copy)
                members.append(copy)
            groups.append(sorted(image_id_for(p.relative_to(root).as_posix()) for p in members))
        self.images_written += sum(len(g) - 1 for g in groups)
        return groups

    def get_status(self) -> Dict[str, int]:
        """Get current status of the synthesizer."""
        return {"threads": self.threads, "images_written": self.images_written}


def generate(
    spec: SynthSpec, root: Union[str, Path], threads: int = 1, overwrite: bool = False
) -> GeneratedDataset:
    """Convenience wrapper around DatasetSynthesizer.generate."""
    return DatasetSynthesizer(threads=threads).generate(spec, root, overwrite)
