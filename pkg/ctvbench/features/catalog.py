"""
Dataset cataloguing: scan a <root>/<team>/<class>/<file> tree into image
records with normalized labels, capture metadata and perceptual hashes.
"""

import hashlib
import json
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from PIL import Image, UnidentifiedImageError

from ..core.errors import CatalogError, UnknownLabelError, ImageDecodeError
from ..core.events import EventBus, Event, WARNING
from ..core.models import (
    Catalog,
    ClassLabel,
    DEFAULT_CLASSES,
    ImageFormat,
    ImageRecord,
    PipelineWarning,
    TeamId,
)
from ..utils.logging import get_logger
from ..utils.validation import validate_team_name
from .phash import phash64

logger = get_logger(__name__)

DEFAULT_LABEL_MAP_PATH = Path(__file__).resolve().parent.parent / "data" / "label_map.json"

ACCEPTED_EXTENSIONS = {
    ".jpg": ImageFormat.JPEG,
    ".jpeg": ImageFormat.JPEG,
    ".png": ImageFormat.PNG,
    ".heic": ImageFormat.HEIC,
    ".heif": ImageFormat.HEIC,
    ".bmp": ImageFormat.BMP,
    ".tif": ImageFormat.TIFF,
    ".tiff": ImageFormat.TIFF,
}

HEIF_BRANDS = {b"heic", b"heix", b"hevc", b"hevx", b"heim", b"heis", b"mif1", b"msf1"}
EXIF_MODEL_TAG = 0x0110


@dataclass
class ImageMetadata:
    """Per-file metadata; the content-derived part of an ImageRecord."""

    format: ImageFormat
    width_px: int
    height_px: int
    file_size_bytes: int
    device: Optional[str]
    readable: bool


@dataclass
class DistributionTable:
    """Per-(team, class) image counts with row, column and grand totals."""

    teams: List[TeamId]
    classes: List[ClassLabel]
    counts: Dict[Tuple[TeamId, ClassLabel], int]

    def cell(self, team: TeamId, label: ClassLabel) -> int:
        return self.counts.get((team, label), 0)

    def team_total(self, team: TeamId) -> int:
        return sum(self.cell(team, label) for label in self.classes)

    def class_total(self, label: ClassLabel) -> int:
        return sum(self.cell(team, label) for team in self.teams)

    @property
    def grand_total(self) -> int:
        return sum(self.counts.values())

    def rows(self) -> List[List[Any]]:
        """Table body plus a Total row, for CSV emission."""
        body = [[team] + [self.cell(team, c) for c in self.classes] + [self.team_total(team)] for team in self.teams]
        body.append(["Total"] + [self.class_total(c) for c in self.classes] + [self.grand_total])
        return body


def fold_label(raw: str) -> str:
    """Canonical decomposition, drop combining marks, lowercase."""
    decomposed = unicodedata.normalize("NFD", raw.strip())
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch)).lower()


def load_label_map(path: Optional[Union[str, Path]] = None) -> Dict[str, ClassLabel]:
    """Load a raw->canonical label map; the shipped six-class map by default."""
    path = Path(path) if path is not None else DEFAULT_LABEL_MAP_PATH
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CatalogError(f"cannot load label map {path}: {exc}") from exc
    if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
        raise CatalogError(f"label map {path} must be a JSON object of strings")
    return {fold_label(k): v for k, v in raw.items()}


def normalize_class_label(raw: str, label_map: Mapping[str, ClassLabel]) -> ClassLabel:
    """Map a class folder name onto the canonical vocabulary."""
    folded = fold_label(raw)
    for key in (folded, raw):
        if key in label_map:
            return label_map[key]
    raise UnknownLabelError(raw)


def image_id_for(rel_path: str) -> str:
    """Content-independent id: SHA-1 hex digest of the NFC relative path."""
    return hashlib.sha1(unicodedata.normalize("NFC", rel_path).encode("utf-8")).hexdigest()


def sniff_format(head: bytes, suffix: str) -> ImageFormat:
    """Format from magic bytes, falling back to the file extension."""
    if head.startswith(b"\xff\xd8\xff"):
        return ImageFormat.JPEG
    if head.startswith(b"\x89PNG\r\n\x1a\n"):
        return ImageFormat.PNG
    if head.startswith(b"BM"):
        return ImageFormat.BMP
    if head.startswith(b"II*\x00") or head.startswith(b"MM\x00*"):
        return ImageFormat.TIFF
    if head[4:8] == b"ftyp" and head[8:12] in HEIF_BRANDS:
        return ImageFormat.HEIC
    return ACCEPTED_EXTENSIONS.get(suffix.lower(), ImageFormat.UNKNOWN)


def _read_device(img: Image.Image) -> Optional[str]:
    try:
        model = img.getexif().get(EXIF_MODEL_TAG)
    except Exception:  # malformed EXIF blocks are common in field data
        return None
    if isinstance(model, bytes):
        model = model.decode("utf-8", errors="replace")
    if not isinstance(model, str):
        return None
    model = model.replace("\x00", "").strip()
    return model or None


def extract_metadata(path: Union[str, Path]) -> ImageMetadata:
    """
    Extract format, dimensions, size and capture device from one file.

    Undecodable payloads come back with readable=False and 0x0 dimensions
    instead of raising.
    """
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(16)
    fmt = sniff_format(head, path.suffix)
    try:
        with Image.open(path) as img:
            device = _read_device(img)
            img.load()
            width, height = img.size
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        logger.debug("%s is not decodable: %s", path, exc)
        return ImageMetadata(fmt, 0, 0, size, None, False)
    return ImageMetadata(fmt, width, height, size, device, True)


def _catalog_file(root: Path, path: Path, team: TeamId, label: ClassLabel) -> ImageRecord:
    rel_path = path.relative_to(root).as_posix()
    meta = extract_metadata(path)
    phash = None
    readable = meta.readable
    if readable:
        try:
            with Image.open(path) as img:
                phash = phash64(img.convert("RGB"))
        except (UnidentifiedImageError, OSError, ValueError, ImageDecodeError):
            readable = False
    return ImageRecord(
        image_id=image_id_for(rel_path),
        team=team,
        label=label,
        rel_path=unicodedata.normalize("NFC", rel_path),
        format=meta.format,
        width_px=meta.width_px if readable else 0,
        height_px=meta.height_px if readable else 0,
        file_size_bytes=meta.file_size_bytes,
        device=meta.device if readable else None,
        phash=phash,
        readable=readable,
    )


def _visible_dirs(path: Path) -> List[Path]:
    return sorted(p for p in path.iterdir() if p.is_dir() and not p.name.startswith("."))


class CatalogScanner:
    """
    Builds catalogs from a team/class directory tree.

    Per-file extraction runs on a thread pool; the catalog is assembled and
    sorted afterwards, so the result does not depend on scheduling.
    """

    def __init__(self, event_bus: Optional[EventBus] = None, threads: int = 1):
        self.event_bus = event_bus or EventBus()
        self.threads = max(1, threads)
        self.files_scanned = 0
        self.unreadable = 0

    def discover(
        self, root: Path, label_map: Mapping[str, ClassLabel]
    ) -> List[Tuple[Path, TeamId, ClassLabel]]:
        """List candidate files with their team and canonical class."""
        unknown = []
        jobs = []
        for team_dir in _visible_dirs(root):
            team = team_dir.name
            if not validate_team_name(team):
                raise CatalogError(f"invalid team folder name {team!r}")
            for class_dir in _visible_dirs(team_dir):
                try:
                    label = normalize_class_label(class_dir.name, label_map)
                except UnknownLabelError:
                    unknown.append(f"{team}/{class_dir.name}")
                    continue
                for path in sorted(class_dir.iterdir()):
                    if path.is_file() and path.suffix.lower() in ACCEPTED_EXTENSIONS:
                        jobs.append((path, team, label))
                    elif path.is_file() and not path.name.startswith("."):
                        logger.debug("skipping %s: unsupported extension", path)
        if unknown:
            raise UnknownLabelError(", ".join(sorted(unknown)))
        return jobs

    def scan_dataset(self, root: Union[str, Path], label_map: Mapping[str, ClassLabel]) -> Catalog:
        """Scan root into a catalog; unreadable files are kept with readable=False."""
        root = Path(root)
        if not root.is_dir():
            raise CatalogError(f"dataset root {root} does not exist")
        jobs = self.discover(root, label_map)

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                records = list(pool.map(lambda job: _catalog_file(root, *job), jobs))
        else:
            records = [_catalog_file(root, *job) for job in jobs]

        catalog = Catalog(records)
        self.files_scanned = len(catalog)
        self.unreadable = 0
        for record in catalog:
            if not record.readable:
                self.unreadable += 1
                self._warn("unreadable_file", f"unreadable image {record.rel_path}", record.rel_path)
        logger.info(
            "catalogued %d files from %d teams (%d unreadable)",
            len(catalog), len(catalog.teams), self.unreadable,
        )
        return catalog

    def _warn(self, code: str, message: str, subject: str):
        logger.warning(message)
        warning = PipelineWarning(code=code, message=message, stage="catalog", subject=subject)
        self.event_bus.publish(Event(WARNING, data=warning, source="CatalogScanner"))

    def get_status(self) -> Dict[str, Any]:
        """Get current status of the scanner."""
        return {"threads": self.threads, "files_scanned": self.files_scanned, "unreadable": self.unreadable}


def scan_dataset(
    root: Union[str, Path],
    label_map: Mapping[str, ClassLabel],
    threads: int = 1,
    event_bus: Optional[EventBus] = None,
) -> Catalog:
    """Convenience wrapper around CatalogScanner.scan_dataset."""
    return CatalogScanner(event_bus, threads).scan_dataset(root, label_map)


def distribution_table(catalog: Catalog, classes: Optional[Sequence[ClassLabel]] = None) -> DistributionTable:
    """Per-(team, class) counts; classes default to the catalog's, else the six defaults."""
    counts = {cell: len(ids) for cell, ids in catalog.cell_index.items()}
    if classes is None:
        classes = catalog.classes or list(DEFAULT_CLASSES)
    return DistributionTable(teams=catalog.teams, classes=sorted(classes), counts=counts)


def format_census(catalog: Catalog) -> Dict[str, Tuple[int, float]]:
    """Count and percentage share per file format."""
    total = len(catalog)
    counts: Dict[str, int] = {}
    for record in catalog:
        counts[record.format.value] = counts.get(record.format.value, 0) + 1
    return {fmt: (n, 100.0 * n / total) for fmt, n in sorted(counts.items())}


def device_census(catalog: Catalog) -> List[Tuple[str, int]]:
    """Images per capture device, most common first; missing devices count as Unknown."""
    counts: Dict[str, int] = {}
    for record in catalog:
        name = record.device if record.device is not None else "Unknown"
        counts[name] = counts.get(name, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def resolution_summary(catalog: Catalog) -> Dict[str, Any]:
    readable = [r for r in catalog if r.readable]
    summary: Dict[str, Any] = {
        "readable": len(readable),
        "unreadable": len(catalog) - len(readable),
        "total_bytes": sum(r.file_size_bytes for r in catalog),
    }
    if readable:
        summary.update(
            mean_width=sum(r.width_px for r in readable) / len(readable),
            mean_height=sum(r.height_px for r in readable) / len(readable),
            min_side=min(min(r.width_px, r.height_px) for r in readable),
            max_side=max(max(r.width_px, r.height_px) for r in readable),
        )
    return summary


def catalog_summary(catalog: Catalog) -> Dict[str, Any]:
    """Census block written next to the catalog."""
    return {
        "records": len(catalog),
        "teams": len(catalog.teams),
        "classes": catalog.classes,
        "formats": {
            fmt: {"count": n, "share_percent": round(share, 2)} for fmt, (n, share) in format_census(catalog).items()
        },
        "devices": [{"device": name, "count": n} for name, n in device_census(catalog)],
        "resolution": resolution_summary(catalog),
    }
