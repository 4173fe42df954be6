"""
Uniform square derivative of the dataset: shorter side scaled to the target,
centre crop, JPEG re-encode at a fixed quality.
"""

import io
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from PIL import Image

from ..core.errors import ImageDecodeError
from ..core.events import EventBus, Event, WARNING
from ..core.models import Catalog, ImageRecord, NormalizeReport, PipelineWarning
from ..utils.logging import get_logger
from ..utils.validation import validate_quality
from .phash import ImageLike, load_rgb, resample_bicubic, to_array

logger = get_logger(__name__)

DEFAULT_TARGET = 336
DEFAULT_QUALITY = 95


def scaled_size(width: int, height: int, target: int) -> Tuple[int, int]:
    """
    Pre-crop size: shorter side becomes exactly target, longer side keeps the
    aspect ratio (nearest integer, never below target).
    """
    if width == height:
        return target, target
    short, long = min(width, height), max(width, height)
    scaled_long = max(target, int(math.floor(long * target / short + 0.5)))
    return (target, scaled_long) if width < height else (scaled_long, target)


def resize_center_crop(image: ImageLike, target: int = DEFAULT_TARGET) -> np.ndarray:
    """Resize and centre-crop to target x target; returns a uint8 array."""
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    arr = to_array(image)
    height, width = arr.shape[:2]
    scaled_w, scaled_h = scaled_size(width, height, target)
    scaled = resample_bicubic(arr, scaled_w, scaled_h)
    top = (scaled_h - target) // 2
    left = (scaled_w - target) // 2
    cropped = scaled[top:top + target, left:left + target]
    return np.clip(np.floor(cropped + 0.5), 0, 255).astype(np.uint8)


def encode_jpeg(pixels: np.ndarray, quality: int) -> bytes:
    """Encode with fixed settings and no metadata so output bytes are reproducible."""
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="JPEG", quality=quality, optimize=False)
    return buffer.getvalue()


def output_path(out_dir: Path, record: ImageRecord) -> Path:
    return out_dir / record.team / record.label / f"{record.image_id}.jpg"


class DatasetNormalizer:
    """Writes the normalized dataset and reports storage totals and failures."""

    def __init__(self, event_bus: Optional[EventBus] = None, threads: int = 1):
        self.event_bus = event_bus or EventBus()
        self.threads = max(1, threads)
        self.last_report: Optional[NormalizeReport] = None

    def _process_one(
        self, record: ImageRecord, source_root: Path, out_dir: Path, target: int, quality: int
    ) -> Tuple[str, Optional[int], Optional[str]]:
        if not record.readable:
            return record.image_id, None, "unreadable source image"
        try:
            pixels = resize_center_crop(load_rgb(source_root / record.rel_path), target)
            payload = encode_jpeg(pixels, quality)
            path = output_path(out_dir, record)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(payload)
        except ImageDecodeError as exc:
            return record.image_id, None, f"decode failed: {exc}"
        except OSError as exc:
            return record.image_id, None, f"write failed: {exc}"
        return record.image_id, len(payload), None

    def process_dataset(
        self,
        catalog: Catalog,
        source_root: Union[str, Path],
        out_dir: Union[str, Path],
        target: int = DEFAULT_TARGET,
        quality: int = DEFAULT_QUALITY,
    ) -> NormalizeReport:
        """Normalize every record; failures are collected, never raised."""
        if not validate_quality(quality):
            raise ValueError(f"quality must lie in [50, 100], got {quality}")
        source_root, out_dir = Path(source_root), Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        def task(record: ImageRecord):
            return self._process_one(record, source_root, out_dir, target, quality)

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                outcomes = list(pool.map(task, catalog.records))
        else:
            outcomes = [task(r) for r in catalog.records]

        report = NormalizeReport()
        for image_id, size, reason in sorted(outcomes, key=lambda o: o[0]):
            if reason is not None:
                report.failures.append((image_id, reason))
                self._warn(image_id, reason)
                continue
            report.images_processed += 1
            report.input_bytes += catalog.get(image_id).file_size_bytes
            report.output_bytes += size
        logger.info(
            "normalized %d images to %dx%d (%d failures, %.1f%% smaller)",
            report.images_processed, target, target, len(report.failures), report.reduction_percent,
        )
        self.last_report = report
        return report

    def _warn(self, image_id: str, reason: str):
        logger.warning("normalize failed for %s: %s", image_id, reason)
        warning = PipelineWarning(code="normalize_failure", message=reason, stage="normalize", subject=image_id)
        self.event_bus.publish(Event(WARNING, data=warning, source="DatasetNormalizer"))

    def get_status(self) -> Dict[str, Any]:
        """Get current status of the normalizer."""
        report = self.last_report
        return {
            "threads": self.threads,
            "images_processed": report.images_processed if report else 0,
            "failures": len(report.failures) if report else 0,
        }


def process_dataset(
    catalog: Catalog,
    source_root: Union[str, Path],
    out_dir: Union[str, Path],
    target: int = DEFAULT_TARGET,
    quality: int = DEFAULT_QUALITY,
    threads: int = 1,
) -> NormalizeReport:
    """Convenience wrapper around DatasetNormalizer.process_dataset."""
    return DatasetNormalizer(threads=threads).process_dataset(catalog, source_root, out_dir, target, quality)
