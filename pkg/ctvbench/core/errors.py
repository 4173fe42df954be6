"""
Exception hierarchy for ctvbench.

Everything raised on purpose derives from CTVBenchError so the CLI can turn it
into exit code 1. Argument-shaped failures also derive from ValueError.
"""

from typing import Iterable, List


class CTVBenchError(Exception):
    """Base class for all ctvbench errors."""


class ConfigError(CTVBenchError, ValueError):
    """Invalid or unreadable pipeline configuration."""


class ArtifactError(CTVBenchError):
    """A stage input artifact is missing or malformed."""


class CatalogError(CTVBenchError):
    """Dataset tree cannot be catalogued."""


class UnknownLabelError(CatalogError, ValueError):
    """A class folder has no entry in the label map."""

    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"unknown class label: {raw!r} has no label_map entry")


class ImageDecodeError(CTVBenchError, ValueError):
    """Image payload cannot be decoded."""


class HashMissingError(CTVBenchError):
    """Readable records lack a perceptual hash."""

    def __init__(self, image_ids: Iterable[str]):
        self.image_ids: List[str] = sorted(image_ids)
        shown = ", ".join(self.image_ids[:10])
        more = f" (+{len(self.image_ids) - 10} more)" if len(self.image_ids) > 10 else ""
        super().__init__(f"records missing perceptual hash: {shown}{more}")


class DuplicateGroupError(CTVBenchError):
    """Duplicate groups overlap or do not contain their representative."""


class DedupRequiredError(CTVBenchError):
    """Splits were requested on a catalog that still holds cross-team duplicates."""


class SplitError(CTVBenchError, ValueError):
    """Split generation cannot proceed."""


class MetricError(CTVBenchError, ValueError):
    """A metric is undefined for the given inputs."""


class TrainingError(CTVBenchError, ValueError):
    """Reference classifier cannot be trained or evaluated."""
