"""
ctvbench - Cross-Team Validation benchmark harness

Curates multi-team image datasets (cataloguing, perceptual-hash
deduplication, normalization), builds TOTO and LOTO split manifests, trains a
reference classifier and reports cross-team generalization.
"""

__version__ = "0.1.0"
__author__ = "ctvbench maintainers"

from .core.pipeline import CTVPipeline
from .core.config import PipelineConfig
from .core.events import Event, EventBus
from .core.models import Catalog, ImageRecord, RunResult, SplitManifest

__all__ = [
    "CTVPipeline",
    "PipelineConfig",
    "Event",
    "EventBus",
    "Catalog",
    "ImageRecord",
    "RunResult",
    "SplitManifest",
]
