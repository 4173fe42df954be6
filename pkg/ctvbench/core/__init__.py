"""
Core pipeline: data models, events, errors, configuration and artifact IO.
"""

from .pipeline import CTVPipeline, STAGES
from .config import PipelineConfig, TrainConfig
from .events import Event, EventBus
from .errors import CTVBenchError
from .models import (
    Catalog,
    CrossTeamMatrix,
    ImageRecord,
    PipelineWarning,
    PredictionSet,
    Protocol,
    RunResult,
    SplitManifest,
)

__all__ = [
    "CTVPipeline",
    "STAGES",
    "PipelineConfig",
    "TrainConfig",
    "Event",
    "EventBus",
    "CTVBenchError",
    "Catalog",
    "CrossTeamMatrix",
    "ImageRecord",
    "PipelineWarning",
    "PredictionSet",
    "Protocol",
    "RunResult",
    "SplitManifest",
]
