"""
Test configuration and utilities.
"""

from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pytest
from PIL import Image

from ctvbench.core.events import EventBus
from ctvbench.core.models import Catalog, ImageFormat, ImageRecord
from ctvbench.features.catalog import image_id_for
from ctvbench.features.metrics import load_reference_table


def noise_image(seed: int, width: int = 48, height: int = 40) -> np.ndarray:
    """Smooth random RGB image; distinct seeds give distinct perceptual hashes."""
    rng = np.random.default_rng(seed)
    coarse = rng.random((6, 6, 3)) * 255.0
    rows = np.linspace(0, 5, height)
    cols = np.linspace(0, 5, width)
    r0 = np.floor(rows).astype(int).clip(0, 4)
    c0 = np.floor(cols).astype(int).clip(0, 4)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]
    top = coarse[r0][:, c0] * (1 - fc) + coarse[r0][:, c0 + 1] * fc
    bottom = coarse[r0 + 1][:, c0] * (1 - fc) + coarse[r0 + 1][:, c0 + 1] * fc
    return np.clip(top * (1 - fr) + bottom * fr, 0, 255).astype(np.uint8)


def write_image(path: Path, pixels: np.ndarray, fmt: str = "PNG", **options) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format=fmt, **options)
    return path


def make_record(
    rel_path: str,
    team: str = "alpha",
    label: str = "oak",
    size: int = 1000,
    width: int = 100,
    height: int = 100,
    device: Optional[str] = None,
    phash: Optional[int] = 1,
    readable: bool = True,
) -> ImageRecord:
    """Catalog record without a file behind it."""
    return ImageRecord(
        image_id=image_id_for(rel_path),
        team=team,
        label=label,
        rel_path=rel_path,
        format=ImageFormat.JPEG,
        width_px=width if readable else 0,
        height_px=height if readable else 0,
        file_size_bytes=size,
        device=device,
        phash=phash if readable else None,
        readable=readable,
    )


@pytest.fixture
def event_bus():
    """Create an event bus for testing."""
    return EventBus()


@pytest.fixture
def tiny_dataset(tmp_path) -> Path:
    """Three teams x two classes x three PNGs, French folder names for one team."""
    root = tmp_path / "dataset"
    folders: Dict[str, Dict[str, str]] = {
        "alpha": {"oak": "oak", "ash": "ash"},
        "beta": {"oak": "Chênes", "ash": "Frênes"},
        "gamma": {"oak": "oak", "ash": "ash"},
    }
    seed = 0
    for team, classes in folders.items():
        for folder in classes.values():
            for i in range(3):
                seed += 1
                write_image(root / team / folder / f"img_{i}.png", noise_image(seed))
    return root


@pytest.fixture
def grid_catalog() -> Catalog:
    """Four teams x three classes x five records with distinct hashes."""
    records = []
    value = 1
    for team in ("t1", "t2", "t3", "t4"):
        for label in ("ash", "carob", "oak"):
            for i in range(5):
                records.append(make_record(f"{team}/{label}/{i}.jpg", team=team, label=label, phash=value))
                value += 1
    return Catalog(records)


@pytest.fixture(scope="session")
def toto_reference():
    return load_reference_table("toto")


@pytest.fixture(scope="session")
def loto_reference():
    return load_reference_table("loto")
