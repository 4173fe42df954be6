"""
Tests for the square normalized derivative.
"""

import json

import numpy as np
import pytest
from PIL import Image

from ctvbench.core.events import WARNING
from ctvbench.core.models import Catalog
from ctvbench.features.catalog import load_label_map, scan_dataset
from ctvbench.features.normalize import (
    DatasetNormalizer,
    output_path,
    process_dataset,
    resize_center_crop,
    scaled_size,
)

from conftest import make_record, noise_image, write_image


@pytest.mark.parametrize(
    "size,expected",
    [((3000, 4000), (336, 448)), ((500, 500), (336, 336)), ((200, 300), (336, 504)), ((4000, 3000), (448, 336))],
)
def test_scaled_size(size, expected):
    """Test the pre-crop size keeps the shorter side at the target."""
    assert scaled_size(*size, 336) == expected


def test_resize_center_crop_shape_and_dtype():
    """Test outputs are target x target uint8."""
    out = resize_center_crop(noise_image(1, 90, 50), 64)
    assert out.shape == (64, 64, 3)
    assert out.dtype == np.uint8


def test_center_crop_offset():
    """Test the crop window is centred with a floored offset."""
    # 10 x 30 image with a distinct value per column: scaling is the identity at target 10
    image = np.tile(np.arange(30, dtype=np.uint8)[None, :, None] * 8, (10, 1, 3))
    out = resize_center_crop(image, 10)
    assert out[0, 0, 0] == 10 * 8
    assert out[0, -1, 0] == 19 * 8


def test_mixed_aspect_sample(tmp_path):
    """Test 50 mixed-aspect images all come out 336x336 with aspect kept before crop."""
    rng = np.random.default_rng(42)
    records = []
    for i in range(50):
        w, h = int(rng.integers(40, 160)), int(rng.integers(40, 160))
        rel = f"t{i % 2}/oak/{i}.png"
        write_image(tmp_path / "src" / rel, noise_image(i, w, h))
        size = (tmp_path / "src" / rel).stat().st_size
        records.append(make_record(rel, team=f"t{i % 2}", width=w, height=h, size=size))
        sw, sh = scaled_size(w, h, 336)
        short, long = min(w, h), max(w, h)
        assert min(sw, sh) == 336
        assert abs(max(sw, sh) - long * 336 / short) <= 1.0
    catalog = Catalog(records)
    report = process_dataset(catalog, tmp_path / "src", tmp_path / "out")
    assert report.images_processed == 50
    assert report.failures == []
    first = {}
    for record in catalog:
        path = output_path(tmp_path / "out", record)
        with Image.open(path) as img:
            assert img.size == (336, 336)
        first[record.image_id] = path.read_bytes()
    process_dataset(catalog, tmp_path / "src", tmp_path / "out", threads=4)
    for record in catalog:
        assert output_path(tmp_path / "out", record).read_bytes() == first[record.image_id]


def test_failures_are_collected(tmp_path, event_bus):
    """Test unreadable and undecodable inputs become failure entries."""
    good = make_record("a/oak/good.png")
    write_image(tmp_path / "a" / "oak" / "good.png", noise_image(3))
    broken = make_record("a/oak/broken.png")
    (tmp_path / "a" / "oak" / "broken.png").write_bytes(b"garbage")
    unreadable = make_record("a/oak/gone.png", readable=False)
    warnings = []
    event_bus.subscribe(WARNING, warnings.append)
    normalizer = DatasetNormalizer(event_bus)
    report = normalizer.process_dataset(Catalog([good, broken, unreadable]), tmp_path, tmp_path / "out", 32, 90)
    assert report.images_processed == 1
    assert sorted(i for i, _ in report.failures) == sorted([broken.image_id, unreadable.image_id])
    assert report.images_processed + len(report.failures) == 3
    assert len(warnings) == 2
    assert normalizer.get_status()["failures"] == 2


def test_output_smaller_than_large_inputs(tmp_path):
    """Test high-resolution inputs shrink on disk."""
    rng = np.random.default_rng(0)
    src = tmp_path / "src"
    for i in range(2):
        write_image(src / "a" / "oak" / f"{i}.png", rng.integers(0, 256, (900, 1200, 3), dtype=np.uint8))
    catalog = scan_dataset(src, load_label_map())
    report = process_dataset(catalog, src, tmp_path / "out")
    assert report.output_bytes < report.input_bytes
    assert report.reduction_percent > 0
    assert json.loads(json.dumps(report.to_dict()))["images_processed"] == 2


def test_empty_catalog(tmp_path):
    """Test an empty catalog yields a zero report."""
    report = process_dataset(Catalog([]), tmp_path, tmp_path / "out")
    assert report.images_processed == 0
    assert report.input_bytes == report.output_bytes == 0
    assert report.reduction_percent == 0.0


def test_rejects_bad_quality(tmp_path):
    """Test JPEG quality outside [50, 100] is refused."""
    with pytest.raises(ValueError):
        process_dataset(Catalog([]), tmp_path, tmp_path / "out", quality=30)
