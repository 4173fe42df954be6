"""
Tests for ctvbench core functionality: events, models, configuration and artifact IO.
"""

import json
import logging

import pytest

from ctvbench import CTVPipeline, Event, EventBus
from ctvbench.core.artifacts import (
    parse_prediction_file_name,
    read_catalog,
    read_json,
    read_model,
    read_predictions,
    write_catalog,
    write_json,
    write_predictions,
)
from ctvbench.core.config import PipelineConfig, TrainConfig
from ctvbench.core.errors import ArtifactError, CatalogError, ConfigError
from ctvbench.core.events import WARNING
from ctvbench.core.models import (
    Catalog,
    CrossTeamMatrix,
    ManifestRef,
    Partition,
    Prediction,
    PredictionSet,
    Protocol,
    RunResult,
    SplitManifest,
    hash_from_hex,
    hash_to_hex,
    safe_name,
)
from ctvbench.utils.logging import LOG_ENV_VAR, level_from_env
from ctvbench.utils.time_utils import format_duration
from ctvbench.utils.validation import validate_open_fraction, validate_team_name

from conftest import make_record


def test_pipeline_creation(tmp_path):
    """Test the pipeline can be created with default configuration."""
    pipeline = CTVPipeline(PipelineConfig(paths={"workdir": tmp_path}))
    assert pipeline.event_bus is not None
    assert pipeline.workdir == tmp_path
    assert pipeline.get_warnings() == []


def test_event_bus():
    """Test event bus functionality."""
    event_bus = EventBus()
    received_events = []

    event_bus.subscribe("test_event", received_events.append)
    event_bus.publish(Event("test_event", data="test_data"))

    assert len(received_events) == 1
    assert received_events[0].event_type == "test_event"
    assert received_events[0].data == "test_data"

    event_bus.unsubscribe("test_event", received_events.append)
    event_bus.publish(Event("test_event", data="again"))
    assert len(received_events) == 1
    assert len(event_bus.get_event_history("test_event")) == 2


def test_broken_subscriber_does_not_block_others():
    """Test one failing callback leaves the remaining subscribers served."""
    event_bus = EventBus()
    received = []

    def broken(event):
        raise RuntimeError("boom")

    event_bus.subscribe(WARNING, broken)
    event_bus.subscribe(WARNING, received.append)
    event_bus.publish(Event(WARNING, data="x"))
    assert len(received) == 1
    event_bus.clear_history()
    assert event_bus.get_event_history() == []


def test_hash_hex_roundtrip():
    """Test hashes serialize as 16 lowercase hex characters."""
    assert hash_to_hex(0x8000000000000000) == "8000000000000000"
    assert hash_to_hex(10) == "000000000000000a"
    assert hash_from_hex("000000000000000a") == 10
    assert hash_to_hex(None) is None


def test_safe_name():
    """Test team names become file-name safe."""
    assert safe_name("SMART AGRICULTURES") == "SMART_AGRICULTURES"
    assert safe_name("AI-4o") == "AI-4o"


def test_image_record_invariants():
    """Test unreadable records must be 0x0 without a hash, readable ones sized."""
    record = make_record("a/oak/1.jpg", readable=False)
    assert record.width_px == 0 and record.phash is None
    with pytest.raises(CatalogError):
        make_record("a/oak/2.jpg", width=0)
    assert make_record("a/oak/3.jpg", width=4, height=5).pixels == 20


def test_catalog_indexes_and_duplicates():
    """Test records sort by path, indexes fill, and duplicate ids are refused."""
    catalog = Catalog([make_record("b/oak/1.jpg", team="b"), make_record("a/ash/1.jpg", team="a", label="ash")])
    assert [r.rel_path for r in catalog] == ["a/ash/1.jpg", "b/oak/1.jpg"]
    assert catalog.teams == ["a", "b"]
    assert catalog.classes == ["ash", "oak"]
    assert list(catalog.cell_index) == [("a", "ash"), ("b", "oak")]
    with pytest.raises(CatalogError):
        Catalog([make_record("a/oak/1.jpg"), make_record("a/oak/1.jpg")])
    with pytest.raises(CatalogError):
        catalog.get("nope")


def test_prediction_set_rejects_duplicates():
    """Test an image may be predicted once per set."""
    ref = ManifestRef(Protocol.TOTO, "a", Partition.VAL)
    with pytest.raises(ArtifactError):
        PredictionSet(ref, [Prediction("x", "oak", "oak"), Prediction("x", "oak", "ash")])


def test_prediction_set_checked_against_manifest():
    """Test predictions must stay inside their partition and carry the catalog label."""
    own = make_record("a/oak/1.jpg", team="a")
    other = make_record("b/ash/1.jpg", team="b", label="ash")
    catalog = Catalog([own, other])
    manifest = SplitManifest(Protocol.TOTO, "a", [], [own.image_id], [other.image_id], 42)
    ref = ManifestRef(Protocol.TOTO, "a", Partition.TEST)

    PredictionSet(ref, [Prediction(other.image_id, "ash", "oak")]).check_against(manifest, catalog)
    with pytest.raises(ArtifactError, match="not in the TOTO a test partition"):
        PredictionSet(ref, [Prediction(own.image_id, "oak", "oak")]).check_against(manifest, catalog)
    with pytest.raises(ArtifactError, match="does not match the catalog"):
        PredictionSet(ref, [Prediction(other.image_id, "oak", "oak")]).check_against(manifest, catalog)
    loto = SplitManifest(Protocol.LOTO, "a", [], [], [own.image_id], 42)
    with pytest.raises(ArtifactError, match="manifest is for"):
        PredictionSet(ref, []).check_against(loto, catalog)


def test_run_result_and_matrix_ranges():
    """Test accuracies outside [0, 1] are refused."""
    with pytest.raises(ArtifactError):
        RunResult(Protocol.TOTO, "a", 1.2, {}, 0.5, 0.5)
    with pytest.raises(ArtifactError):
        CrossTeamMatrix(["a", "b"], [[0.5, 0.5]])
    result = RunResult(Protocol.LOTO, "a", 0.98, {"a": 0.9}, 0.9, 0.9)
    assert RunResult.from_dict(json.loads(json.dumps(result.to_dict()))) == result
    broken_rows = [
        {"protocol": "TOTO"},
        {**result.to_dict(), "val_acc": "high"},
        {**result.to_dict(), "protocol": "kfold"},
    ]
    for broken in broken_rows:
        with pytest.raises(ArtifactError, match="malformed run result"):
            RunResult.from_dict(broken)


def test_manifest_file_name_and_dict():
    """Test manifest naming and dict round trip."""
    manifest = SplitManifest(Protocol.LOTO, "The Neural Ninjas", ["a"], ["b"], ["c"], 42)
    assert manifest.file_name == "loto_The_Neural_Ninjas.json"
    assert SplitManifest.from_dict(manifest.to_dict()) == manifest
    with pytest.raises(ArtifactError):
        SplitManifest.from_dict({"protocol": "TOTO"})


def test_config_defaults():
    """Test defaults follow the benchmark settings."""
    config = PipelineConfig()
    assert config.normalize.target == 336
    assert config.normalize.quality == 95
    assert config.split.train_frac == 0.7
    assert config.split.seed == 42
    assert config.train.epochs == 20
    assert config.train.dropout == 0.3


def test_config_validation():
    """Test invalid training settings are rejected."""
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr0=1e-7)
    with pytest.raises(ValueError):
        PipelineConfig(split={"train_frac": 1.5})


def test_config_from_file(tmp_path):
    """Test relative paths resolve against the config file directory."""
    path = tmp_path / "cfg" / "config.json"
    path.parent.mkdir()
    path.write_text(json.dumps({"paths": {"workdir": "run"}, "split": {"seed": 7}}), encoding="utf-8")
    config = PipelineConfig.from_file(path)
    assert config.paths.workdir == tmp_path / "cfg" / "run"
    assert config.paths.reports_dir == tmp_path / "cfg" / "run" / "reports"
    assert config.split.seed == 7


def test_config_errors(tmp_path):
    """Test unreadable, malformed and invalid config files."""
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(bad)
    bad.write_text(json.dumps({"colour": "blue"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(bad)


def test_config_overrides():
    """Test --seed drives both seeds and --threads is validated."""
    config = PipelineConfig().with_overrides(seed=3, threads=4)
    assert (config.split.seed, config.train.seed, config.threads) == (3, 3, 4)
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(threads=0)


def test_catalog_artifact_roundtrip(tmp_path):
    """Test catalogs survive JSONL and rewrite byte-identically."""
    catalog = Catalog([make_record("b/oak/1.jpg", team="b", phash=5, device="iPhone 12"),
                       make_record("a/oak/1.jpg", readable=False)])
    first = write_catalog(tmp_path / "one.jsonl", catalog)
    restored = read_catalog(first)
    assert restored.records == catalog.records
    second = write_catalog(tmp_path / "two.jsonl", restored)
    assert first.read_bytes() == second.read_bytes()


def test_prediction_artifacts(tmp_path):
    """Test prediction CSV naming, sorting and parsing."""
    ref = ManifestRef(Protocol.TOTO, "SMART AGRICULTURES", Partition.TEST)
    preds = PredictionSet(ref, [Prediction("z", "oak", "ash"), Prediction("a", "ash", "ash")])
    path = write_predictions(tmp_path, preds)
    assert path.name == "toto_SMART_AGRICULTURES_test.csv"
    assert path.read_text().splitlines()[1] == "a,ash,ash"
    assert [p.image_id for p in read_predictions(path, ref).items] == ["a", "z"]
    assert parse_prediction_file_name(path.name) == (Protocol.TOTO, "SMART_AGRICULTURES", Partition.TEST)
    with pytest.raises(ArtifactError):
        parse_prediction_file_name("kfold_a_train.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("id,label\n", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_predictions(bad, ref)


def test_json_artifacts(tmp_path):
    """Test missing inputs, malformed JSON and non-object model files."""
    with pytest.raises(ArtifactError):
        read_json(tmp_path / "absent.json")
    (tmp_path / "broken.json").write_text("[", encoding="utf-8")
    with pytest.raises(ArtifactError):
        read_json(tmp_path / "broken.json")
    write_json(tmp_path / "model.json", [1, 2])
    with pytest.raises(ArtifactError):
        read_model(tmp_path / "model.json")


def test_log_level_from_env(monkeypatch):
    """Test the log variable accepts names and numbers."""
    monkeypatch.setenv(LOG_ENV_VAR, "debug")
    assert level_from_env() == logging.DEBUG
    monkeypatch.setenv(LOG_ENV_VAR, "30")
    assert level_from_env() == 30
    monkeypatch.setenv(LOG_ENV_VAR, "chatty")
    assert level_from_env() == logging.INFO
    monkeypatch.delenv(LOG_ENV_VAR)
    assert level_from_env(logging.ERROR) == logging.ERROR


def test_utilities():
    """Test duration formatting and validators."""
    assert format_duration(12.34) == "12.3s"
    assert format_duration(90) == "1.5m"
    assert format_duration(7200) == "2.0h"
    assert validate_open_fraction(0.7)
    assert not validate_open_fraction(1.0)
    assert validate_team_name("AI-4o")
    assert not validate_team_name("a/b")
