"""
Reading and writing of stage artifacts.

All writers are deterministic: sorted keys, fixed float formatting where text
is involved, "\n" line endings, no timestamps.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

from .errors import ArtifactError
from .models import (
    Catalog,
    DedupResult,
    ImageRecord,
    ManifestRef,
    Partition,
    Prediction,
    PredictionSet,
    Protocol,
    SplitManifest,
    hash_to_hex,
    safe_name,
)

PathLike = Union[str, Path]


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise ArtifactError(f"missing input artifact: {path}")
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    path = _ensure_parent(Path(path))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


def read_json(path: PathLike) -> Any:
    path = _require(Path(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path} is not valid JSON: {exc}") from exc


def write_catalog(path: PathLike, catalog: Catalog) -> Path:
    """Write one JSON object per record, sorted by rel_path."""
    path = _ensure_parent(Path(path))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in catalog.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")
    return path


def read_catalog(path: PathLike) -> Catalog:
    path = _require(Path(path))
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(ImageRecord.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ArtifactError(f"{path}:{lineno}: {exc}") from exc
    return Catalog(records)


def write_manifest(directory: PathLike, manifest: SplitManifest) -> Path:
    return write_json(Path(directory) / manifest.file_name, manifest.to_dict())


def read_manifest(path: PathLike) -> SplitManifest:
    return SplitManifest.from_dict(read_json(path))


def read_manifests(directory: PathLike) -> List[SplitManifest]:
    directory = _require(Path(directory))
    manifests = [read_manifest(p) for p in sorted(directory.glob("*.json"))]
    return sorted(manifests, key=lambda m: (m.protocol.value, m.focal_team))


def prediction_file_name(ref: ManifestRef) -> str:
    return f"{ref.protocol.value.lower()}_{safe_name(ref.focal_team)}_{ref.partition.value}.csv"


def write_predictions(directory: PathLike, predictions: PredictionSet) -> Path:
    path = _ensure_parent(Path(directory) / prediction_file_name(predictions.manifest_ref))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "true_label", "predicted_label"])
        for item in sorted(predictions.items, key=lambda p: p.image_id):
            writer.writerow([item.image_id, item.true, item.predicted])
    return path


def read_predictions(path: PathLike, ref: ManifestRef) -> PredictionSet:
    path = _require(Path(path))
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"image_id", "true_label", "predicted_label"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise ArtifactError(f"{path}: header must be image_id,true_label,predicted_label")
        items = [Prediction(row["image_id"], row["true_label"], row["predicted_label"]) for row in reader]
    return PredictionSet(ref, items)


def write_dedup_report(path: PathLike, result: DedupResult) -> Path:
    """One row per removed record: hash, kept_id, removed_id, reason_level."""
    path = _ensure_parent(Path(path))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["hash", "kept_id", "removed_id", "reason_level"])
        for group in result.groups:
            for member in group.member_ids:
                if member == group.representative_id:
                    continue
                writer.writerow(
                    [hash_to_hex(group.hash), group.representative_id, member, result.removal_levels[member]]
                )
    return path


def write_rows_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = _ensure_parent(Path(path))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(list(row))
    return path


def read_rows_csv(path: PathLike) -> List[Dict[str, str]]:
    path = _require(Path(path))
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def parse_prediction_file_name(name: str):
    """Split '<protocol>_<team>_<partition>.csv' into its parts."""
    stem = name[: -len(".csv")] if name.endswith(".csv") else name
    protocol, _, rest = stem.partition("_")
    team, _, partition = rest.rpartition("_")
    try:
        return Protocol(protocol.upper()), team, Partition(partition)
    except ValueError as exc:
        raise ArtifactError(f"unrecognised prediction file name {name!r}") from exc


def write_model(path: PathLike, payload: Dict[str, Any]) -> Path:
    """Serialized classifier (weights, config, feature spec version)."""
    return write_json(path, payload)


def read_model(path: PathLike) -> Dict[str, Any]:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise ArtifactError(f"{path}: model file must hold a JSON object")
    return payload
