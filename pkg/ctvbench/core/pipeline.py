"""
CTVPipeline: runs the curation and evaluation stages over a work directory.

Stages hand off through files only, so any stage can be rerun on its own and
an external trainer can replace `train` by dropping prediction CSVs where
`eval` looks for them.
"""

from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

from .artifacts import (
    parse_prediction_file_name,
    read_catalog,
    read_json,
    read_manifest,
    read_manifests,
    read_predictions,
    read_rows_csv,
    write_catalog,
    write_dedup_report,
    write_json,
    write_manifest,
    write_model,
    write_predictions,
    write_rows_csv,
)
from .config import PipelineConfig
from .errors import ArtifactError
from .events import STAGE_COMPLETED, STAGE_STARTED, WARNING, Event, EventBus
from .models import Catalog, ImageRecord, ManifestRef, Partition, PipelineWarning, Protocol, RunResult, safe_name
from ..features.baseline import FeatureExtractor, FeatureStore, LearningCurve, train
from ..features.catalog import CatalogScanner, catalog_summary, distribution_table, load_label_map
from ..features.dedup import apply_dedup
from ..features.metrics import build_matrix, compare_protocols, run_result
from ..features.normalize import DatasetNormalizer, output_path
from ..features.report import (
    emit_comparison,
    emit_curves,
    emit_distribution_table,
    emit_matrix_csv,
    emit_matrix_svg,
    emit_results_table,
)
from ..features.splits import SplitGenerator
from ..features.synthgen import DatasetSynthesizer, SynthSpec, default_spec
from ..utils.logging import get_logger
from ..utils.time_utils import log_duration

logger = get_logger(__name__)

STAGES = ("synth", "catalog", "dedup", "normalize", "split", "train", "eval", "report")


class CTVPipeline:
    """
    Orchestrates every stage of the benchmark.

    Owns the event bus shared by the stage components and collects the data
    warnings they publish.
    """

    def __init__(self, config: Optional[PipelineConfig] = None, protocols: Optional[Sequence[Protocol]] = None):
        self.config = config or PipelineConfig()
        if protocols is None:
            protocols = [Protocol(p.upper()) for p in self.config.split.protocols]
        self.protocols: List[Protocol] = sorted(set(protocols), key=lambda p: p.value, reverse=True)
        self.event_bus = EventBus()
        threads = self.config.threads

        self.synthesizer = DatasetSynthesizer(self.event_bus, threads)
        self.scanner = CatalogScanner(self.event_bus, threads)
        self.normalizer = DatasetNormalizer(self.event_bus, threads)
        self.splitter = SplitGenerator(self.event_bus)
        self.extractor = FeatureExtractor(self.event_bus, threads)

        self._warnings: List[PipelineWarning] = []
        self._completed: List[str] = []
        self.event_bus.subscribe(WARNING, self._handle_warning)

    # -- layout ---------------------------------------------------------

    @property
    def workdir(self) -> Path:
        return self.config.paths.workdir

    @property
    def dataset_root(self) -> Path:
        root = self.config.paths.dataset_root
        return root if root is not None else self.workdir / "dataset"

    @property
    def curated_catalog_path(self) -> Path:
        """Deduplicated catalog when dedup has run, the raw catalog otherwise."""
        dedup = self.workdir / "catalog_dedup.jsonl"
        return dedup if dedup.exists() else self.workdir / "catalog.jsonl"

    def _image_path(self, record: ImageRecord) -> Path:
        normalized = self.workdir / "normalized"
        if normalized.is_dir():
            return output_path(normalized, record)
        return self.dataset_root / record.rel_path

    @contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        self.event_bus.publish(Event(STAGE_STARTED, data=name, source="CTVPipeline"))
        logger.info("stage %s started", name)
        with log_duration(logger, f"stage {name}"):
            yield
        self._completed.append(name)
        self.event_bus.publish(Event(STAGE_COMPLETED, data=name, source="CTVPipeline"))

    def _warn(self, code: str, message: str, stage: str, subject: Optional[str] = None):
        logger.warning(message)
        warning = PipelineWarning(code=code, message=message, stage=stage, subject=subject)
        self.event_bus.publish(Event(WARNING, data=warning, source="CTVPipeline"))

    def _handle_warning(self, event: Event):
        if isinstance(event.data, PipelineWarning):
            self._warnings.append(event.data)

    # -- stages ---------------------------------------------------------

    def synth(self) -> Path:
        """dataset/ and synth_catalog.jsonl from the configured (or default) synth spec."""
        with self._stage("synth"):
            spec = SynthSpec.from_json(self.config.synth_spec) if self.config.synth_spec else default_spec()
            generated = self.synthesizer.generate(spec, self.workdir / "dataset", overwrite=True)
            write_catalog(self.workdir / "synth_catalog.jsonl", generated.catalog)
            write_json(
                self.workdir / "synth_truth.json",
                {"outlier_teams": generated.outlier_teams, "planted_groups": generated.planted_groups},
            )
        return generated.root

    def catalog(self) -> Catalog:
        """catalog.jsonl, catalog_summary.json and distribution.csv from the dataset tree."""
        with self._stage("catalog"):
            label_map = load_label_map(self.config.label_map)
            catalog = self.scanner.scan_dataset(self.dataset_root, label_map)
            write_catalog(self.workdir / "catalog.jsonl", catalog)
            write_json(self.workdir / "catalog_summary.json", catalog_summary(catalog))
            emit_distribution_table(distribution_table(catalog), self.workdir / "distribution.csv")
        return catalog

    def dedup(self):
        """catalog_dedup.jsonl, dedup_report.csv and dedup_summary.json from catalog.jsonl."""
        with self._stage("dedup"):
            catalog = read_catalog(self.workdir / "catalog.jsonl")
            result = apply_dedup(catalog, self.config.near_duplicate_distance)
            write_catalog(self.workdir / "catalog_dedup.jsonl", result.retained)
            write_dedup_report(self.workdir / "dedup_report.csv", result)
            write_json(self.workdir / "dedup_summary.json", result.summary(raw_count=len(catalog)))
        return result

    def normalize(self):
        """normalized/ and normalize_report.json from catalog_dedup.jsonl."""
        with self._stage("normalize"):
            catalog = read_catalog(self.workdir / "catalog_dedup.jsonl")
            report = self.normalizer.process_dataset(
                catalog,
                self.dataset_root,
                self.workdir / "normalized",
                self.config.normalize.target,
                self.config.normalize.quality,
            )
            write_json(self.workdir / "normalize_report.json", report.to_dict())
        return report

    def split(self):
        """manifests/<protocol>_<team>.json for every requested protocol."""
        with self._stage("split"):
            catalog = read_catalog(self.curated_catalog_path)
            directory = self.workdir / "manifests"
            manifests = []
            for protocol in self.protocols:
                generate = self.splitter.toto_splits if protocol is Protocol.TOTO else self.splitter.loto_splits
                manifests.extend(generate(catalog, self.config.split.train_frac, self.config.split.seed))
                _clear(directory, f"{protocol.value.lower()}_*.json")
            for manifest in manifests:
                write_manifest(directory, manifest)
        return manifests

    def train(self) -> Dict[str, LearningCurve]:
        """features.npz plus models/, curves/ and predictions/ for every manifest."""
        with self._stage("train"):
            catalog = read_catalog(self.curated_catalog_path)
            manifests = [m for m in read_manifests(self.workdir / "manifests") if m.protocol in self.protocols]
            if not manifests:
                raise ArtifactError(f"no manifests for {self._protocol_names()} under {self.workdir / 'manifests'}")
            features = self.extractor.extract(catalog, self._image_path)
            features.save(self.workdir / "features.npz")
            for protocol in self.protocols:
                prefix = protocol.value.lower()
                for sub, pattern in (("models", "json"), ("curves", "csv"), ("predictions", "csv")):
                    _clear(self.workdir / sub, f"{prefix}_*.{pattern}")
            curves = {}
            for manifest in manifests:
                stem = manifest.file_name[: -len(".json")]
                outcome = train(manifest, catalog, self.config.train, features, catalog.classes)
                write_model(self.workdir / "models" / f"{stem}.json", outcome.model.to_dict(self.config.train))
                write_rows_csv(
                    self.workdir / "curves" / f"{stem}.csv",
                    ["epoch", "train_acc", "val_acc", "test_acc"],
                    outcome.curve.rows(),
                )
                write_predictions(self.workdir / "predictions", outcome.val_predictions)
                write_predictions(self.workdir / "predictions", outcome.test_predictions)
                curves[stem] = outcome.curve
        return curves

    def evaluate(self, predictions_dir: Optional[Path] = None) -> Dict[Protocol, List[RunResult]]:
        """results/runs_<protocol>.json from prediction CSVs (ours or an external trainer's)."""
        with self._stage("eval"):
            catalog = read_catalog(self.curated_catalog_path)
            directory = Path(predictions_dir) if predictions_dir is not None else self.workdir / "predictions"
            if not directory.is_dir():
                raise ArtifactError(f"missing input artifact: {directory}")
            teams_by_safe_name = {safe_name(team): team for team in catalog.teams}
            files: Dict[tuple, Dict[Partition, Path]] = {}
            for path in sorted(directory.glob("*.csv")):
                protocol, safe_team, partition = parse_prediction_file_name(path.name)
                if protocol not in self.protocols:
                    continue
                if safe_team not in teams_by_safe_name:
                    raise ArtifactError(f"{path.name}: no catalog team matches {safe_team!r}")
                files.setdefault((protocol, teams_by_safe_name[safe_team]), {})[partition] = path
            if not files:
                raise ArtifactError(f"no {self._protocol_names()} prediction files in {directory}")

            results: Dict[Protocol, List[RunResult]] = {}
            for (protocol, team), parts in sorted(files.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
                missing = [p.value for p in Partition if p not in parts]
                if missing:
                    raise ArtifactError(f"{protocol.value} {team}: missing {', '.join(missing)} predictions")
                stem = f"{protocol.value.lower()}_{safe_name(team)}"
                manifest = read_manifest(self.workdir / "manifests" / f"{stem}.json")
                val = read_predictions(parts[Partition.VAL], ManifestRef(protocol, team, Partition.VAL))
                test = read_predictions(parts[Partition.TEST], ManifestRef(protocol, team, Partition.TEST))
                val.check_against(manifest, catalog)
                test.check_against(manifest, catalog)
                if not val.items:
                    self._warn(
                        "empty_val",
                        f"{protocol.value} {team}: no validation predictions, fold not scored",
                        "eval",
                        team,
                    )
                    continue
                results.setdefault(protocol, []).append(run_result(val, test, catalog))
            for protocol, runs in results.items():
                path = self.workdir / "results" / f"runs_{protocol.value.lower()}.json"
                write_json(path, [r.to_dict() for r in runs])
                logger.info("%s: evaluated %d folds", protocol.value, len(runs))
        return results

    def report(self) -> Path:
        """Result tables, TOTO matrix, aggregate curves and the protocol comparison under reports/."""
        out = self.config.paths.reports_dir
        with self._stage("report"):
            runs = self.load_runs()
            if not runs:
                raise ArtifactError(f"no run results under {self.workdir / 'results'}")
            for protocol, protocol_runs in runs.items():
                name = protocol.value.lower()
                emit_results_table(protocol_runs, out / f"results_{name}.csv", "csv")
                emit_results_table(protocol_runs, out / f"results_{name}.json", "json")
                curve_files = sorted((self.workdir / "curves").glob(f"{name}_*.csv"))
                if curve_files:
                    curves = [LearningCurve.from_rows(read_rows_csv(p)) for p in curve_files]
                    emit_curves(curves, out / f"curves_{name}.csv")
                if protocol is Protocol.TOTO and len(protocol_runs) >= 2:
                    matrix = build_matrix(protocol_runs)
                    emit_matrix_svg(matrix, out / "toto_matrix.svg")
                    emit_matrix_csv(matrix, out / "toto_matrix.csv")
            if Protocol.TOTO in runs and Protocol.LOTO in runs:
                emit_comparison(compare_protocols(runs[Protocol.TOTO], runs[Protocol.LOTO]), out / "comparison.json")
            catalog_path = self.curated_catalog_path
            if catalog_path.exists():
                emit_distribution_table(distribution_table(read_catalog(catalog_path)), out / "distribution.csv")
        return out

    def run_all(self) -> Path:
        """Every stage in order; synthesizes a dataset when no dataset_root is configured."""
        if self.config.paths.dataset_root is None:
            self.synth()
        self.catalog()
        self.dedup()
        self.normalize()
        self.split()
        self.train()
        self.evaluate()
        return self.report()

    # -- queries --------------------------------------------------------

    def load_runs(self) -> Dict[Protocol, List[RunResult]]:
        runs = {}
        for protocol in self.protocols:
            path = self.workdir / "results" / f"runs_{protocol.value.lower()}.json"
            if path.exists():
                data = read_json(path)
                if not isinstance(data, list):
                    raise ArtifactError(f"{path}: expected a list of run results")
                runs[protocol] = [RunResult.from_dict(d) for d in data]
        return runs

    def load_features(self) -> FeatureStore:
        return FeatureStore.load(self.workdir / "features.npz")

    def _protocol_names(self) -> str:
        return "/".join(p.value for p in self.protocols)

    def get_warnings(self, clear: bool = False) -> List[PipelineWarning]:
        """Get collected data warnings, optionally clearing them."""
        warnings = self._warnings.copy()
        if clear:
            self._warnings.clear()
        return warnings

    def get_status(self) -> Dict[str, Any]:
        """Get comprehensive pipeline status."""
        return {
            "workdir": str(self.workdir),
            "protocols": [p.value for p in self.protocols],
            "completed_stages": list(self._completed),
            "warning_count": len(self._warnings),
            "stages": {
                "synth": self.synthesizer.get_status(),
                "catalog": self.scanner.get_status(),
                "normalize": self.normalizer.get_status(),
                "split": self.splitter.get_status(),
                "train": self.extractor.get_status(),
            },
        }


def _clear(directory: Path, pattern: str):
    if directory.is_dir():
        for stale in directory.glob(pattern):
            stale.unlink()
