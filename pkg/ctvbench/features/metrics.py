"""
Accuracy, validation-test gap, cross-team matrices and summary statistics.

Accuracies are fractions; vtg() and the aggregates over result tables work
in percentage points like the published tables.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..core.errors import MetricError
from ..core.models import (
    Catalog,
    CrossTeamMatrix,
    ManifestRef,
    Prediction,
    PredictionSet,
    Protocol,
    RunResult,
    TeamId,
)
from ..utils.validation import validate_percent

REFERENCE_DIR = Path(__file__).resolve().parent.parent / "data"

Predictions = Union[PredictionSet, Sequence[Prediction]]


def _items(preds: Predictions) -> Sequence[Prediction]:
    return preds.items if isinstance(preds, PredictionSet) else preds


def accuracy(preds: Predictions) -> float:
    """Fraction of items whose prediction equals the true label."""
    items = _items(preds)
    if not items:
        raise MetricError("accuracy is undefined for an empty prediction set")
    return sum(1 for p in items if p.true == p.predicted) / len(items)


def vtg(val_acc: float, test_acc: float) -> float:
    """Validation-test gap in percentage points (inputs in percent)."""
    return val_acc - test_acc


def split_by_team(preds: PredictionSet, catalog: Catalog) -> Dict[TeamId, PredictionSet]:
    """Group a prediction set by the team each image belongs to."""
    grouped: Dict[TeamId, List[Prediction]] = {}
    for item in preds.items:
        grouped.setdefault(catalog.get(item.image_id).team, []).append(item)
    return {team: PredictionSet(preds.manifest_ref, items) for team, items in sorted(grouped.items())}


def pooled_and_macro_test(per_team: Mapping[TeamId, Predictions]) -> Tuple[float, float]:
    """Pooled accuracy over all items and the unweighted mean of per-team accuracies."""
    if not per_team:
        raise MetricError("need predictions for at least one test team")
    pooled_items = [p for team in sorted(per_team) for p in _items(per_team[team])]
    pooled = accuracy(pooled_items)
    macro = float(np.mean([accuracy(per_team[team]) for team in sorted(per_team)]))
    return pooled, macro


def run_result(val_preds: PredictionSet, test_preds: PredictionSet, catalog: Catalog) -> RunResult:
    """Assemble a RunResult from a fold's validation and test predictions."""
    ref: ManifestRef = test_preds.manifest_ref
    per_team = split_by_team(test_preds, catalog)
    pooled, macro = pooled_and_macro_test(per_team)
    return RunResult(
        protocol=ref.protocol,
        focal_team=ref.focal_team,
        val_acc=accuracy(val_preds),
        per_team_test_acc={team: accuracy(p) for team, p in per_team.items()},
        pooled_test_acc=pooled,
        macro_test_acc=macro,
    )


def build_matrix(runs: Sequence[RunResult]) -> CrossTeamMatrix:
    """
    Cross-team matrix from TOTO runs, in the order given.

    Off-diagonal (i, j) is run i's accuracy on team j; the diagonal holds run
    i's validation accuracy.
    """
    teams = [run.focal_team for run in runs]
    values = []
    for i, run in enumerate(runs):
        row = []
        for j, team in enumerate(teams):
            if i == j:
                row.append(run.val_acc)
                continue
            if team not in run.per_team_test_acc:
                raise MetricError(f"matrix cell ({i}, {j}) missing: run {run.focal_team} has no accuracy on {team}")
            row.append(run.per_team_test_acc[team])
        values.append(row)
    return CrossTeamMatrix(teams=teams, values=values)


def _off_diagonal(matrix: CrossTeamMatrix) -> np.ndarray:
    values = np.asarray(matrix.values, dtype=np.float64)
    return values[~np.eye(matrix.size, dtype=bool)]


def transfer_means(matrix: CrossTeamMatrix) -> Tuple[List[float], List[float]]:
    """Row and column means with the diagonal excluded."""
    n = matrix.size
    if n < 2:
        raise MetricError("transfer means need at least 2 teams")
    values = np.asarray(matrix.values, dtype=np.float64)
    mask = ~np.eye(n, dtype=bool)
    row_means = [float(values[i, mask[i]].mean()) for i in range(n)]
    col_means = [float(values[mask[:, j], j].mean()) for j in range(n)]
    return row_means, col_means


def matrix_range(matrix: CrossTeamMatrix) -> Tuple[float, float]:
    """Smallest and largest off-diagonal entry."""
    off = _off_diagonal(matrix)
    if off.size == 0:
        raise MetricError("matrix has no off-diagonal entries")
    return float(off.min()), float(off.max())


def flatten_matrix(matrix: CrossTeamMatrix) -> List[float]:
    """All n*n entries row-major, diagonal included."""
    return [v for row in matrix.values for v in row]


def _pair(xs: Sequence[float], ys: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise MetricError("correlation needs at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricError("correlation is undefined for a constant vector")
    return x, y


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation."""
    x, y = _pair(xs, ys)
    return float(np.clip(stats.pearsonr(x, y)[0], -1.0, 1.0))


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation: average ranks for ties, then Pearson on the ranks."""
    x, y = _pair(xs, ys)
    return pearson(stats.rankdata(x, method="average"), stats.rankdata(y, method="average"))


def aggregate(values: Iterable[float], ddof: int = 0) -> Tuple[float, float]:
    """
    Mean and standard deviation (population by default).

    The published LOTO table prints sample deviations; pass ddof=1 to
    reproduce it.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size <= ddof:
        raise MetricError(f"cannot aggregate {arr.size} values with ddof={ddof}")
    return float(arr.mean()), float(arr.std(ddof=ddof))


def rank_teams(runs: Sequence[RunResult]) -> List[TeamId]:
    """Focal teams by pooled test accuracy, best first (ties by name)."""
    return [r.focal_team for r in sorted(runs, key=lambda r: (-r.pooled_test_acc, r.focal_team))]


def filter_runs(runs: Sequence[RunResult], exclude_teams: Optional[Iterable[TeamId]] = None) -> List[RunResult]:
    excluded = set(exclude_teams or ())
    return [r for r in runs if r.focal_team not in excluded]


@dataclass
class ProtocolComparison:
    """TOTO vs LOTO summary in percentage points."""

    toto_test_mean: float
    toto_test_std: float
    toto_vtg_mean: float
    loto_test_mean: float
    loto_test_std: float
    loto_vtg_mean: float

    @property
    def test_gain(self) -> float:
        return self.loto_test_mean - self.toto_test_mean

    @property
    def vtg_reduction_percent(self) -> float:
        if self.toto_vtg_mean == 0:
            return 0.0
        return 100.0 * (1.0 - self.loto_vtg_mean / self.toto_vtg_mean)

    @property
    def std_reduction_percent(self) -> float:
        if self.toto_test_std == 0:
            return 0.0
        return 100.0 * (1.0 - self.loto_test_std / self.toto_test_std)

    def to_dict(self) -> Dict[str, float]:
        return {
            "toto_test_mean": round(self.toto_test_mean, 2),
            "toto_test_std": round(self.toto_test_std, 2),
            "toto_vtg_mean": round(self.toto_vtg_mean, 2),
            "loto_test_mean": round(self.loto_test_mean, 2),
            "loto_test_std": round(self.loto_test_std, 2),
            "loto_vtg_mean": round(self.loto_vtg_mean, 2),
            "test_gain_points": round(self.test_gain, 2),
            "vtg_reduction_percent": round(self.vtg_reduction_percent, 2),
            "test_std_reduction_percent": round(self.std_reduction_percent, 2),
        }


def compare_protocols(
    toto_runs: Sequence[RunResult],
    loto_runs: Sequence[RunResult],
    exclude_teams: Optional[Iterable[TeamId]] = None,
) -> ProtocolComparison:
    """Mean/std of test accuracy and mean VTG under both protocols."""
    toto = filter_runs(toto_runs, exclude_teams)
    loto = filter_runs(loto_runs, exclude_teams)
    toto_mean, toto_std = aggregate(100.0 * r.pooled_test_acc for r in toto)
    loto_mean, loto_std = aggregate(100.0 * r.pooled_test_acc for r in loto)
    return ProtocolComparison(
        toto_test_mean=toto_mean,
        toto_test_std=toto_std,
        toto_vtg_mean=aggregate(r.vtg for r in toto)[0],
        loto_test_mean=loto_mean,
        loto_test_std=loto_std,
        loto_vtg_mean=aggregate(r.vtg for r in loto)[0],
    )


@dataclass(frozen=True)
class ReferenceRow:
    """One published result row, in percent."""

    team: TeamId
    architecture: str
    val_acc: float
    test_acc: float
    printed_vtg: float

    def to_run_result(self, protocol: Protocol) -> RunResult:
        return RunResult(
            protocol=protocol,
            focal_team=self.team,
            val_acc=self.val_acc / 100.0,
            per_team_test_acc={},
            pooled_test_acc=self.test_acc / 100.0,
            macro_test_acc=self.test_acc / 100.0,
        )


def load_reference_table(name: str) -> Dict[str, List[ReferenceRow]]:
    """
    Load a shipped result table ("toto" or "loto") grouped by architecture.

    Rows keep the published order.
    """
    path = REFERENCE_DIR / f"{name.lower()}_reference.csv"
    if not path.exists():
        raise MetricError(f"no reference table named {name!r}")
    tables: Dict[str, List[ReferenceRow]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            val_acc, test_acc = float(row["val_acc"]), float(row["test_acc"])
            if not (validate_percent(val_acc) and validate_percent(test_acc)):
                raise MetricError(f"{path}: {row['team']} accuracies must lie in [0, 100]")
            tables.setdefault(row["architecture"], []).append(
                ReferenceRow(
                    team=row["team"],
                    architecture=row["architecture"],
                    val_acc=val_acc,
                    test_acc=test_acc,
                    printed_vtg=float(row["vtg"]),
                )
            )
    return tables
