"""
Result tables, cross-team heatmaps and aggregate learning curves.

Percentages are written with two decimals. Nothing emitted here carries a
timestamp, so re-emitting from the same inputs gives identical bytes.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np
from matplotlib import colormaps, rc_context
from matplotlib.colors import Normalize, to_hex
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from ..core.artifacts import write_json, write_rows_csv
from ..core.errors import MetricError
from ..core.models import CrossTeamMatrix, RunResult, TeamId
from ..utils.logging import get_logger
from .baseline import LearningCurve
from .catalog import DistributionTable
from .metrics import ProtocolComparison, aggregate

logger = get_logger(__name__)

PathLike = Union[str, Path]

# sequential, light for low accuracy and dark for high
HEATMAP_CMAP = "YlGnBu"
SVG_RC = {"svg.hashsalt": "ctvbench", "svg.fonttype": "none"}
NUMERIC_COLUMNS = ("val_acc", "test_acc", "vtg")


def fmt2(value: float) -> str:
    return f"{value:.2f}"


@dataclass(frozen=True)
class ResultRow:
    team: TeamId
    val_acc: float
    test_acc: float
    vtg: float


@dataclass
class ResultsTable:
    """Per-team rows in percent plus Mean/Std footers."""

    rows: List[ResultRow]

    @classmethod
    def from_runs(cls, runs: Sequence[RunResult]) -> "ResultsTable":
        if not runs:
            raise MetricError("cannot build a results table from zero runs")
        return cls([
            ResultRow(r.focal_team, 100.0 * r.val_acc, 100.0 * r.pooled_test_acc, r.vtg) for r in runs
        ])

    def footer(self) -> Dict[str, Dict[str, float]]:
        mean: Dict[str, float] = {}
        std: Dict[str, float] = {}
        for column in NUMERIC_COLUMNS:
            mean[column], std[column] = aggregate(getattr(row, column) for row in self.rows)
        return {"Mean": mean, "Std": std}


def emit_results_table(runs: Sequence[RunResult], path: PathLike, fmt: str = "csv") -> Path:
    """Write team, val_acc, test_acc, vtg rows followed by Mean and Std."""
    table = ResultsTable.from_runs(runs)
    footer = table.footer()
    if fmt == "csv":
        body = [[row.team] + [fmt2(getattr(row, c)) for c in NUMERIC_COLUMNS] for row in table.rows]
        body += [[name] + [fmt2(stats[c]) for c in NUMERIC_COLUMNS] for name, stats in footer.items()]
        return write_rows_csv(path, ["team", *NUMERIC_COLUMNS], body)
    if fmt == "json":
        payload = {
            "rows": [
                {"team": row.team, **{c: round(getattr(row, c), 2) for c in NUMERIC_COLUMNS}} for row in table.rows
            ],
            "mean": {c: round(v, 2) for c, v in footer["Mean"].items()},
            "std": {c: round(v, 2) for c, v in footer["Std"].items()},
        }
        return write_json(path, payload)
    raise ValueError(f"unsupported table format {fmt!r}")


def cell_colors(matrix: CrossTeamMatrix) -> List[List[str]]:
    """Hex fill per cell on a linear scale anchored to the matrix min and max."""
    values = np.asarray(matrix.values, dtype=np.float64)
    norm = Normalize(vmin=float(values.min()), vmax=float(values.max()))
    cmap = colormaps[HEATMAP_CMAP]
    return [[to_hex(cmap(float(norm(v)))) for v in row] for row in values]


def _text_color(fill: str) -> str:
    r, g, b = (int(fill[i:i + 2], 16) / 255.0 for i in (1, 3, 5))
    return "white" if 0.299 * r + 0.587 * g + 0.114 * b < 0.5 else "black"


def emit_matrix_svg(matrix: CrossTeamMatrix, path: PathLike) -> Path:
    """
    Heatmap of a cross-team matrix as a standalone SVG.

    Each cell is a rectangle with id cell-<row>-<col> and its value (percent)
    written inside; rows are training teams, columns test teams.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = matrix.size
    colors = cell_colors(matrix)
    side = max(3.0, 0.6 * n + 1.5)
    with rc_context(SVG_RC):
        fig = Figure(figsize=(side, side))
        ax = fig.add_subplot()
        for i in range(n):
            for j in range(n):
                fill = colors[i][j]
                ax.add_patch(Rectangle((j, i), 1, 1, facecolor=fill, edgecolor="white", gid=f"cell-{i}-{j}"))
                ax.text(j + 0.5, i + 0.5, fmt2(100.0 * matrix.values[i][j]),
                        ha="center", va="center", fontsize=6, color=_text_color(fill))
        ax.set_xlim(0, n)
        ax.set_ylim(n, 0)
        ax.set_xticks([k + 0.5 for k in range(n)])
        ax.set_yticks([k + 0.5 for k in range(n)])
        ax.set_xticklabels(matrix.teams, rotation=45, ha="right", rotation_mode="anchor")
        ax.set_yticklabels(matrix.teams)
        ax.set_xlabel("test team")
        ax.set_ylabel("training team")
        ax.set_aspect("equal")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("wrote %dx%d heatmap to %s", n, n, path)
    return path


def emit_matrix_csv(matrix: CrossTeamMatrix, path: PathLike) -> Path:
    body = [[team] + [fmt2(100.0 * v) for v in row] for team, row in zip(matrix.teams, matrix.values)]
    return write_rows_csv(path, ["train_team", *matrix.teams], body)


def curve_statistics(curves: Sequence[LearningCurve]) -> Dict[str, List[tuple]]:
    """Per-epoch (mean, std) of each accuracy column across folds, in percent."""
    if not curves:
        raise MetricError("no learning curves to aggregate")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise MetricError(f"learning curves differ in length: {sorted(lengths)}")
    epochs = lengths.pop()
    stats: Dict[str, List[tuple]] = {}
    for column in ("train_acc", "val_acc", "test_acc"):
        per_fold = [c.column(column) for c in curves]
        stats[column] = [aggregate(100.0 * fold[e] for fold in per_fold) for e in range(epochs)]
    return stats


def emit_curves(curves: Union[Sequence[LearningCurve], Mapping[str, LearningCurve]], path: PathLike) -> Path:
    """Aggregate curve CSV: epoch then mean/std for train, val and test."""
    folds = [curves[k] for k in sorted(curves)] if isinstance(curves, Mapping) else list(curves)
    stats = curve_statistics(folds)
    header = ["epoch"]
    for column in ("train", "val", "test"):
        header += [f"{column}_mean", f"{column}_std"]
    body = []
    for e, record in enumerate(folds[0].epochs):
        row: List[str] = [str(record.epoch)]
        for column in ("train_acc", "val_acc", "test_acc"):
            mean, std = stats[column][e]
            row += [fmt2(mean), fmt2(std)]
        body.append(row)
    return write_rows_csv(path, header, body)


def emit_distribution_table(table: DistributionTable, path: PathLike) -> Path:
    return write_rows_csv(path, ["team", *table.classes, "total"], table.rows())


def emit_comparison(comparison: ProtocolComparison, path: PathLike) -> Path:
    return write_json(path, comparison.to_dict())
