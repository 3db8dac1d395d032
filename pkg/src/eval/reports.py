"""
Report tables: per-method comparison rows, multi-seed variance and data-scaling curves.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.core.errors import SeedFailureError
from src.eval.benchmark import RuntimeStats
from src.eval.metrics import ThreewayReport

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "method", "threeway_epe", "fg_dynamic", "fg_static", "bg", "runtime_ms_mean", "runtime_ms_std",
]
METRIC_COLUMNS = ["threeway_epe", "fg_dynamic", "fg_static", "bg"]


def report_row(method: str, report: ThreewayReport, runtime: Optional[RuntimeStats] = None) -> Dict:
    row = {"method": method, **report.as_row()}
    row["runtime_ms_mean"] = runtime.mean_ms if runtime else math.nan
    row["runtime_ms_std"] = runtime.std_ms if runtime else math.nan
    return row


def report_table(rows: Sequence[Dict], sort: bool = False) -> pd.DataFrame:
    table = pd.DataFrame(list(rows), columns=REPORT_COLUMNS)
    if sort:
        table = table.sort_values(["threeway_epe", "method"], kind="mergesort").reset_index(drop=True)
    return table


def write_report(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a report CSV; missing values are left blank."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.6f", na_rep="")
    return path


@dataclass
class VarianceResult:
    table: pd.DataFrame
    spread: float

    @property
    def mean_row(self) -> pd.Series:
        return self.table.iloc[-1]


def variance_report(train_fn: Callable[[int], ThreewayReport], seeds: Sequence[int]) -> VarianceResult:
    """
    Train and evaluate once per seed; one row per seed plus a final ``mean`` row.

    Args:
        train_fn: Trains from scratch with the given seed and returns its evaluation
        seeds: At least two seeds (repeats allowed)

    Raises:
        SeedFailureError: naming the first seed whose training failed
    """
    if len(seeds) < 2:
        raise ValueError(f"variance_report needs at least 2 seeds, got {len(seeds)}")
    rows = []
    for seed in seeds:
        logger.info("Variance run for seed %d", seed)
        try:
            report = train_fn(seed)
        except Exception as exc:
            raise SeedFailureError(seed, str(exc)) from exc
        rows.append({"seed": str(seed), **report.as_row()})
    per_seed = pd.DataFrame(rows, columns=["seed"] + METRIC_COLUMNS)
    mean = {"seed": "mean", **{c: float(per_seed[c].mean()) for c in METRIC_COLUMNS}}
    table = pd.concat([per_seed, pd.DataFrame([mean])], ignore_index=True)
    spread = float(per_seed["threeway_epe"].max() - per_seed["threeway_epe"].min())
    logger.info("Threeway EPE spread across %d seeds: %.5f", len(seeds), spread)
    return VarianceResult(table=table, spread=spread)


def subset_size(total: int, fraction: float) -> int:
    """Number of leading training pairs kept for ``fraction``."""
    size = int(math.floor(total * fraction + 1e-9))
    if size < 1:
        raise ValueError(f"fraction {fraction} of {total} pairs is an empty subset")
    return size


def _check_fractions(fractions: Sequence[float]) -> None:
    if not fractions:
        raise ValueError("at least one fraction is required")
    if any(not 0 < f <= 1 for f in fractions):
        raise ValueError(f"fractions must lie in (0, 1], got {list(fractions)}")
    if list(fractions) != sorted(fractions):
        raise ValueError(f"fractions must be sorted, got {list(fractions)}")


def scaling_curve(fractions: Sequence[float], evaluate_fraction: Callable[[float], ThreewayReport]) -> pd.DataFrame:
    """
    One row per training-data fraction.

    ``evaluate_fraction`` trains on the leading ``fraction`` of the training pairs and
    evaluates on a fixed held-out split.
    """
    _check_fractions(fractions)
    rows = []
    for fraction in fractions:
        logger.info("Scaling point: %.3f of the training data", fraction)
        rows.append({"fraction": fraction, **evaluate_fraction(fraction).as_row()})
    return pd.DataFrame(rows, columns=["fraction"] + METRIC_COLUMNS)


def loglog_slope(curve: pd.DataFrame, column: str = "threeway_epe") -> float:
    """Least-squares slope of log(metric) against log(fraction)."""
    if len(curve) < 2:
        raise ValueError("a log-log fit needs at least two points")
    slope, _ = np.polyfit(np.log(curve["fraction"].to_numpy()), np.log(curve[column].to_numpy()), 1)
    return float(slope)


def non_increasing_within(curve: pd.DataFrame, tolerance: float = 0.1, column: str = "threeway_epe") -> bool:
    """True when each point is at most ``1 + tolerance`` times its predecessor."""
    values = curve[column].to_numpy()
    return bool(np.all(values[1:] <= values[:-1] * (1.0 + tolerance)))

