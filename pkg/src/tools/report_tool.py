"""
ReportTool - reading and summarizing the CSV tables the pipeline writes.

Handles evaluation reports, comparison tables, per-epoch training logs, scaling curves
and variance tables, and renders them as markdown (for terminal summaries) or JSON.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd

from src.eval.reports import METRIC_COLUMNS, REPORT_COLUMNS
from src.student.trainer import EPOCH_LOG_COLUMNS

logger = logging.getLogger(__name__)

TableKind = Literal["report", "epoch_log", "scaling", "variance"]


class ReportTool:
    """
    Tool for reading pipeline CSV tables.

    The tool can:
    - Detect which kind of table a CSV holds
    - Order rows the way each table kind is read (methods by Threeway EPE, epochs ascending)
    - Convert tables to markdown or JSON, with summary statistics on request
    """

    def __init__(self):
        self.name = "report_tool"
        self.description = "Read flowdistill CSV tables and format them for terminal or JSON output"

        # Column sets for table detection
        self.REPORT_KEY_COLUMNS = {"method", *METRIC_COLUMNS}
        self.EPOCH_LOG_KEY_COLUMNS = set(EPOCH_LOG_COLUMNS)
        self.SCALING_KEY_COLUMNS = {"fraction", *METRIC_COLUMNS}

    def read_table(self, file_path: Union[str, Path], max_rows: Optional[int] = None) -> pd.DataFrame:
        """
        Read a pipeline CSV.

        Args:
            file_path: Path to the CSV
            max_rows: Maximum number of rows to read (default: all)

        Returns:
            DataFrame; blank cells (empty buckets, missing runtimes) read as NaN

        Raises:
            FileNotFoundError: if the file does not exist
            ValueError: if the file is not a CSV table
        """
        path = Path(file_path)
        if not path.is_file():
            raise FileNotFoundError(f"report not found: {path}")
        try:
            return pd.read_csv(path, nrows=max_rows)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ValueError(f"Error reading table {path}: {e}") from e

    def detect_table_kind(self, df: pd.DataFrame) -> Optional[TableKind]:
        """
        Detect which pipeline table a DataFrame holds.

        Returns:
            'report', 'epoch_log', 'scaling', 'variance', or None if unknown
        """
        columns = set(df.columns)
        if self.EPOCH_LOG_KEY_COLUMNS.issubset(columns):
            return "epoch_log"
        if self.SCALING_KEY_COLUMNS.issubset(columns):
            return "scaling"
        if {"seed", *METRIC_COLUMNS}.issubset(columns):
            return "variance"
        if self.REPORT_KEY_COLUMNS.issubset(columns):
            return "report"
        return None

    def preprocess(self, df: pd.DataFrame, kind: Optional[TableKind] = None) -> pd.DataFrame:
        """Order rows for reading: reports by Threeway EPE, logs by epoch, curves by fraction."""
        kind = kind or self.detect_table_kind(df)
        df = df.copy()
        if kind == "report":
            df = df.sort_values(["threeway_epe", "method"], kind="mergesort")
            df = df[[c for c in REPORT_COLUMNS if c in df.columns]]
        elif kind == "epoch_log":
            df = df.sort_values("epoch", kind="mergesort")
        elif kind == "scaling":
            df = df.sort_values("fraction", kind="mergesort")
        return df.reset_index(drop=True)

    def format_as_markdown(self, df: pd.DataFrame, max_rows: Optional[int] = 100, include_stats: bool = False) -> str:
        """
        Convert a table to markdown.

        Args:
            df: Table to convert
            max_rows: Maximum rows to include (default: 100)
            include_stats: Append describe() statistics of the numeric columns

        Returns:
            Markdown-formatted string
        """
        output = []
        if max_rows and len(df) > max_rows:
            output.append(f"*Showing first {max_rows} rows out of {len(df)} total*")
            output.append("")
            df_shown = df.head(max_rows)
        else:
            df_shown = df
        # tabulate only substitutes missingval for None
        df_shown = df_shown.astype(object).where(df_shown.notna(), None)
        output.append(df_shown.to_markdown(index=False, floatfmt=".5f", missingval="n/a"))

        if include_stats:
            numeric_cols = df.select_dtypes(include=[np.number]).columns
            if len(numeric_cols) > 0:
                output.append("\n## Statistics")
                output.append(df[numeric_cols].describe().to_markdown(floatfmt=".5f"))
        return "\n".join(output)

    def format_as_json(self, df: pd.DataFrame, max_rows: Optional[int] = None) -> str:
        """Records-oriented JSON; NaN cells become null."""
        if max_rows:
            df = df.head(max_rows)
        df_clean = df.astype(object).where(df.notna(), None)
        return json.dumps(df_clean.to_dict(orient="records"), indent=2)

    def read_and_format(
        self,
        file_path: Union[str, Path],
        format: Literal["markdown", "json", "dict"] = "markdown",
        max_rows: Optional[int] = None,
        **format_kwargs,
    ) -> Union[str, List[Dict]]:
        """
        Read a pipeline CSV and return it in the requested format.

        Raises:
            ValueError: on an unsupported format
        """
        df = self.preprocess(self.read_table(file_path))
        if format == "markdown":
            return self.format_as_markdown(df, max_rows or 100, **format_kwargs)
        if format == "json":
            return self.format_as_json(df, max_rows)
        if format == "dict":
            return df.astype(object).where(df.notna(), None).to_dict(orient="records")
        raise ValueError(f"Unsupported format: {format}")


# Create singleton instance
report_tool = ReportTool()
