import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.app.core.errors import InputError

logger = logging.getLogger(__name__)

CV_COLUMNS = ["Mean-MSE", "Std-MSE", "Mean-MAE", "Std-MAE", "Mean-Time", "Std-Time"]
TIME_COLUMNS = ("seconds", "correction_seconds", "Mean-Time", "Std-Time", "LA-Time", "sDA-Time")


class ResultTable:
    """
    Named rows of finite numbers with unique labels. Rows that failed are
    kept apart with their error message and written with a `status` column.
    """

    def __init__(self, name: str, columns: Sequence[str], index_name: str = "row"):
        if len(set(columns)) != len(columns):
            raise InputError(f"{name}: duplicate column labels {list(columns)}")
        self.name = name
        self.columns = list(columns)
        self.index_name = index_name
        self._rows: Dict[str, Dict[str, float]] = {}
        self.failures: Dict[str, str] = {}

    def __len__(self) -> int:
        return len(self._rows) + len(self.failures)

    @property
    def labels(self) -> List[str]:
        return list(self._rows)

    def _check_label(self, label: str) -> None:
        if label in self._rows or label in self.failures:
            raise InputError(f"{self.name}: row '{label}' already exists")

    def add_row(self, label: str, values: Dict[str, float]) -> None:
        self._check_label(label)
        missing = [c for c in self.columns if c not in values]
        if missing:
            raise InputError(f"{self.name}: row '{label}' lacks columns {missing}")
        row = {c: float(values[c]) for c in self.columns}
        bad = [c for c, v in row.items() if not np.isfinite(v)]
        if bad:
            raise InputError(f"{self.name}: row '{label}' has non-finite cells {bad}")
        self._rows[label] = row

    def add_failure(self, label: str, message: str) -> None:
        self._check_label(label)
        self.failures[label] = message
        logger.error(f"❌ [{self.name}] {label} failed: {message}")

    def row(self, label: str) -> Dict[str, float]:
        return dict(self._rows[label])

    def values(self) -> pd.DataFrame:
        """Successful rows only, labels as index."""
        df = pd.DataFrame.from_dict(self._rows, orient="index", columns=self.columns)
        df.index.name = self.index_name
        return df

    def frame(self) -> pd.DataFrame:
        df = self.values()
        df["status"] = "ok"
        if self.failures:
            failed = pd.DataFrame(
                {**{c: [np.nan] * len(self.failures) for c in self.columns},
                 "status": [f"failed: {m}" for m in self.failures.values()]},
                index=pd.Index(list(self.failures), name=self.index_name),
            )
            df = pd.concat([df, failed])
        return df

    def best(self, metric: str = "Mean-MSE", tie_breakers: Iterable[str] = ("Std-MSE", "Mean-Time")) -> Optional[str]:
        """Lowest metric, ties broken by each tie-breaker in turn. None when every row failed."""
        if not self._rows:
            return None
        keys = [metric] + [c for c in tie_breakers if c in self.columns]
        return min(self._rows, key=lambda label: tuple(self._rows[label][k] for k in keys))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path, name: Optional[str] = None) -> "ResultTable":
        df = pd.read_csv(path, index_col=0)
        columns = [c for c in df.columns if c != "status"]
        table = cls(name or Path(path).stem, columns, index_name=df.index.name or "row")
        for label, row in df.iterrows():
            status = str(row.get("status", "ok"))
            if status == "ok":
                table.add_row(str(label), {c: row[c] for c in columns})
            else:
                table.add_failure(str(label), status.removeprefix("failed: "))
        return table


def drop_time_columns(df: pd.DataFrame) -> pd.DataFrame:
    """A copy without wall-clock columns, for run-to-run comparisons."""
    return df.drop(columns=[c for c in df.columns if c in TIME_COLUMNS])
