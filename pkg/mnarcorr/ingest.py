import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd

from mnarcorr.errors import InputReadError, InsufficientDataError, RoleError
from mnarcorr.model_core import Dataset, Roles

logger = logging.getLogger(__name__)

MISSING_MARKERS = ["", "NA", "NaN"]


def _read_header(path: Path) -> List[str]:
    header = pd.read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False, encoding="utf-8")
    return [str(name).strip() for name in header.iloc[0].tolist()]


def read_table(path: Path | str, target: str, partner: str, adjusters: Sequence[str] = ()) -> Dataset:
    """Load a comma-separated file with a header row into a ``Dataset``.

    Only the role columns are kept, in the order target, partner, adjusters.
    Empty cells and ``NA`` mark missing values.
    """

    path = Path(path)
    roles = [target, partner, *adjusters]
    if len(set(roles)) != len(roles):
        raise RoleError(f"Role columns must be distinct, got {', '.join(roles)}")

    try:
        header = _read_header(path)
        frame = pd.read_csv(
            path,
            na_values=MISSING_MARKERS,
            keep_default_na=False,
            encoding="utf-8",
            skipinitialspace=True,
            float_precision="round_trip",
        )
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputReadError(f"Could not read {path}: {exc}", path=str(path)) from exc

    duplicated = sorted({name for name in header if header.count(name) > 1})
    if duplicated:
        raise RoleError(f"Duplicate column names in {path}: {', '.join(duplicated)}")
    frame.columns = header
    missing = [name for name in roles if name not in frame.columns]
    if missing:
        raise RoleError(
            f"Columns not found in {path}: {', '.join(missing)}",
            available=list(frame.columns),
        )

    numeric = frame[roles]
    offending = [name for name in roles if not pd.api.types.is_numeric_dtype(numeric[name])]
    if offending:
        raise RoleError(f"Non-numeric values in column(s) {', '.join(offending)}", columns=offending)

    adjuster_gaps = numeric[list(adjusters)].isna().any(axis=1) if adjusters else pd.Series(False, index=numeric.index)
    gap_rows = int(adjuster_gaps.sum())
    if gap_rows:
        raise RoleError(
            f"{gap_rows} row(s) have missing adjuster values; adjusters must be fully observed",
            rows=gap_rows,
        )

    values = numeric.to_numpy(dtype=float)
    observed = ~np.isnan(values)
    if values.shape[0] <= len(roles):
        raise InsufficientDataError(
            f"{values.shape[0]} rows are too few for {len(roles)} variables",
            rows=values.shape[0],
        )
    logger.debug("read %d rows from %s", values.shape[0], path)
    return Dataset(
        values=values,
        observed=observed,
        roles=Roles(target=0, partner=1, adjusters=tuple(range(2, len(roles)))),
        columns=tuple(roles),
    )


def write_table(dataset: Dataset, path: Path | str) -> Path:
    """Write a dataset as CSV with empty cells where values are unobserved."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(dataset.columns) or [f"x{index + 1}" for index in range(dataset.p)]
    frame = pd.DataFrame(np.where(dataset.observed, dataset.values, np.nan), columns=columns)
    frame.to_csv(path, index=False, na_rep="")
    return path
