"""
CSV ingestion and export. Files are read as UTF-8 with a header row and RFC 4180 quoting; every cell is
read as text first so that missing tokens and parse failures can be reported with their line number.
"""

import logging
import os
import re
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from ..Core.Model import Dataset
from ..Utils.Config import RoleConfig
from ..Utils.Errors import ConfigurationError, FullyObservedViolation, ParseError

logger = logging.getLogger(__name__)

INTERCEPT_NAME = "const"


def _parse_column(frame: pd.DataFrame, column: str, tokens: set) -> np.ma.MaskedArray:
    raw = frame[column].astype(str).str.strip()
    missing = raw.isin(tokens).to_numpy()
    values = pd.to_numeric(raw.where(~raw.isin(tokens)), errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~missing & ~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        # Header is line 1.
        raise ParseError(line=i + 2, column=column, value=frame[column].iloc[i])
    return np.ma.MaskedArray(np.where(missing, np.nan, values), mask=missing)


def _dense(frame: pd.DataFrame, columns, tokens: set) -> np.ndarray:
    out = np.empty((len(frame), len(columns)))
    for j, column in enumerate(columns):
        parsed = _parse_column(frame, column, tokens)
        if np.ma.getmaskarray(parsed).any():
            line = int(np.flatnonzero(np.ma.getmaskarray(parsed))[0]) + 2
            raise FullyObservedViolation(f"Column '{column}' is missing a value on line {line}; "
                                         "instruments and covariates must be fully observed.")
        out[:, j] = parsed.data
    return out


_PANDAS_LINE = re.compile(r"line (\d+)")


def _first_undecodable_line(csv_path: str) -> int:
    with open(csv_path, "rb") as f:
        for number, raw in enumerate(f, start=1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return number
    return 1


def _read_frame(csv_path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    except UnicodeDecodeError:
        line = _first_undecodable_line(csv_path)
        raise ParseError(line=line, message=f"Line {line} of '{csv_path}' is not valid UTF-8.") from None
    except pd.errors.EmptyDataError:
        raise ParseError(line=1, message=f"'{csv_path}' is empty; a header row is required.") from None
    except pd.errors.ParserError as e:
        found = _PANDAS_LINE.search(str(e))
        line = int(found.group(1)) if found else 0
        raise ParseError(line=line, message=f"Malformed CSV in '{csv_path}': {e}") from None


def ingest(csv_path: Union[str, os.PathLike], roles: RoleConfig) -> Dataset:
    """
    Loads a CSV file into a Dataset.

    Args:
        csv_path: Path of the UTF-8 CSV file.
        roles: Column roles, missing-value tokens and treatment type.

    Raises:
        ParseError: A non-missing cell is not a number, or the file is not well-formed UTF-8 CSV.
        FullyObservedViolation: An instrument or covariate cell is missing.
        ConfigurationError: A role names a column that is not in the file, or a binary/discrete treatment
            takes a value outside its support.
    """
    csv_path = os.fspath(csv_path)
    if not os.path.isfile(csv_path):
        raise ConfigurationError(f"Data file '{csv_path}' does not exist.")
    frame = _read_frame(csv_path)
    frame.columns = [str(c).strip() for c in frame.columns]
    needed = [roles.outcome, roles.treatment, *roles.instruments, *roles.covariates]
    absent = [c for c in needed if c not in frame.columns]
    if absent:
        raise ConfigurationError(f"Columns {absent} are not in '{csv_path}' (found {list(frame.columns)}).")
    tokens = set(roles.missing_tokens)

    y = _parse_column(frame, roles.outcome, tokens)
    d = _parse_column(frame, roles.treatment, tokens)
    support = roles.d_support
    if support is not None:
        observed = d.compressed()
        outside = sorted(set(observed[~np.isin(observed, support)].tolist()))
        if outside:
            raise ConfigurationError(
                f"Treatment '{roles.treatment}' is declared {roles.treatment_type} with support {support} "
                f"but takes values {outside[:5]}."
            )

    instruments = _dense(frame, roles.instruments, tokens)
    covariates = _dense(frame, roles.covariates, tokens)
    z_parts: List[np.ndarray] = [instruments]
    z_names = list(roles.instruments)
    x_parts: List[np.ndarray] = [covariates]
    x_names = list(roles.covariates)
    if roles.covariates_as_instruments and roles.covariates:
        z_parts.append(covariates)
        z_names += list(roles.covariates)
    if roles.add_intercept:
        ones = np.ones((len(frame), 1))
        z_parts.insert(0, ones)
        z_names.insert(0, INTERCEPT_NAME)
        x_parts.insert(0, ones)
        x_names.insert(0, INTERCEPT_NAME)

    dataset = Dataset.from_arrays(
        z=np.hstack(z_parts), x=np.hstack(x_parts), d=d, y=y,
        z_names=z_names, x_names=x_names, d_name=roles.treatment, y_name=roles.outcome,
    )
    logger.info(f"Loaded {dataset.n} rows from '{csv_path}'.")
    return dataset


def export_csv(dataset: Dataset, path: Union[str, os.PathLike], roles: RoleConfig) -> None:
    """Writes the dataset back in the column layout `roles` describes; missing cells use the first token."""
    token = roles.missing_tokens[0] if roles.missing_tokens else ""
    columns: Dict[str, object] = {}

    def as_text(values: np.ma.MaskedArray) -> List[str]:
        mask = np.ma.getmaskarray(values)
        return [token if m else repr(float(v)) for v, m in zip(values.data, mask)]

    columns[roles.outcome] = as_text(dataset.y)
    columns[roles.treatment] = as_text(dataset.d)
    for name in roles.instruments:
        columns[name] = [repr(float(v)) for v in dataset.z[:, dataset.z_names.index(name)]]
    for name in roles.covariates:
        columns[name] = [repr(float(v)) for v in dataset.x[:, dataset.x_names.index(name)]]
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    pd.DataFrame(columns).to_csv(path, index=False, encoding="utf-8")
